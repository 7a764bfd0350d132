//! Generated currents: blowup-sequence families, rotating books, bridged books, flat boundaries.

use openbook_core::geometry::OpenBook;
use openbook_core::math;
use openbook_core::measures::{
    sample_graph_over_book, DiscreteCurrent, GraphTerm, SampleLayout, SheetGraph,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Graphs over books by homogeneous harmonic data vanishing on the spine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlowupFamily {
    /// Two multiplicity-one sheets in `m = 2`, tilt plus quadratic and cubic terms.
    TwoSheets,
    /// A multiplicity-two sheet carrying `±` quadratic atoms next to a simple sheet.
    Multiplicity,
    /// Three sheets in `m = 3`.
    ThreeSheets,
}

impl BlowupFamily {
    pub const ALL: [BlowupFamily; 3] = [
        BlowupFamily::TwoSheets,
        BlowupFamily::Multiplicity,
        BlowupFamily::ThreeSheets,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlowupFamily::TwoSheets => "two_sheets",
            BlowupFamily::Multiplicity => "multiplicity",
            BlowupFamily::ThreeSheets => "three_sheets",
        }
    }

    /// The cone `C₀` the graphs are built over.
    pub fn book(self) -> OpenBook {
        match self {
            BlowupFamily::TwoSheets => OpenBook::planar(2, 2, &[(0.0, 1), (2.0, 1)]),
            BlowupFamily::Multiplicity => OpenBook::planar(2, 2, &[(0.0, 2), (2.2, 1)]),
            BlowupFamily::ThreeSheets => OpenBook::planar(3, 2, &[(0.0, 1), (2.0, 1), (4.1, 1)]),
        }
        .expect("family books are valid")
    }

    pub fn graph(self, amplitude: f64) -> SheetGraph {
        let c = self.book();
        let d = c.ambient_dim();
        let m = c.m();
        let extra = math::unit(d, d - 1);
        let term = |coeff: f64, degree: u32, direction: Vec<f64>| GraphTerm {
            coeff: coeff * amplitude,
            degree,
            direction,
        };
        let perp = |i: usize| in_plane_perp(&c, i, m);
        match self {
            BlowupFamily::TwoSheets => SheetGraph::uniform(
                &c,
                vec![
                    vec![term(0.5, 1, perp(0)), term(1.0, 2, extra.clone())],
                    vec![term(1.0, 2, perp(1)), term(0.5, 3, extra)],
                ],
            ),
            BlowupFamily::Multiplicity => SheetGraph {
                atoms: vec![
                    vec![
                        vec![term(1.0, 2, extra.clone())],
                        vec![term(-1.0, 2, extra)],
                    ],
                    vec![vec![term(1.0, 2, perp(1))]],
                ],
            },
            BlowupFamily::ThreeSheets => SheetGraph::uniform(
                &c,
                vec![
                    vec![term(1.0, 2, extra.clone())],
                    vec![term(1.0, 2, extra.clone()), term(0.5, 3, perp(1))],
                    vec![term(-1.0, 2, extra)],
                ],
            ),
        }
    }
}

/// `−sin θ e_m + cos θ e_{m+1}` for a planar book: normal to sheet `i`, inside the sheets' 2-plane.
fn in_plane_perp(c: &OpenBook, i: usize, m: usize) -> Vec<f64> {
    let nu = &c.sheets()[i].normal;
    let mut v = vec![0.0; nu.len()];
    v[m - 1] = -nu[m];
    v[m] = nu[m - 1];
    v
}

/// Samples the family graph at amplitude `a` in `B_r` with `count` base points.
pub fn blowup_current(
    family: BlowupFamily,
    amplitude: f64,
    r: f64,
    count: usize,
    seed: u64,
    layout: SampleLayout,
) -> Result<DiscreteCurrent> {
    let c = family.book();
    Ok(sample_graph_over_book(
        &c,
        &family.graph(amplitude),
        r,
        count,
        seed,
        layout,
    )?)
}

fn half_ball_point(rng: &mut ChaCha8Rng, m: usize, r: f64, stratum: (usize, usize)) -> Vec<f64> {
    let u = (stratum.0 as f64 + rng.random::<f64>()) / stratum.1 as f64;
    let rho = r * u.powf(1.0 / m as f64);
    loop {
        let mut v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        if math::normalize(&mut v) > 1e-12 {
            v[m - 1] = v[m - 1].abs();
            return math::scale(&v, rho);
        }
    }
}

/// A book whose sheet normals turn at rate `ω` along the first spine coordinate:
/// sheet `i` at spine coordinate `s` has normal `cos(θ_i + ωs) e_m + sin(θ_i + ωs) e_{m+1}`.
pub fn rotating_book(
    m: usize,
    n: usize,
    sheets: &[(f64, usize)],
    omega: f64,
    r: f64,
    count: usize,
    seed: u64,
) -> Result<DiscreteCurrent> {
    let base = OpenBook::planar(m, n, sheets)?;
    let d = base.ambient_dim();
    let per_sheet = count.div_ceil(sheets.len()).max(1);
    let w0 = math::unit_ball_volume(m) * r.powi(m as i32) / 2.0 / per_sheet as f64;
    let mut out = DiscreteCurrent {
        m,
        points: Vec::new(),
        weights: Vec::new(),
        tangents: Some(Vec::new()),
        sheet: Vec::new(),
        generator: format!("rotating_book:{omega}"),
        seed: Some(seed),
    };
    for (i, &(theta, q)) in sheets.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        for k in 0..per_sheet {
            let y = half_ball_point(&mut rng, m, r, (k, per_sheet));
            let t = y[m - 1];
            let phi = theta + omega * y[0];
            let mut nu = vec![0.0; d];
            nu[m - 1] = phi.cos();
            nu[m] = phi.sin();
            let mut perp = vec![0.0; d];
            perp[m - 1] = -phi.sin();
            perp[m] = phi.cos();
            let mut p = vec![0.0; d];
            p[..m - 1].copy_from_slice(&y[..m - 1]);
            math::axpy(&mut p, t, &nu);
            let mut rows = vec![nu.clone()];
            let mut e1 = math::unit(d, 0);
            math::axpy(&mut e1, t * omega, &perp);
            rows.push(e1);
            for j in 1..m - 1 {
                rows.push(math::unit(d, j));
            }
            math::orthonormalize(&mut rows).expect("tangent frame has full rank");
            out.points.push(p);
            out.weights
                .push(w0 * (1.0 + (t * omega).powi(2)).sqrt() * q as f64);
            out.tangents.as_mut().unwrap().push(rows.concat());
            out.sheet.push(i);
        }
    }
    Ok(out)
}

/// Samples of mass `mass` on the half-planes spanned by directions strictly between
/// sheets `i` and `j` (fractions 0.2 to 0.8 of the arc), at heights `0.3r` to `0.7r`.
pub fn bridge(
    c: &OpenBook,
    i: usize,
    j: usize,
    mass: f64,
    r: f64,
    count: usize,
    seed: u64,
) -> Result<DiscreteCurrent> {
    let m = c.m();
    let (a, b) = (&c.sheets()[i].normal, &c.sheets()[j].normal);
    let angle = math::angle(a, b);
    // orthonormal partner of a in span{a, b}
    let mut w = b.clone();
    math::axpy(&mut w, -math::dot(a, b), a);
    math::normalize(&mut w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xb1d6e);
    let mut out = DiscreteCurrent {
        m,
        points: Vec::with_capacity(count),
        weights: Vec::with_capacity(count),
        tangents: Some(Vec::with_capacity(count)),
        sheet: Vec::new(),
        generator: "bridge".into(),
        seed: Some(seed),
    };
    for _ in 0..count {
        let frac = 0.2 + 0.6 * rng.random::<f64>();
        let phi = frac * angle;
        let mut dir = math::scale(a, phi.cos());
        math::axpy(&mut dir, phi.sin(), &w);
        let t = r * (0.3 + 0.4 * rng.random::<f64>());
        let x: Vec<f64> = (0..m - 1)
            .map(|_| r * 0.5 * (2.0 * rng.random::<f64>() - 1.0) / (m as f64).sqrt())
            .collect();
        let mut p = c.spine().origin().to_vec();
        for (cx, e) in x.iter().zip(c.spine().basis()) {
            math::axpy(&mut p, *cx, e);
        }
        math::axpy(&mut p, t, &dir);
        let mut rows = vec![dir];
        rows.extend(c.spine().basis().iter().cloned());
        out.points.push(p);
        out.weights.push(mass / count as f64);
        out.tangents.as_mut().unwrap().push(rows.concat());
    }
    Ok(out)
}

/// Union of two currents; sheet labels survive only if both carry them.
pub fn concat(a: &DiscreteCurrent, b: &DiscreteCurrent) -> DiscreteCurrent {
    let mut out = a.clone();
    out.points.extend(b.points.iter().cloned());
    out.weights.extend(b.weights.iter().copied());
    out.tangents = match (&a.tangents, &b.tangents) {
        (Some(x), Some(y)) => Some(x.iter().chain(y).cloned().collect()),
        _ => None,
    };
    out.sheet = if !a.sheet.is_empty() && !b.sheet.is_empty() {
        a.sheet.iter().chain(&b.sheet).copied().collect()
    } else {
        Vec::new()
    };
    out.generator = format!("{}+{}", a.generator, b.generator);
    out
}

/// Points `origin + s·direction`, `|s| ≤ extent`, spaced by `step`.
pub fn flat_boundary(origin: &[f64], direction: &[f64], extent: f64, step: f64) -> Vec<Vec<f64>> {
    let k = (extent / step).floor() as i64;
    (-k..=k)
        .map(|j| {
            let mut p = origin.to_vec();
            math::axpy(&mut p, j as f64 * step, direction);
            p
        })
        .collect()
}
