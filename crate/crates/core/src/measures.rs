//! Weighted point clouds standing in for Radon measures and integral currents.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{calibration_pairing, OpenBook, Spine};
use crate::math::{self, dot, norm, norm_sq, powi, sqrt, unit_ball_volume};

/// Points with positive weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidParameter(
                "points and weights differ in length".into(),
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter(
                "weights must be positive and finite".into(),
            ));
        }
        Ok(DiscreteMeasure { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// A discrete current: weighted points with optional oriented tangent planes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteCurrent {
    pub m: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Per point, `m` orthonormal rows flattened row-major.
    pub tangents: Option<Vec<Vec<f64>>>,
    /// Index of the generating sheet, when known.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sheet: Vec<usize>,
    pub generator: String,
    pub seed: Option<u64>,
}

impl DiscreteCurrent {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn measure(&self) -> DiscreteMeasure {
        DiscreteMeasure {
            points: self.points.clone(),
            weights: self.weights.clone(),
        }
    }

    pub fn tangent(&self, i: usize) -> Option<&[f64]> {
        self.tangents.as_ref().map(|t| t[i].as_slice())
    }

    /// `|v^⊥|²` relative to the tangent plane at sample `i`.
    pub fn perp_sq(&self, i: usize, v: &[f64]) -> Result<f64> {
        let rows = self.tangent(i).ok_or(Error::MissingTangents)?;
        let d = v.len();
        let along: f64 = rows.chunks(d).map(|row| powi(dot(row, v), 2)).sum();
        Ok((norm_sq(v) - along).max(0.0))
    }

    /// `‖T‖(B_r(p))` and the number of samples in the open ball.
    pub fn ball_mass(&self, p: &[f64], r: f64) -> (f64, usize) {
        let r2 = r * r;
        let mut mass = 0.0;
        let mut count = 0;
        for (x, w) in self.points.iter().zip(&self.weights) {
            if math::dist_sq(x, p) < r2 {
                mass += w;
                count += 1;
            }
        }
        (mass, count)
    }

    /// Samples in the open ball `B_r(p)`.
    pub fn restrict(&self, p: &[f64], r: f64) -> DiscreteCurrent {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| math::dist_sq(&self.points[i], p) < r * r)
            .collect();
        self.select(&keep)
    }

    pub fn select(&self, idx: &[usize]) -> DiscreteCurrent {
        DiscreteCurrent {
            m: self.m,
            points: idx.iter().map(|&i| self.points[i].clone()).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
            tangents: self
                .tangents
                .as_ref()
                .map(|t| idx.iter().map(|&i| t[i].clone()).collect()),
            sheet: if self.sheet.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| self.sheet[i]).collect()
            },
            generator: self.generator.clone(),
            seed: self.seed,
        }
    }

    /// Checks unit tangents and positive weights.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.weights.len() != self.len() {
            return Err(Error::InvalidParameter(
                "weights and points differ in length".into(),
            ));
        }
        if self.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter("weights must be positive".into()));
        }
        if self.points.iter().any(|p| p.len() != d) {
            return Err(Error::MismatchedDimension {
                expected: d,
                got: self
                    .points
                    .iter()
                    .map(Vec::len)
                    .find(|&l| l != d)
                    .unwrap_or(d),
            });
        }
        if let Some(t) = &self.tangents {
            for rows in t {
                if rows.len() != self.m * d {
                    return Err(Error::MismatchedDimension {
                        expected: self.m * d,
                        got: rows.len(),
                    });
                }
                let mut a = Vec::with_capacity(self.m * self.m);
                for r1 in rows.chunks(d) {
                    for r2 in rows.chunks(d) {
                        a.push(dot(r1, r2));
                    }
                }
                // unit simple m-vector: Gram determinant equals one
                if math::abs(math::det(a, self.m) - 1.0) > 1e-10 {
                    return Err(Error::InvalidParameter(
                        "tangent m-vector is not unit".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// How sample positions are laid out on each sheet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleLayout {
    /// Random points in equal-mass radial strata.
    #[default]
    Stratified,
    /// Deterministic product grid with image radii on shell midpoints (m ∈ {2, 3}).
    Shells,
}

/// One homogeneous term `coeff · Im((x₁ + i t)^degree) · direction` of a sheet graph.
/// Degree 0 is the constant `coeff · direction`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphTerm {
    pub coeff: f64,
    pub degree: u32,
    pub direction: Vec<f64>,
}

impl GraphTerm {
    fn scalar(&self, x1: f64, t: f64) -> f64 {
        if self.degree == 0 {
            return self.coeff;
        }
        let (mut re, mut im) = (1.0, 0.0);
        for _ in 0..self.degree {
            let nre = re * x1 - im * t;
            im = re * t + im * x1;
            re = nre;
        }
        self.coeff * im
    }
}

/// Per-sheet `Q_i`-valued graph data: `atoms[i][a]` lists the terms of atom `a` on sheet `i`.
/// An empty list for a sheet means `g_i ≡ Q_i⟦0⟧`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SheetGraph {
    pub atoms: Vec<Vec<Vec<GraphTerm>>>,
}

impl SheetGraph {
    pub fn zero(c: &OpenBook) -> Self {
        SheetGraph {
            atoms: vec![Vec::new(); c.n_sheets()],
        }
    }

    /// Every atom of every sheet carries the same terms.
    pub fn uniform(c: &OpenBook, per_sheet: Vec<Vec<GraphTerm>>) -> Self {
        SheetGraph {
            atoms: per_sheet
                .into_iter()
                .zip(c.sheets())
                .map(|(terms, s)| vec![terms; s.multiplicity])
                .collect(),
        }
    }

    fn check(&self, c: &OpenBook) -> Result<()> {
        if self.atoms.len() != c.n_sheets() {
            return Err(Error::InvalidParameter(
                "graph data does not match the sheet count".into(),
            ));
        }
        for (i, atoms) in self.atoms.iter().enumerate() {
            if !atoms.is_empty() && atoms.len() != c.sheets()[i].multiplicity {
                return Err(Error::InvalidParameter(format!(
                    "sheet {i} needs Q_i atoms"
                )));
            }
            let tangent = c.sheet_tangent(i);
            for term in atoms.iter().flatten() {
                if term.direction.len() != c.ambient_dim() {
                    return Err(Error::MismatchedDimension {
                        expected: c.ambient_dim(),
                        got: term.direction.len(),
                    });
                }
                if tangent
                    .iter()
                    .any(|row| math::abs(dot(row, &term.direction)) > 1e-9)
                {
                    return Err(Error::InvalidParameter(format!(
                        "graph direction on sheet {i} is not normal to the sheet"
                    )));
                }
                if term.degree == 0 && term.coeff != 0.0 {
                    return Err(Error::NonVanishingOnSpine(
                        math::abs(term.coeff) * norm(&term.direction),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Ambient point of atom `terms` over sheet coordinates `(x', t)`.
fn graph_point(c: &OpenBook, i: usize, terms: &[GraphTerm], y: &[f64]) -> Vec<f64> {
    let m = c.m();
    let (x, t) = (&y[..m - 1], y[m - 1]);
    let mut p = c.sheet_point(i, x, t);
    for term in terms {
        math::axpy(&mut p, term.scalar(x[0], t), &term.direction);
    }
    p
}

/// Area factor and oriented tangent rows of the graph at sheet coordinates `y`.
fn graph_frame(c: &OpenBook, i: usize, terms: &[GraphTerm], y: &[f64]) -> (f64, Vec<f64>) {
    let m = c.m();
    if terms.is_empty() {
        return (1.0, c.sheet_tangent(i).concat());
    }
    let step = 1e-6 * (1.0 + norm(y));
    // column order (∂_t, ∂_{x₁}, …) matches the sheet orientation (ν, e₁, …)
    let order: Vec<usize> = core::iter::once(m - 1).chain(0..m - 1).collect();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    for &k in &order {
        let mut yp = y.to_vec();
        let mut ym = y.to_vec();
        yp[k] += step;
        ym[k] -= step;
        let d = math::scale(
            &math::sub(
                &graph_point(c, i, terms, &yp),
                &graph_point(c, i, terms, &ym),
            ),
            0.5 / step,
        );
        cols.push(d);
    }
    let mut gram = Vec::with_capacity(m * m);
    for a in &cols {
        for b in &cols {
            gram.push(dot(a, b));
        }
    }
    let jac = sqrt(math::det(gram, m).max(0.0));
    math::orthonormalize(&mut cols).expect("graph differential has full rank");
    (jac, cols.concat())
}

/// Uniform direction on the half-sphere `{t ≥ 0}` of `R^m`, last coordinate is `t`.
fn half_sphere_direction(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let n = math::normalize(&mut v);
        if n > 1e-12 {
            v[m - 1] = math::abs(v[m - 1]);
            return v;
        }
    }
}

/// Deterministic half-sphere cells `(direction, solid angle)` for `m ∈ {2, 3}`.
fn half_sphere_grid(m: usize, cells: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    match m {
        2 => {
            let n = cells.max(1);
            let d = math::PI / n as f64;
            Ok((0..n)
                .map(|j| {
                    let th = (j as f64 + 0.5) * d;
                    (vec![math::cos(th), math::sin(th)], d)
                })
                .collect())
        }
        3 => {
            // equal-area bands in t with azimuthal rings
            let nz = math::round(sqrt(cells as f64 / (2.0 * math::PI))).max(1.0) as usize;
            let na = (cells / nz).max(4);
            let d = 2.0 * math::PI / (nz * na) as f64;
            let mut out = Vec::with_capacity(nz * na);
            for i in 0..nz {
                let t = (i as f64 + 0.5) / nz as f64;
                let s = sqrt(1.0 - t * t);
                for j in 0..na {
                    let psi = 2.0 * math::PI * (j as f64 + 0.5) / na as f64;
                    out.push((vec![s * math::cos(psi), s * math::sin(psi), t], d));
                }
            }
            Ok(out)
        }
        _ => Err(Error::InvalidParameter(format!(
            "shell layout supports m ∈ {{2, 3}}, got {m}"
        ))),
    }
}

fn sheet_rng(seed: u64, sheet: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sheet as u64 + 1);
    rng
}

/// Samples `Σ Q_i ⟦graph(g_i)⟧ ∩ B_r` with tangents, `count` base points split evenly over sheets.
pub fn sample_graph_over_book(
    c: &OpenBook,
    graph: &SheetGraph,
    r: f64,
    count: usize,
    seed: u64,
    layout: SampleLayout,
) -> Result<DiscreteCurrent> {
    if count < 100 {
        return Err(Error::TooFewSamples(count));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "radius {r} must be positive"
        )));
    }
    graph.check(c)?;
    let m = c.m();
    let n_sheets = c.n_sheets();
    let per_sheet = count.div_ceil(n_sheets);
    let half_volume = unit_ball_volume(m) * powi(r, m as i32) / 2.0;

    let mut out = DiscreteCurrent {
        m,
        points: Vec::with_capacity(count),
        weights: Vec::with_capacity(count),
        tangents: Some(Vec::with_capacity(count)),
        sheet: Vec::with_capacity(count),
        generator: String::new(),
        seed: Some(seed),
    };

    for (i, sheet) in c.sheets().iter().enumerate() {
        // distinct atoms with their repetition counts
        let mut groups: Vec<(&[GraphTerm], usize)> = Vec::new();
        if graph.atoms[i].is_empty() {
            groups.push((&[], sheet.multiplicity));
        } else {
            for a in &graph.atoms[i] {
                match groups.iter_mut().find(|g| g.0 == a.as_slice()) {
                    Some(g) => g.1 += 1,
                    None => groups.push((a.as_slice(), 1)),
                }
            }
        }
        match layout {
            SampleLayout::Stratified => {
                let mut rng = sheet_rng(seed, i);
                let w0 = half_volume / per_sheet as f64;
                for k in 0..per_sheet {
                    let u = (k as f64 + rng.random::<f64>()) / per_sheet as f64;
                    let rho = r * math::powf(u, 1.0 / m as f64);
                    let y = math::scale(&half_sphere_direction(&mut rng, m), rho);
                    for (terms, mult) in &groups {
                        let (jac, rows) = graph_frame(c, i, terms, &y);
                        out.points.push(graph_point(c, i, terms, &y));
                        out.weights.push(w0 * jac * *mult as f64);
                        out.tangents.as_mut().unwrap().push(rows);
                        out.sheet.push(i);
                    }
                }
            }
            SampleLayout::Shells => {
                let (n_shells, n_dirs) = shell_counts(m, per_sheet);
                let dirs = half_sphere_grid(m, n_dirs)?;
                let dr = r / n_shells as f64;
                for k in 0..n_shells {
                    let (r0, r1) = (k as f64 * dr, (k + 1) as f64 * dr);
                    let mid = 0.5 * (r0 + r1);
                    let shell = (powi(r1, m as i32) - powi(r0, m as i32)) / m as f64;
                    for (theta, d_omega) in &dirs {
                        for (terms, mult) in &groups {
                            let (rho, drho) = invert_radius(c, i, terms, theta, mid);
                            let y = math::scale(theta, rho);
                            let (jac, rows) = graph_frame(c, i, terms, &y);
                            let f = jac * powi(rho / mid, m as i32 - 1) * drho;
                            out.points.push(graph_point(c, i, terms, &y));
                            out.weights.push(f * shell * d_omega * *mult as f64);
                            out.tangents.as_mut().unwrap().push(rows);
                            out.sheet.push(i);
                        }
                    }
                }
            }
        }
    }
    out.generator = format!("graph_over_book:{layout:?}");
    Ok(out)
}

/// Radii `k r / n` bounding the shells of a [`SampleLayout::Shells`] sample of `count` base
/// points in `B_r`; ball masses are exact there.
pub fn shell_edges(c: &OpenBook, r: f64, count: usize) -> Vec<f64> {
    let (n, _) = shell_counts(c.m(), count.div_ceil(c.n_sheets()));
    (0..=n).map(|k| k as f64 * r / n as f64).collect()
}

fn shell_counts(m: usize, per_sheet: usize) -> (usize, usize) {
    let shells = match m {
        2 => math::round(sqrt(per_sheet as f64)) as usize,
        _ => math::round(math::powf(per_sheet as f64, 1.0 / 3.0) * 1.5) as usize,
    }
    .max(4);
    (shells, (per_sheet / shells).max(4))
}

/// Base radius `ρ` with `|F(ρθ)| = target`, and `dρ/dR` there.
fn invert_radius(
    c: &OpenBook,
    i: usize,
    terms: &[GraphTerm],
    theta: &[f64],
    target: f64,
) -> (f64, f64) {
    if terms.is_empty() {
        return (target, 1.0);
    }
    let origin = c.spine().origin().to_vec();
    let radius =
        |rho: f64| math::dist(&graph_point(c, i, terms, &math::scale(theta, rho)), &origin);
    let deriv = |rho: f64| {
        let h = 1e-7 * (1.0 + rho);
        (radius(rho + h) - radius((rho - h).max(0.0))) / (rho + h - (rho - h).max(0.0))
    };
    // |F| ≥ ρ, so the root lies in [0, target]; Newton safeguarded by bisection
    let (mut lo, mut hi) = (0.0, target);
    let mut rho = target;
    for _ in 0..100 {
        let f = radius(rho) - target;
        if math::abs(f) <= 1e-14 * target {
            break;
        }
        if f > 0.0 {
            hi = rho;
        } else {
            lo = rho;
        }
        let d = deriv(rho);
        let next = rho - f / d;
        rho = if d > 0.0 && next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
    }
    (rho, 1.0 / deriv(rho))
}

/// Samples `C ∩ B_r` with tangents.
pub fn sample_open_book(
    c: &OpenBook,
    r: f64,
    count: usize,
    seed: u64,
    layout: SampleLayout,
) -> Result<DiscreteCurrent> {
    let mut t = sample_graph_over_book(c, &SheetGraph::zero(c), r, count, seed, layout)?;
    t.generator = format!("open_book:{layout:?}");
    Ok(t)
}

/// Which density ratio and correction factor to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityFlavor {
    #[default]
    Interior,
    Boundary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityParams {
    pub flavor: DensityFlavor,
    pub a_gamma: f64,
    pub a_sigma: f64,
    pub c0: f64,
}

impl Default for DensityParams {
    fn default() -> Self {
        DensityParams {
            flavor: DensityFlavor::Interior,
            a_gamma: 0.0,
            a_sigma: 0.0,
            c0: 1.0,
        }
    }
}

/// Minimum sample count for a trusted ball mass.
pub const MIN_BALL_SAMPLES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityValue {
    pub value: f64,
    pub count: usize,
    /// Fewer than [`MIN_BALL_SAMPLES`] samples in the ball.
    pub sparse: bool,
}

/// `Θ(T, p, r)` with the correction factor of the chosen flavor.
pub fn density(
    t: &DiscreteCurrent,
    p: &[f64],
    r: f64,
    params: &DensityParams,
) -> Result<DensityValue> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "radius {r} must be positive"
        )));
    }
    let (mass, count) = t.ball_mass(p, r);
    if count == 0 {
        return Err(Error::EmptyBall);
    }
    let correction = match params.flavor {
        DensityFlavor::Interior => math::exp(params.c0 * params.a_sigma * params.a_sigma * r * r),
        DensityFlavor::Boundary => math::exp(params.c0 * (params.a_sigma + params.a_gamma) * r),
    };
    let value = correction * mass / (unit_ball_volume(t.m) * powi(r, t.m as i32));
    Ok(DensityValue {
        value,
        count,
        sparse: count < MIN_BALL_SAMPLES,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub counts: Vec<usize>,
    pub flavor: DensityFlavor,
    /// `max_k (Θ(r_k) − Θ(r_{k+1}))_+`
    pub defect: f64,
}

impl DensityProfile {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }
}

pub fn density_profile(
    t: &DiscreteCurrent,
    p: &[f64],
    radii: &[f64],
    params: &DensityParams,
) -> Result<DensityProfile> {
    if radii.is_empty() || radii.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter(
            "radii must be strictly increasing".into(),
        ));
    }
    let mut values = Vec::with_capacity(radii.len());
    let mut counts = Vec::with_capacity(radii.len());
    for &r in radii {
        let d = density(t, p, r, params)?;
        values.push(d.value);
        counts.push(d.count);
    }
    let defect = values
        .windows(2)
        .map(|w| (w[0] - w[1]).max(0.0))
        .fold(0.0, f64::max);
    Ok(DensityProfile {
        center: p.to_vec(),
        radii: radii.to_vec(),
        values,
        counts,
        flavor: params.flavor,
        defect,
    })
}

/// Both sides of `r^{−m}‖T‖(B_r) − s^{−m}‖T‖(B_s) = ∫_{B_r∖B_s} |(x−p)^⊥|²/|x−p|^{m+2}`.
pub fn monotonicity_remainder(
    t: &DiscreteCurrent,
    p: &[f64],
    s: f64,
    r: f64,
) -> Result<(f64, f64)> {
    if t.tangents.is_none() {
        return Err(Error::MissingTangents);
    }
    if !(0.0 < s && s < r) {
        return Err(Error::InvalidParameter("need 0 < s < r".into()));
    }
    let m = t.m as i32;
    let (ms, _) = t.ball_mass(p, s);
    let (mr, _) = t.ball_mass(p, r);
    let lhs = mr / powi(r, m) - ms / powi(s, m);
    let mut rhs = 0.0;
    for i in 0..t.len() {
        let v = math::sub(&t.points[i], p);
        let d2 = norm_sq(&v);
        if d2 >= s * s && d2 < r * r {
            rhs += t.weights[i] * t.perp_sq(i, &v)? / powi(sqrt(d2), m + 2);
        }
    }
    Ok((lhs, rhs))
}

/// `(π∘)_# T` in spine coordinates; tangents are dropped.
pub fn pushforward_circular(t: &DiscreteCurrent, spine: &Spine) -> DiscreteCurrent {
    DiscreteCurrent {
        m: t.m,
        points: t.points.iter().map(|x| spine.circular(x)).collect(),
        weights: t.weights.clone(),
        tangents: None,
        sheet: t.sheet.clone(),
        generator: format!("circular({})", t.generator),
        seed: t.seed,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDefect {
    pub defect: f64,
    /// Mass that entered the integral.
    pub mass: f64,
    /// Samples dropped for lying within the spine neighborhood.
    pub excluded: usize,
}

/// `∫_{B_r∖U} (1 − ⟨ω, T⃗⟩) d|T|` where `U` is the `10⁻⁶ r` neighborhood of the spine.
pub fn calibration_defect(t: &DiscreteCurrent, spine: &Spine, r: f64) -> Result<CalibrationDefect> {
    let tangents = t.tangents.as_ref().ok_or(Error::MissingTangents)?;
    let d = t.dim();
    let cut = 1e-6 * r;
    let mut out = CalibrationDefect {
        defect: 0.0,
        mass: 0.0,
        excluded: 0,
    };
    let center = spine.origin();
    for i in 0..t.len() {
        let x = &t.points[i];
        if math::dist_sq(x, center) >= r * r {
            continue;
        }
        if spine.dist(x) <= cut {
            out.excluded += 1;
            continue;
        }
        let rows: Vec<Vec<f64>> = tangents[i].chunks(d).map(<[f64]>::to_vec).collect();
        let pairing = calibration_pairing(spine, &rows, x)?;
        out.defect += t.weights[i] * (1.0 - pairing);
        out.mass += t.weights[i];
    }
    Ok(out)
}
