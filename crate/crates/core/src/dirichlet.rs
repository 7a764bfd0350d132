//! The linear problem on the half-ball `B₁⁺ = B₁ ∩ {x_m > 0}`: Q-valued maps with
//! zero trace on the flat face, Dirichlet energy, spherical height, frequency.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, powf, powi, sqrt, PI};
use crate::qvalued::{min_cost_assignment, LinearQMap, QPoint};

/// Uniform lattice `hℤ^m` restricted to a box around the half-ball. The box
/// extends two cells beyond the unit sphere so stencils near `∂B₁` are complete.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct HalfBallGrid {
    m: usize,
    h: f64,
    side: usize,
    strides: Vec<usize>,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    m: usize,
    h: f64,
}

impl TryFrom<GridRepr> for HalfBallGrid {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Self> {
        HalfBallGrid::new(r.m, r.h)
    }
}

impl From<HalfBallGrid> for GridRepr {
    fn from(g: HalfBallGrid) -> Self {
        GridRepr { m: g.m, h: g.h }
    }
}

impl HalfBallGrid {
    pub fn new(m: usize, h: f64) -> Result<Self> {
        if !(2..=3).contains(&m) {
            return Err(Error::InvalidParameter(format!(
                "grid dimension {m} not in 2..=3"
            )));
        }
        if !(h > 0.0 && h <= 0.5) {
            return Err(Error::InvalidParameter(format!(
                "spacing {h} not in (0, 1/2]"
            )));
        }
        let side = math::round(1.0 / h) as usize + 2;
        let mut shape = vec![2 * side + 1; m];
        shape[m - 1] = side + 1;
        let mut strides = vec![1; m];
        for d in (0..m - 1).rev() {
            strides[d] = strides[d + 1] * shape[d + 1];
        }
        let len = strides[0] * shape[0];
        Ok(HalfBallGrid {
            m,
            h,
            side,
            strides,
            len,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of box nodes.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn lower(&self, d: usize) -> i64 {
        if d == self.m - 1 {
            0
        } else {
            -(self.side as i64)
        }
    }

    pub fn index_of(&self, k: &[i64]) -> Option<usize> {
        let mut idx = 0;
        for d in 0..self.m {
            let off = k[d] - self.lower(d);
            if off < 0 || off > (self.side as i64) * if d == self.m - 1 { 1 } else { 2 } {
                return None;
            }
            idx += off as usize * self.strides[d];
        }
        Some(idx)
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<i64> {
        let mut k = vec![0; self.m];
        for d in 0..self.m {
            k[d] = (idx / self.strides[d]) as i64 + self.lower(d);
            idx %= self.strides[d];
        }
        k
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .map(|&k| k as f64 * self.h)
            .collect()
    }

    /// On the flat face `{x_m = 0}`.
    pub fn on_face(&self, idx: usize) -> bool {
        (idx % self.strides[self.m - 2]) / self.strides[self.m - 1] == 0
    }

    /// In the closed half-ball.
    pub fn in_half_ball(&self, idx: usize) -> bool {
        math::norm_sq(&self.point(idx)) <= 1.0 + 1e-12
    }

    /// On the spherical part `∂B₁ ∩ {x_m > 0}` up to rounding.
    pub fn on_sphere(&self, idx: usize) -> bool {
        !self.on_face(idx) && math::abs(math::norm(&self.point(idx)) - 1.0) <= 1e-12
    }

    fn neighbor(&self, idx: usize, d: usize, up: bool) -> Option<usize> {
        let mut k = self.multi_index(idx);
        k[d] += if up { 1 } else { -1 };
        self.index_of(&k)
    }
}

/// A Q-valued map sampled at every box node; atoms are stored flat, `q·n` per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QFunction {
    pub grid: HalfBallGrid,
    pub q: usize,
    pub n: usize,
    pub values: Vec<f64>,
    pub zero_trace: bool,
}

impl QFunction {
    /// Samples `f`, which returns `q` atoms of dimension `n`, at every node.
    /// Face values within `1e−12` of zero are snapped to `Q⟦0⟧`.
    pub fn from_fn<F>(grid: &HalfBallGrid, q: usize, n: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<Vec<f64>>,
    {
        let mut values = Vec::with_capacity(grid.len() * q * n);
        let mut zero_trace = true;
        for idx in 0..grid.len() {
            let atoms = f(&grid.point(idx));
            if atoms.len() != q {
                return Err(Error::MismatchedQ(q, atoms.len()));
            }
            let face = grid.on_face(idx);
            for a in &atoms {
                if a.len() != n {
                    return Err(Error::MismatchedDimension {
                        expected: n,
                        got: a.len(),
                    });
                }
                for &v in a {
                    if face && math::abs(v) > 1e-12 {
                        zero_trace = false;
                    }
                    values.push(v);
                }
            }
        }
        let mut u = QFunction {
            grid: grid.clone(),
            q,
            n,
            values,
            zero_trace,
        };
        if zero_trace {
            let w = q * n;
            for idx in (0..grid.len()).filter(|&i| grid.on_face(i)) {
                u.values[idx * w..(idx + 1) * w]
                    .iter_mut()
                    .for_each(|v| *v = 0.0);
            }
        }
        Ok(u)
    }

    pub fn from_fixture(grid: &HalfBallGrid, fixture: &Fixture) -> Result<Self> {
        if grid.m() < fixture.min_dim() {
            return Err(Error::InvalidParameter(format!(
                "fixture needs m ≥ {}",
                fixture.min_dim()
            )));
        }
        QFunction::from_fn(grid, fixture.q(), fixture.n(), |x| fixture.eval(x))
    }

    pub fn atoms(&self, idx: usize) -> &[f64] {
        let w = self.q * self.n;
        &self.values[idx * w..(idx + 1) * w]
    }

    pub fn qpoint(&self, idx: usize) -> QPoint {
        QPoint::new(
            self.atoms(idx)
                .chunks(self.n.max(1))
                .map(<[f64]>::to_vec)
                .collect(),
        )
    }

    pub fn norm_sq_at(&self, idx: usize) -> f64 {
        math::norm_sq(self.atoms(idx))
    }

    /// Atoms at the node shifted by one step; below the face the odd reflection `⟦−u_i⟧` is used.
    fn shifted(&self, idx: usize, d: usize, up: bool) -> Option<Vec<f64>> {
        let g = &self.grid;
        let mut k = g.multi_index(idx);
        k[d] += if up { 1 } else { -1 };
        if k[g.m - 1] < 0 {
            if !self.zero_trace {
                return None;
            }
            k[g.m - 1] = -k[g.m - 1];
            return g
                .index_of(&k)
                .map(|j| self.atoms(j).iter().map(|v| -v).collect());
        }
        g.index_of(&k).map(|j| self.atoms(j).to_vec())
    }

    /// Multilinear interpolation after matching each corner's atoms to the heaviest corner.
    /// Points are clamped into the box.
    pub fn eval(&self, p: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let (corners, weights) = cell_corners(g, p);
        let w = self.q * self.n;
        let heavy = (0..corners.len())
            .max_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(b.cmp(&a)))
            .unwrap();
        let base = self.atoms(corners[heavy]).to_vec();
        let mut out = vec![0.0; w];
        for (c, wt) in corners.iter().zip(&weights) {
            if *wt == 0.0 {
                continue;
            }
            let atoms = self.atoms(*c);
            let perm = match_atoms(&base, atoms, self.q, self.n).0;
            for i in 0..self.q {
                for k in 0..self.n {
                    out[i * self.n + k] += wt * atoms[perm[i] * self.n + k];
                }
            }
        }
        out
    }
}

/// Corner indices and multilinear weights of the cell containing `p` (clamped to the box).
fn cell_corners(g: &HalfBallGrid, p: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let m = g.m;
    let mut base = vec![0i64; m];
    let mut frac = vec![0.0; m];
    for d in 0..m {
        let lo = g.lower(d);
        let hi = g.side as i64 - 1;
        let s = (p[d] / g.h).clamp(lo as f64, hi as f64 + 1.0);
        let b = (math::floor(s) as i64).clamp(lo, hi);
        base[d] = b;
        frac[d] = s - b as f64;
    }
    let mut corners = Vec::with_capacity(1 << m);
    let mut weights = Vec::with_capacity(1 << m);
    for mask in 0..(1usize << m) {
        let mut k = base.clone();
        let mut w = 1.0;
        for d in 0..m {
            if mask >> d & 1 == 1 {
                k[d] += 1;
                w *= frac[d];
            } else {
                w *= 1.0 - frac[d];
            }
        }
        corners.push(g.index_of(&k).expect("clamped corner lies in the box"));
        weights.push(w);
    }
    (corners, weights)
}

/// Matches `cand` atoms to `target` atoms: `perm[i]` is the candidate paired with target `i`.
/// Also returns the best and second-best summed squared costs (second is `∞` when `q = 1`).
fn match_atoms(target: &[f64], cand: &[f64], q: usize, n: usize) -> (Vec<usize>, f64, f64) {
    if q == 1 {
        return (vec![0], math::dist_sq(target, cand), f64::INFINITY);
    }
    let mut cost = Vec::with_capacity(q * q);
    for i in 0..q {
        for j in 0..q {
            cost.push(math::dist_sq(
                &target[i * n..(i + 1) * n],
                &cand[j * n..(j + 1) * n],
            ));
        }
    }
    let (perm, best) = min_cost_assignment(&cost, q);
    (perm, best, f64::NAN)
}

/// Second-smallest permutation cost for small `q`.
fn second_best(target: &[f64], cand: &[f64], q: usize, n: usize) -> f64 {
    let mut perm: Vec<usize> = (0..q).collect();
    let mut costs = Vec::new();
    permute(&mut perm, 0, &mut |p| {
        costs.push(
            p.iter()
                .enumerate()
                .map(|(i, &j)| {
                    math::dist_sq(&target[i * n..(i + 1) * n], &cand[j * n..(j + 1) * n])
                })
                .sum::<f64>(),
        )
    });
    costs.sort_by(f64::total_cmp);
    costs.get(1).copied().unwrap_or(f64::INFINITY)
}

fn permute(p: &mut [usize], k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

/// Per-node, per-atom gradients `∂_k u_i`, laid out `[node][atom][k][component]`.
#[derive(Clone, Debug)]
pub struct Gradients {
    q: usize,
    m: usize,
    n: usize,
    data: Vec<f64>,
}

impl Gradients {
    fn at(&self, idx: usize) -> &[f64] {
        let w = self.q * self.m * self.n;
        &self.data[idx * w..(idx + 1) * w]
    }

    /// `|Du|² = Σ_i |Du_i|²` at a node.
    pub fn energy_density(&self, idx: usize) -> f64 {
        math::norm_sq(self.at(idx))
    }
}

const STRICT_MARGIN: f64 = 2.0;

/// Matched central differences; one-sided where the box ends. Neighbours are matched to the
/// node's atoms, and the backward neighbour to the reflection of the forward one through the
/// node, so coincident atoms on the face pair correctly with their odd reflections.
/// With `strict`, a matching whose runner-up costs less than twice the optimum raises `SheetAmbiguity`.
pub fn gradients(u: &QFunction, strict: bool) -> Result<Gradients> {
    let g = &u.grid;
    let (q, m, n) = (u.q, g.m, u.n);
    let mut data = vec![0.0; g.len() * q * m * n];
    let check = |target: &[f64], cand: &[f64], best: f64| -> Result<()> {
        if !strict || q == 1 || q > 6 {
            return Ok(());
        }
        // nodes whose own atoms coincide carry no labelling to be ambiguous about
        for i in 0..q {
            for j in (i + 1)..q {
                if math::dist_sq(&target[i * n..(i + 1) * n], &target[j * n..(j + 1) * n]) <= 1e-24
                {
                    return Ok(());
                }
            }
        }
        let second = second_best(target, cand, q, n);
        let ratio = second / best.max(1e-300);
        if ratio < STRICT_MARGIN {
            return Err(Error::SheetAmbiguity(ratio));
        }
        Ok(())
    };
    for idx in 0..g.len() {
        let a = u.atoms(idx);
        let out = &mut data[idx * q * m * n..(idx + 1) * q * m * n];
        for d in 0..m {
            let plus = u.shifted(idx, d, true);
            let minus = u.shifted(idx, d, false);
            let mut put = |i: usize, c: usize, v: f64| out[(i * m + d) * n + c] = v;
            match (&plus, &minus) {
                (Some(p), Some(mi)) => {
                    let (sp, best, _) = match_atoms(a, p, q, n);
                    check(a, p, best)?;
                    let mut guess = vec![0.0; q * n];
                    for i in 0..q {
                        for c in 0..n {
                            guess[i * n + c] = 2.0 * a[i * n + c] - p[sp[i] * n + c];
                        }
                    }
                    let (sm, _, _) = match_atoms(&guess, mi, q, n);
                    for i in 0..q {
                        for c in 0..n {
                            put(i, c, (p[sp[i] * n + c] - mi[sm[i] * n + c]) / (2.0 * g.h));
                        }
                    }
                }
                (Some(p), None) => {
                    let (sp, _, _) = match_atoms(a, p, q, n);
                    for i in 0..q {
                        for c in 0..n {
                            put(i, c, (p[sp[i] * n + c] - a[i * n + c]) / g.h);
                        }
                    }
                }
                (None, Some(mi)) => {
                    let (sm, _, _) = match_atoms(a, mi, q, n);
                    for i in 0..q {
                        for c in 0..n {
                            put(i, c, (a[i * n + c] - mi[sm[i] * n + c]) / g.h);
                        }
                    }
                }
                (None, None) => {}
            }
        }
    }
    Ok(Gradients { q, m, n, data })
}

/// Radial weight with the break points where subsampling is needed.
struct Weight<'a> {
    f: &'a dyn Fn(f64) -> f64,
    kinks: &'a [f64],
    support: f64,
}

const SUBSAMPLE: usize = 4;

/// `Σ_nodes f(node) · h^m · (cell average of w(|y − c|/r) over y_m ≥ 0)`.
fn volume_sum(
    g: &HalfBallGrid,
    c: &[f64],
    r: f64,
    w: &Weight,
    f: &dyn Fn(usize, &[f64]) -> f64,
) -> f64 {
    let m = g.m;
    let h = g.h;
    let reach = w.support * r + h * sqrt(m as f64);
    let cell = powi(h, m as i32);
    let mut lo = vec![0i64; m];
    let mut hi = vec![0i64; m];
    for d in 0..m {
        lo[d] = (math::floor((c[d] - reach) / h) as i64).max(g.lower(d));
        hi[d] = (math::floor((c[d] + reach) / h) as i64 + 1).min(g.side as i64);
    }
    let mut total = 0.0;
    let mut k = lo.clone();
    let diag = 0.5 * h * sqrt(m as f64);
    let mut x = vec![0.0; m];
    let mut y = vec![0.0; m];
    loop {
        for d in 0..m {
            x[d] = k[d] as f64 * h;
        }
        let dist = math::dist(&x, c);
        if dist <= reach {
            let near_kink = w.kinks.iter().any(|kk| math::abs(dist - kk * r) <= diag);
            let face = k[m - 1] == 0;
            let weight = if near_kink || face {
                let s = SUBSAMPLE;
                let total_sub = powi(s as f64, m as i32);
                let mut acc = 0.0;
                let mut sub = vec![0usize; m];
                loop {
                    let mut ok = true;
                    for d in 0..m {
                        y[d] = x[d] + h * ((sub[d] as f64 + 0.5) / s as f64 - 0.5);
                    }
                    if y[m - 1] < 0.0 {
                        ok = false;
                    }
                    if ok {
                        acc += (w.f)(math::dist(&y, c) / r);
                    }
                    let mut d = 0;
                    while d < m {
                        sub[d] += 1;
                        if sub[d] < s {
                            break;
                        }
                        sub[d] = 0;
                        d += 1;
                    }
                    if d == m {
                        break;
                    }
                }
                acc / total_sub
            } else {
                (w.f)(dist / r)
            };
            if weight != 0.0 {
                if let Some(idx) = g.index_of(&k) {
                    total += weight * cell * f(idx, &x);
                }
            }
        }
        let mut d = 0;
        while d < m {
            k[d] += 1;
            if k[d] <= hi[d] {
                break;
            }
            k[d] = lo[d];
            d += 1;
        }
        if d == m {
            break;
        }
    }
    total
}

/// Midpoint quadrature on the hemisphere `∂B_r(c) ∩ {x_m > 0}` for `c` on the face:
/// `(point, outward normal, weight)`.
fn hemisphere(m: usize, c: &[f64], r: f64, h: f64) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
    let mut out = Vec::new();
    if m == 2 {
        let k = (2.0 * math::floor(2.0 * PI * r / h)).max(32.0) as usize;
        let dt = PI / k as f64;
        for j in 0..k {
            let t = (j as f64 + 0.5) * dt;
            let nu = vec![math::cos(t), math::sin(t)];
            out.push((vec![c[0] + r * nu[0], c[1] + r * nu[1]], nu, r * dt));
        }
    } else {
        let kp = (2.0 * math::floor(PI * r / (2.0 * h))).max(16.0) as usize;
        let ka = 4 * kp;
        let (dp, da) = (0.5 * PI / kp as f64, 2.0 * PI / ka as f64);
        for j in 0..kp {
            let psi = (j as f64 + 0.5) * dp;
            let (sp, cp) = (math::sin(psi), math::cos(psi));
            for l in 0..ka {
                let phi = (l as f64 + 0.5) * da;
                let nu = vec![sp * math::cos(phi), sp * math::sin(phi), cp];
                let p = vec![c[0] + r * nu[0], c[1] + r * nu[1], c[2] + r * nu[2]];
                out.push((p, nu, r * r * sp * dp * da));
            }
        }
    }
    out
}

/// Spherical integrals on `∂B_r⁺(x)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurfaceTerms {
    /// `∫ |u|²`
    pub height: f64,
    /// `∫ |Du|²`
    pub energy: f64,
    /// `∫ Σ |∂_ν u_i|²`
    pub normal_energy: f64,
    /// `∫ Σ ⟨∂_ν u_i, u_i⟩`
    pub flux: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyVariant {
    #[default]
    Sharp,
    Smoothed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyProfile {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub d: Vec<f64>,
    pub h: Vec<f64>,
    pub i: Vec<f64>,
    pub variant: FrequencyVariant,
    /// Largest decrease of `I` between consecutive radii.
    pub defect: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothedFrequency {
    pub d: f64,
    pub h: f64,
    /// `None` on the vanishing branch `D = H = 0`.
    pub i: Option<f64>,
}

/// Signed relative slacks of the doubling bounds between radii `r < t`; nonnegative means the inequality holds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    pub r: f64,
    pub t: f64,
    pub h_r: f64,
    pub h_t: f64,
    pub d_r: f64,
    pub d_t: f64,
    pub i_r: f64,
    pub i_t: f64,
    /// `(r/t)^{2I(t)} H(t)/t^{m−1} ≤ H(r)/r^{m−1}`
    pub height_lower: f64,
    /// `H(r)/r^{m−1} ≤ (r/t)^{2I(r)} H(t)/t^{m−1}`
    pub height_upper: f64,
    /// `(I(r)/I(t)) (r/t)^{2I(t)} D(t)/t^{m−2} ≤ D(r)/r^{m−2}`
    pub energy_lower: f64,
    /// `D(r)/r^{m−2} ≤ (r/t)^{2I(r)} D(t)/t^{m−2}`
    pub energy_upper: f64,
}

impl DoublingReport {
    pub fn min_slack(&self) -> f64 {
        self.height_lower
            .min(self.height_upper)
            .min(self.energy_lower)
            .min(self.energy_upper)
    }
}

/// Relative errors of the two first variation identities at one radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub r: f64,
    /// `(m − 2) D`
    pub lhs1: f64,
    /// `r ∫|Du|² − 2r ∫Σ|∂_ν u_i|²`
    pub rhs1: f64,
    /// `|lhs1 − rhs1| / (r ∫|Du|²)`
    pub err1: f64,
    pub lhs2: f64,
    pub rhs2: f64,
    pub err2: f64,
}

fn sharp_weight(t: f64) -> f64 {
    if t < 1.0 {
        1.0
    } else {
        0.0
    }
}

/// The smoothing cutoff: `1` on `[0, ½]`, `2(1 − t)` on `[½, 1]`, `0` after.
pub fn smoothed_cutoff(t: f64) -> f64 {
    if t <= 0.5 {
        1.0
    } else if t < 1.0 {
        2.0 * (1.0 - t)
    } else {
        0.0
    }
}

/// `−φ′`: `2` on `(½, 1)`, `0` elsewhere.
fn smoothed_cutoff_slope(t: f64) -> f64 {
    if t > 0.5 && t < 1.0 {
        2.0
    } else {
        0.0
    }
}

/// A Q-valued function together with its gradients, for repeated D/H/I queries.
pub struct Analysis<'a> {
    pub u: &'a QFunction,
    pub grad: Gradients,
}

impl<'a> Analysis<'a> {
    pub fn new(u: &'a QFunction, strict: bool) -> Result<Self> {
        Ok(Analysis {
            u,
            grad: gradients(u, strict)?,
        })
    }

    fn check_center(&self, x: &[f64], r: f64) -> Result<()> {
        let m = self.u.grid.m;
        if x.len() != m {
            return Err(Error::MismatchedDimension {
                expected: m,
                got: x.len(),
            });
        }
        if math::abs(x[m - 1]) > 1e-12 {
            return Err(Error::InvalidParameter(
                "center must lie on the flat face".into(),
            ));
        }
        if !(r > 0.0) || r > 1.0 - math::norm(x) + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "radius {r} must lie in (0, 1 − |x|]"
            )));
        }
        Ok(())
    }

    /// `D(x, r) = ∫_{B_r⁺(x)} |Du|²`
    pub fn energy(&self, x: &[f64], r: f64) -> Result<f64> {
        self.check_center(x, r)?;
        let w = Weight {
            f: &sharp_weight,
            kinks: &[1.0],
            support: 1.0,
        };
        Ok(volume_sum(&self.u.grid, x, r, &w, &|idx, _| {
            self.grad.energy_density(idx)
        }))
    }

    /// `∫_{B_r⁺(x)} |u|²`
    pub fn l2_mass(&self, x: &[f64], r: f64) -> Result<f64> {
        self.check_center(x, r)?;
        let w = Weight {
            f: &sharp_weight,
            kinks: &[1.0],
            support: 1.0,
        };
        Ok(volume_sum(&self.u.grid, x, r, &w, &|idx, _| {
            self.u.norm_sq_at(idx)
        }))
    }

    /// All spherical integrals at once.
    pub fn surface(&self, x: &[f64], r: f64) -> Result<SurfaceTerms> {
        self.check_center(x, r)?;
        let g = &self.u.grid;
        let (q, m, n) = (self.u.q, g.m, self.u.n);
        let mut out = SurfaceTerms::default();
        for (p, nu, wt) in hemisphere(m, x, r, g.h) {
            let (corners, weights) = cell_corners(g, &p);
            for (c, cw) in corners.iter().zip(&weights) {
                if *cw == 0.0 {
                    continue;
                }
                let a = self.u.atoms(*c);
                let gr = self.grad.at(*c);
                let mut normal = 0.0;
                let mut flux = 0.0;
                for i in 0..q {
                    for comp in 0..n {
                        let dn: f64 = (0..m).map(|k| nu[k] * gr[(i * m + k) * n + comp]).sum();
                        normal += dn * dn;
                        flux += dn * a[i * n + comp];
                    }
                }
                let s = wt * cw;
                out.height += s * math::norm_sq(a);
                out.energy += s * math::norm_sq(gr);
                out.normal_energy += s * normal;
                out.flux += s * flux;
            }
        }
        Ok(out)
    }

    /// `H(x, r) = ∫_{∂B_r⁺(x)} |u|²`
    pub fn height(&self, x: &[f64], r: f64) -> Result<f64> {
        Ok(self.surface(x, r)?.height)
    }

    /// `(D, H, I)` with `I = rD/H`.
    pub fn sharp(&self, x: &[f64], r: f64) -> Result<(f64, f64, f64)> {
        let d = self.energy(x, r)?;
        let h = self.height(x, r)?;
        if !(h > 1e-300) {
            return Err(Error::VanishingHeight(r));
        }
        Ok((d, h, r * d / h))
    }

    /// Smoothed `(D, H, I)` with `H = −∫ φ′(|x−q|/r) |u|²/|x−q|`.
    pub fn smoothed(&self, x: &[f64], r: f64) -> Result<SmoothedFrequency> {
        self.check_center(x, r)?;
        let wd = Weight {
            f: &smoothed_cutoff,
            kinks: &[0.5, 1.0],
            support: 1.0,
        };
        let d = volume_sum(&self.u.grid, x, r, &wd, &|idx, _| {
            self.grad.energy_density(idx)
        });
        let wh = Weight {
            f: &smoothed_cutoff_slope,
            kinks: &[0.5, 1.0],
            support: 1.0,
        };
        let h = volume_sum(&self.u.grid, x, r, &wh, &|idx, p| {
            let dist = math::dist(p, x);
            if dist > 0.0 {
                self.u.norm_sq_at(idx) / dist
            } else {
                0.0
            }
        });
        let vanishing = d <= 1e-300 && h <= 1e-300;
        if !vanishing && !(h > 1e-300) {
            return Err(Error::VanishingHeight(r));
        }
        Ok(SmoothedFrequency {
            d,
            h,
            i: if vanishing { None } else { Some(r * d / h) },
        })
    }

    pub fn profile(
        &self,
        x: &[f64],
        radii: &[f64],
        variant: FrequencyVariant,
    ) -> Result<FrequencyProfile> {
        let mut radii = radii.to_vec();
        radii.sort_by(f64::total_cmp);
        let (mut dv, mut hv, mut iv) = (Vec::new(), Vec::new(), Vec::new());
        for &r in &radii {
            let (d, h, i) = match variant {
                FrequencyVariant::Sharp => self.sharp(x, r)?,
                FrequencyVariant::Smoothed => {
                    let s = self.smoothed(x, r)?;
                    (s.d, s.h, s.i.ok_or(Error::VanishingHeight(r))?)
                }
            };
            dv.push(d);
            hv.push(h);
            iv.push(i);
        }
        let defect = iv
            .windows(2)
            .map(|w| (w[0] - w[1]).max(0.0))
            .fold(0.0, f64::max);
        Ok(FrequencyProfile {
            center: x.to_vec(),
            radii,
            d: dv,
            h: hv,
            i: iv,
            variant,
            defect,
        })
    }

    pub fn doubling(&self, x: &[f64], r: f64, t: f64) -> Result<DoublingReport> {
        if !(r < t) {
            return Err(Error::InvalidParameter("need r < t".into()));
        }
        let m = self.u.grid.m as i32;
        let (d_r, h_r, i_r) = self.sharp(x, r)?;
        let (d_t, h_t, i_t) = self.sharp(x, t)?;
        let rel = |lo: f64, hi: f64| (hi - lo) / lo.abs().max(hi.abs()).max(1e-300);
        let ratio = r / t;
        let hr = h_r / powi(r, m - 1);
        let ht = h_t / powi(t, m - 1);
        let dr = d_r / powi(r, m - 2);
        let dt = d_t / powi(t, m - 2);
        Ok(DoublingReport {
            r,
            t,
            h_r,
            h_t,
            d_r,
            d_t,
            i_r,
            i_t,
            height_lower: rel(powf(ratio, 2.0 * i_t) * ht, hr),
            height_upper: rel(hr, powf(ratio, 2.0 * i_r) * ht),
            energy_lower: if i_t > 0.0 {
                rel(i_r / i_t * powf(ratio, 2.0 * i_t) * dt, dr)
            } else {
                0.0
            },
            energy_upper: rel(dr, powf(ratio, 2.0 * i_r) * dt),
        })
    }

    /// Height decay at center `x` with outer radius `R = 1 − |x|`, rescaled:
    /// `∫_{B_r⁺}|u|² ≤ r^{m+2α} R^{1−m−2α} ∫_{∂B_R⁺}|u|² / (m+1)`. Returns the relative slack.
    pub fn height_decay(&self, x: &[f64], r: f64, alpha: f64) -> Result<f64> {
        let big = 1.0 - math::norm(x);
        let m = self.u.grid.m as f64;
        let lhs = self.l2_mass(x, r)?;
        let rhs =
            powf(r, m + 2.0 * alpha) * powf(big, 1.0 - m - 2.0 * alpha) * self.height(x, big)?
                / (m + 1.0);
        Ok((rhs - lhs) / lhs.abs().max(rhs.abs()).max(1e-300))
    }

    pub fn identities(&self, x: &[f64], r: f64) -> Result<IdentityReport> {
        let d = self.energy(x, r)?;
        let s = self.surface(x, r)?;
        let m = self.u.grid.m as f64;
        let lhs1 = (m - 2.0) * d;
        let rhs1 = r * s.energy - 2.0 * r * s.normal_energy;
        Ok(IdentityReport {
            r,
            lhs1,
            rhs1,
            err1: math::abs(lhs1 - rhs1) / (r * s.energy).max(1e-300),
            lhs2: d,
            rhs2: s.flux,
            err2: math::abs(d - s.flux) / d.abs().max(1e-300),
        })
    }
}

/// `D(x, r)` (non-strict matching).
pub fn dirichlet_energy(u: &QFunction, x: &[f64], r: f64) -> Result<f64> {
    Analysis::new(u, false)?.energy(x, r)
}

/// `H(x, r)`
pub fn spherical_height(u: &QFunction, x: &[f64], r: f64) -> Result<f64> {
    Analysis::new(u, false)?.height(x, r)
}

pub fn frequency(
    u: &QFunction,
    x: &[f64],
    radii: &[f64],
    variant: FrequencyVariant,
) -> Result<FrequencyProfile> {
    Analysis::new(u, false)?.profile(x, radii, variant)
}

pub fn smoothed_frequency(u: &QFunction, q: &[f64], r: f64) -> Result<SmoothedFrequency> {
    Analysis::new(u, false)?.smoothed(q, r)
}

pub fn energy_doubling_check(u: &QFunction, x: &[f64], r: f64, t: f64) -> Result<DoublingReport> {
    Analysis::new(u, false)?.doubling(x, r, t)
}

/// Settings for [`solve_dirichlet`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Bound on the Jacobi-scaled residual, relative to `max(1, |g|_∞)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub unknowns: usize,
    pub iterations: usize,
    pub residual: f64,
}

/// Sparse rows of the Jacobi-scaled Shortley–Weller Laplacian.
struct Stencil {
    rows: Vec<Vec<(usize, f64)>>,
    /// Boundary contributions per row: `(coefficient, boundary point)`.
    bdry: Vec<Vec<(f64, Vec<f64>)>>,
}

fn interior(x: &[f64], m: usize) -> bool {
    x[m - 1] > 0.5e-12 && math::norm_sq(x) < 1.0 - 1e-12
}

fn build_stencil(g: &HalfBallGrid, unknown: &[usize], slot: &[usize]) -> Stencil {
    let m = g.m;
    let h = g.h;
    let mut rows = Vec::with_capacity(unknown.len());
    let mut bdry = Vec::with_capacity(unknown.len());
    for &idx in unknown {
        let x = g.point(idx);
        let mut diag = 0.0;
        let mut row = Vec::new();
        let mut b = Vec::new();
        let mut arms: Vec<[(f64, Option<usize>, Option<Vec<f64>>); 2]> = Vec::with_capacity(m);
        for d in 0..m {
            let mut pair: [(f64, Option<usize>, Option<Vec<f64>>); 2] =
                [(h, None, None), (h, None, None)];
            for (s, slot_s) in [(1.0, 0usize), (-1.0, 1usize)] {
                let nb = g.neighbor(idx, d, s > 0.0);
                let mut y = x.clone();
                y[d] += s * h;
                if d == m - 1 && y[d] <= 0.5e-12 {
                    // flat face: zero data
                    pair[slot_s] = (h, None, Some(Vec::new()));
                } else if interior(&y, m) {
                    pair[slot_s] = (h, nb, None);
                } else {
                    let t = -s * x[d] + sqrt(x[d] * x[d] + 1.0 - math::norm_sq(&x));
                    let t = t.clamp(1e-9 * h, h);
                    let mut p = x.clone();
                    p[d] += s * t;
                    pair[slot_s] = (t, None, Some(p));
                }
            }
            arms.push(pair);
        }
        for pair in &arms {
            let (a, bb) = (pair[0].0, pair[1].0);
            for (len, nb, bp) in pair.iter() {
                let coef = 2.0 / ((a + bb) * len);
                diag += coef;
                match (nb, bp) {
                    (Some(j), _) => row.push((slot[*j], coef)),
                    (None, Some(p)) if !p.is_empty() => b.push((coef, p.clone())),
                    _ => {}
                }
            }
        }
        // scale by the diagonal
        let row: Vec<(usize, f64)> = row.into_iter().map(|(j, c)| (j, -c / diag)).collect();
        let b: Vec<(f64, Vec<f64>)> = b.into_iter().map(|(c, p)| (c / diag, p)).collect();
        rows.push(row);
        bdry.push(b);
    }
    Stencil { rows, bdry }
}

/// `x − Σ_j c_j x_j` for the scaled rows.
fn apply(rows: &[Vec<(usize, f64)>], x: &[f64], out: &mut [f64]) {
    for (i, row) in rows.iter().enumerate() {
        let mut s = x[i];
        for &(j, c) in row {
            s += c * x[j];
        }
        out[i] = s;
    }
}

fn bicgstab(
    rows: &[Vec<(usize, f64)>],
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(math::abs(*x)));
    let target = tol * inf(b).max(1.0);
    if inf(&r) <= target {
        return Ok((x, 0, inf(&r)));
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = math::dot(&r0, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        apply(rows, &p, &mut v);
        alpha = rho / math::dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if inf(&s) <= target {
            math::axpy(&mut x, alpha, &p);
            let mut res = vec![0.0; n];
            apply(rows, &x, &mut res);
            let true_res = inf(&res.iter().zip(b).map(|(a, bb)| bb - a).collect::<Vec<_>>());
            if true_res <= target {
                return Ok((x, it, true_res));
            }
            r = res.iter().zip(b).map(|(a, bb)| bb - a).collect();
            continue;
        }
        apply(rows, &s, &mut t);
        omega = math::dot(&t, &s) / math::dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        if inf(&r) <= target {
            let mut res = vec![0.0; n];
            apply(rows, &x, &mut res);
            let true_res = inf(&res.iter().zip(b).map(|(a, bb)| bb - a).collect::<Vec<_>>());
            if true_res <= target {
                return Ok((x, it, true_res));
            }
            r = res.iter().zip(b).map(|(a, bb)| bb - a).collect();
        }
    }
    let mut res = vec![0.0; n];
    apply(rows, &x, &mut res);
    let true_res = inf(&res.iter().zip(b).map(|(a, bb)| bb - a).collect::<Vec<_>>());
    if true_res <= target {
        return Ok((x, max_iter, true_res));
    }
    Err(Error::NoConvergence(true_res))
}

/// Sheetwise discrete harmonic extension with zero trace on the face.
///
/// `boundary(y)` returns the `Q` atoms at a point `y` of the unit sphere, grouped by sheet
/// in the order of `sheets` (multiplicities). Atoms within a group must agree.
/// Nodes outside the ball carry the data of their radial projection.
pub fn solve_dirichlet<F>(
    grid: &HalfBallGrid,
    n: usize,
    boundary: F,
    sheets: &[usize],
    opts: &SolveOptions,
) -> Result<(QFunction, SolveStats)>
where
    F: Fn(&[f64]) -> Vec<Vec<f64>>,
{
    let q: usize = sheets.iter().sum();
    if sheets.is_empty() || sheets.contains(&0) {
        return Err(Error::InvalidParameter(
            "sheet multiplicities must be positive".into(),
        ));
    }
    let m = grid.m;
    // one representative function per sheet, checked for separability
    let sheet_value = |y: &[f64]| -> Result<Vec<Vec<f64>>> {
        let atoms = boundary(y);
        if atoms.len() != q {
            return Err(Error::MismatchedQ(q, atoms.len()));
        }
        let mut out = Vec::with_capacity(sheets.len());
        let mut at = 0;
        for &k in sheets {
            let first = &atoms[at];
            if first.len() != n {
                return Err(Error::MismatchedDimension {
                    expected: n,
                    got: first.len(),
                });
            }
            for a in &atoms[at + 1..at + k] {
                if math::dist_sq(a, first) > 1e-24 * (1.0 + math::norm_sq(first)) {
                    return Err(Error::NonSeparableBoundary);
                }
            }
            out.push(first.clone());
            at += k;
        }
        Ok(out)
    };

    let unknown: Vec<usize> = (0..grid.len())
        .filter(|&i| interior(&grid.point(i), m))
        .collect();
    let mut slot = vec![usize::MAX; grid.len()];
    for (s, &i) in unknown.iter().enumerate() {
        slot[i] = s;
    }
    let stencil = build_stencil(grid, &unknown, &slot);
    // boundary values at every Shortley–Weller boundary point
    let mut bvals: Vec<Vec<Vec<Vec<f64>>>> = Vec::with_capacity(unknown.len());
    let mut scale: f64 = 0.0;
    for row in &stencil.bdry {
        let mut vals = Vec::with_capacity(row.len());
        for (_, p) in row {
            let v = sheet_value(p)?;
            scale = v.iter().flatten().fold(scale, |a, x| a.max(math::abs(*x)));
            vals.push(v);
        }
        bvals.push(vals);
    }

    let nu = unknown.len();
    let mut sol = vec![vec![vec![0.0; nu]; n]; sheets.len()];
    let mut stats = SolveStats {
        unknowns: nu,
        ..SolveStats::default()
    };
    for s in 0..sheets.len() {
        for c in 0..n {
            let rhs: Vec<f64> = stencil
                .bdry
                .iter()
                .zip(&bvals)
                .map(|(row, vals)| {
                    row.iter()
                        .zip(vals)
                        .map(|((coef, _), v)| coef * v[s][c])
                        .sum()
                })
                .collect();
            let (x, it, res) = bicgstab(
                &stencil.rows,
                &rhs,
                opts.tol * scale.max(1.0) / rhs.iter().fold(1.0f64, |a, x| a.max(math::abs(*x))),
                opts.max_iter,
            )?;
            stats.iterations = stats.iterations.max(it);
            stats.residual = stats.residual.max(res);
            sol[s][c] = x;
        }
    }

    let mut values = Vec::with_capacity(grid.len() * q * n);
    for idx in 0..grid.len() {
        let x = grid.point(idx);
        let per_sheet: Vec<Vec<f64>> = if slot[idx] != usize::MAX {
            (0..sheets.len())
                .map(|s| (0..n).map(|c| sol[s][c][slot[idx]]).collect())
                .collect()
        } else if grid.on_face(idx) {
            vec![vec![0.0; n]; sheets.len()]
        } else {
            let mut y = x.clone();
            math::normalize(&mut y);
            sheet_value(&y)?
        };
        for (s, &k) in sheets.iter().enumerate() {
            for _ in 0..k {
                values.extend_from_slice(&per_sheet[s]);
            }
        }
    }
    Ok((
        QFunction {
            grid: grid.clone(),
            q,
            n,
            values,
            zero_trace: true,
        },
        stats,
    ))
}

/// `f_{y,ρ}(x) = ρ^{(m−2)/2} f(ρx + y) / √Dir(f, B_ρ(y))`, resampled on the same grid.
pub fn blowup(u: &QFunction, y: &[f64], rho: f64) -> Result<QFunction> {
    let an = Analysis::new(u, false)?;
    let dir = an.energy(y, rho)?;
    if !(dir > 1e-300) {
        return Err(Error::ZeroEnergy);
    }
    let m = u.grid.m;
    let factor = powf(rho, (m as f64 - 2.0) / 2.0) / sqrt(dir);
    let g = &u.grid;
    let w = u.q * u.n;
    let mut values = Vec::with_capacity(g.len() * w);
    for idx in 0..g.len() {
        if u.zero_trace && g.on_face(idx) {
            values.extend(core::iter::repeat_n(0.0, w));
            continue;
        }
        let x = g.point(idx);
        let p: Vec<f64> = x.iter().zip(y).map(|(a, b)| rho * a + b).collect();
        values.extend(u.eval(&p).into_iter().map(|v| v * factor));
    }
    Ok(QFunction {
        grid: g.clone(),
        q: u.q,
        n: u.n,
        values,
        zero_trace: u.zero_trace,
    })
}

/// Linear fit at one radius of [`decay_to_linear`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearDecay {
    pub radius: f64,
    pub map: LinearQMap,
    /// `r^{−(m+2)} ∫_{B_r⁺} 𝒢(u, L)²`
    pub residual: f64,
    pub alpha: f64,
}

/// Fits `L = L₀ ⊕ Q⟦v̄ x_m⟧` on `B_r⁺(x)`: `v̄` regresses the average, `L₀` the average-free part
/// by alternating matching and least squares.
pub fn fit_linear(u: &QFunction, x: &[f64], r: f64) -> Result<LinearDecay> {
    let g = &u.grid;
    let (q, n, m) = (u.q, u.n, g.m);
    let nodes: Vec<usize> = (0..g.len())
        .filter(|&i| {
            let p = g.point(i);
            p[m - 1] > 0.0 && math::dist_sq(&p, x) < r * r
        })
        .collect();
    if nodes.is_empty() {
        return Err(Error::EmptyBall);
    }
    let xm = |i: usize| g.point(i)[m - 1];
    let denom: f64 = nodes.iter().map(|&i| xm(i) * xm(i)).sum();
    let mut vbar = vec![0.0; n];
    for &i in &nodes {
        let a = u.atoms(i);
        for c in 0..n {
            let avg: f64 = (0..q).map(|k| a[k * n + c]).sum::<f64>() / q as f64;
            vbar[c] += xm(i) * avg / denom;
        }
    }
    let free = |i: usize| -> Vec<f64> {
        let a = u.atoms(i);
        let mut out = a.to_vec();
        for k in 0..q {
            for c in 0..n {
                let avg: f64 = (0..q).map(|l| a[l * n + c]).sum::<f64>() / q as f64;
                out[k * n + c] -= avg;
            }
        }
        out
    };
    // start from the node nearest to x + (r/2) e_m
    let mut probe = x.to_vec();
    probe[m - 1] += 0.5 * r;
    let start = *nodes
        .iter()
        .min_by(|&&a, &&b| {
            math::dist_sq(&g.point(a), &probe).total_cmp(&math::dist_sq(&g.point(b), &probe))
        })
        .unwrap();
    let mut v: Vec<f64> = free(start).iter().map(|a| a / xm(start)).collect();
    for _ in 0..100 {
        let mut next = vec![0.0; q * n];
        for &i in &nodes {
            let t = xm(i);
            let pred: Vec<f64> = v.iter().map(|a| a * t).collect();
            let b = free(i);
            let (perm, _, _) = match_atoms(&pred, &b, q, n);
            for k in 0..q {
                for c in 0..n {
                    next[k * n + c] += t * b[perm[k] * n + c] / denom;
                }
            }
        }
        let change = math::dist_sq(&next, &v);
        v = next;
        if change <= 1e-28 * (1.0 + math::norm_sq(&v)) {
            break;
        }
    }
    // group equal directions into multiplicities
    let mut dirs: Vec<(Vec<f64>, usize)> = Vec::new();
    let tol = 1e-9 * (1.0 + math::norm(&v));
    for k in 0..q {
        let d: Vec<f64> = (0..n).map(|c| v[k * n + c] + vbar[c]).collect();
        match dirs.iter_mut().find(|(e, _)| math::dist(e, &d) <= tol) {
            Some(e) => e.1 += 1,
            None => dirs.push((d, 1)),
        }
    }
    let map = LinearQMap::new(dirs)?;
    let w = Weight {
        f: &sharp_weight,
        kinks: &[1.0],
        support: 1.0,
    };
    let residual = volume_sum(g, x, r, &w, &|idx, p| {
        let l = map.eval(p[m - 1]);
        let flat: Vec<f64> = l.atoms().iter().flatten().copied().collect();
        match_atoms(&flat, u.atoms(idx), q, n).1
    }) / powi(r, m as i32 + 2);
    Ok(LinearDecay {
        radius: r,
        alpha: map.alpha(),
        map,
        residual,
    })
}

/// Per radius: fitted linear map, normalized residual and `α(L_j)`.
pub fn decay_to_linear(u: &QFunction, x: &[f64], radii: &[f64]) -> Result<Vec<LinearDecay>> {
    if !u.zero_trace {
        return Err(Error::InvalidParameter(
            "decay_to_linear needs zero trace".into(),
        ));
    }
    radii.iter().map(|&r| fit_linear(u, x, r)).collect()
}

/// Closed-form zero-trace fixtures; the half-space coordinate is the last one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fixture {
    /// `Σ Q_i ⟦v_i x_m⟧`
    Linear(LinearQMap),
    /// `Im((x₁ + i x_m)^k) · v`, homogeneous of degree `k` (`m = 2` uses `x_m = x₂`).
    Polar { degree: u32, direction: Vec<f64> },
    /// `⟦v x_m + c x₁ x_m⟧`
    LinearQuadratic { v: Vec<f64>, c: f64 },
    /// `⟦± x₃ Re((x₁ + i x₂)^{1/2})⟧` in `m = 3`, homogeneous of degree 3/2.
    Branch { scale: f64 },
}

impl Fixture {
    pub fn q(&self) -> usize {
        match self {
            Fixture::Linear(l) => l.q(),
            Fixture::Polar { .. } | Fixture::LinearQuadratic { .. } => 1,
            Fixture::Branch { .. } => 2,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Fixture::Linear(l) => l.directions.first().map_or(1, |d| d.0.len()),
            Fixture::Polar { direction, .. } => direction.len(),
            Fixture::LinearQuadratic { v, .. } => v.len(),
            Fixture::Branch { .. } => 1,
        }
    }

    fn min_dim(&self) -> usize {
        match self {
            Fixture::Branch { .. } => 3,
            _ => 2,
        }
    }

    /// Degree of homogeneity, when homogeneous.
    pub fn homogeneity(&self) -> Option<f64> {
        match self {
            Fixture::Linear(_) => Some(1.0),
            Fixture::Polar { degree, .. } => Some(*degree as f64),
            Fixture::LinearQuadratic { c, .. } => (*c == 0.0).then_some(1.0),
            Fixture::Branch { .. } => Some(1.5),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let m = x.len();
        let t = x[m - 1];
        match self {
            Fixture::Linear(l) => l.eval(t).atoms().to_vec(),
            Fixture::Polar { degree, direction } => {
                let (mut re, mut im) = (1.0, 0.0);
                for _ in 0..*degree {
                    let nre = re * x[0] - im * t;
                    im = re * t + im * x[0];
                    re = nre;
                }
                vec![math::scale(direction, im)]
            }
            Fixture::LinearQuadratic { v, c } => vec![math::scale(v, t + c * x[0] * t)],
            Fixture::Branch { scale } => {
                let rho = sqrt(x[0] * x[0] + x[1] * x[1]);
                let s = scale * t * sqrt(0.5 * (rho + x[0]).max(0.0));
                vec![vec![s], vec![-s]]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn linear(dirs: &[(f64, usize)]) -> Fixture {
        Fixture::Linear(LinearQMap::new(dirs.iter().map(|&(v, q)| (vec![v], q)).collect()).unwrap())
    }

    fn half_ball_volume(m: usize) -> f64 {
        0.5 * math::unit_ball_volume(m)
    }

    #[test]
    fn grid_indexing_roundtrips() {
        let g = HalfBallGrid::new(3, 0.25).unwrap();
        for idx in (0..g.len()).step_by(7) {
            assert_eq!(g.index_of(&g.multi_index(idx)), Some(idx));
        }
        assert!(g.index_of(&[0, 0, -1]).is_none());
        let origin = g.index_of(&[0, 0, 0]).unwrap();
        assert!(g.on_face(origin));
        let top = g.index_of(&[0, 0, 4]).unwrap();
        assert!(g.on_sphere(top) && g.in_half_ball(top) && !g.on_face(top));
        assert!(HalfBallGrid::new(4, 0.1).is_err());
        assert!(HalfBallGrid::new(2, 0.0).is_err());
    }

    #[test]
    fn zero_trace_is_exact() {
        let g = HalfBallGrid::new(2, 1.0 / 16.0).unwrap();
        let u = QFunction::from_fixture(&g, &linear(&[(1.0, 1), (-2.0, 1)])).unwrap();
        assert!(u.zero_trace);
        for idx in (0..g.len()).filter(|&i| g.on_face(i)) {
            assert!(u.atoms(idx).iter().all(|v| *v == 0.0));
        }
        let shifted = QFunction::from_fn(&g, 1, 1, |x| vec![vec![x[1] + 1.0]]).unwrap();
        assert!(!shifted.zero_trace);
    }

    #[test]
    fn linear_energy_and_height() {
        for m in [2, 3] {
            let h = if m == 2 { 1.0 / 64.0 } else { 1.0 / 24.0 };
            let g = HalfBallGrid::new(m, h).unwrap();
            let u = QFunction::from_fixture(&g, &linear(&[(1.0, 1), (-0.5, 2)])).unwrap();
            let an = Analysis::new(&u, false).unwrap();
            let x = vec![0.0; m];
            let q_v2 = 1.0 + 2.0 * 0.25;
            let d = an.energy(&x, 1.0).unwrap();
            assert!((d - q_v2 * half_ball_volume(m)).abs() < 5.0 * h, "{m}: {d}");
            let hh = an.height(&x, 1.0).unwrap();
            // ∫ x_m² over the unit hemisphere
            let exact = if m == 2 { PI / 2.0 } else { 2.0 * PI / 3.0 };
            assert!((hh / (q_v2 * exact) - 1.0).abs() < 2.0 * h * h, "{m}: {hh}");
        }
    }

    #[test]
    fn zero_function_has_zero_energy() {
        let g = HalfBallGrid::new(2, 1.0 / 16.0).unwrap();
        let u = QFunction::from_fn(&g, 2, 1, |_| vec![vec![0.0], vec![0.0]]).unwrap();
        assert_eq!(dirichlet_energy(&u, &[0.0, 0.0], 1.0).unwrap(), 0.0);
        assert_eq!(spherical_height(&u, &[0.0, 0.0], 1.0).unwrap(), 0.0);
        assert!(matches!(
            frequency(&u, &[0.0, 0.0], &[0.5], FrequencyVariant::Sharp),
            Err(Error::VanishingHeight(_))
        ));
        let s = smoothed_frequency(&u, &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(s.i, None);
    }

    /// `∫_{S⁺}|Du|²` for the branch fixture by dense angular quadrature of the analytic gradient.
    fn branch_energy_oracle() -> f64 {
        // u = x₃ s with s = √((ρ + x₁)/2): |∇u|² = s² + x₃² |∇s|², |∇s|² = 1/(4ρ)
        let (kp, ka) = (2000, 4000);
        let mut sum = 0.0;
        for j in 0..kp {
            let psi = (j as f64 + 0.5) * 0.5 * PI / kp as f64;
            for l in 0..ka {
                let phi = (l as f64 + 0.5) * 2.0 * PI / ka as f64;
                let (x1, x3) = (math::sin(psi) * math::cos(phi), math::cos(psi));
                let rho = math::sin(psi);
                let s2 = 0.5 * (rho + x1);
                let e = 2.0 * (s2 + x3 * x3 / (4.0 * rho));
                sum += e * math::sin(psi) * (0.5 * PI / kp as f64) * (2.0 * PI / ka as f64);
            }
        }
        // D(1) = ∫₀¹ ρ^{m+2α−3} dρ · ∫_{S⁺}|Du|² with m + 2α − 2 = 4
        sum / 4.0
    }

    #[test]
    fn branch_energy_matches_quadrature_oracle() {
        let exact = branch_energy_oracle();
        let mut prev = f64::INFINITY;
        for h in [1.0 / 12.0, 1.0 / 24.0] {
            let g = HalfBallGrid::new(3, h).unwrap();
            let u = QFunction::from_fixture(&g, &Fixture::Branch { scale: 1.0 }).unwrap();
            let d = dirichlet_energy(&u, &[0.0; 3], 0.8).unwrap();
            let want = exact * powi(0.8, 4);
            let err = (d - want).abs() / want;
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 0.03, "{prev}");
    }

    #[test]
    fn homogeneous_heights_scale() {
        let g = HalfBallGrid::new(2, 1.0 / 64.0).unwrap();
        let f = Fixture::Polar {
            degree: 3,
            direction: vec![1.0],
        };
        let u = QFunction::from_fixture(&g, &f).unwrap();
        let an = Analysis::new(&u, false).unwrap();
        let base = an.height(&[0.0, 0.0], 0.9).unwrap() / powi(0.9, 1 + 6);
        for r in [0.4, 0.6, 0.8] {
            let v = an.height(&[0.0, 0.0], r).unwrap() / powi(r, 1 + 6);
            assert!((v / base - 1.0).abs() < 1e-2, "{r}");
        }
    }

    #[test]
    fn frequencies_of_homogeneous_fixtures() {
        let g = HalfBallGrid::new(2, 1.0 / 64.0).unwrap();
        let radii = [0.2, 0.4, 0.6, 0.8];
        let cases = [
            (linear(&[(1.0, 1), (-1.0, 1)]), 1.0),
            (
                Fixture::Polar {
                    degree: 2,
                    direction: vec![1.0],
                },
                2.0,
            ),
        ];
        for (f, alpha) in cases {
            let u = QFunction::from_fixture(&g, &f).unwrap();
            let an = Analysis::new(&u, false).unwrap();
            let sharp = an
                .profile(&[0.0, 0.0], &radii, FrequencyVariant::Sharp)
                .unwrap();
            let smooth = an
                .profile(&[0.0, 0.0], &radii, FrequencyVariant::Smoothed)
                .unwrap();
            for (a, b) in sharp.i.iter().zip(&smooth.i) {
                assert!((a - alpha).abs() < 0.03 * alpha, "{a} vs {alpha}");
                assert!((a - b).abs() < 0.05 * a);
            }
            assert!(sharp.defect < 0.02);
        }
    }

    #[test]
    fn branch_frequency_is_three_halves() {
        let g = HalfBallGrid::new(3, 1.0 / 24.0).unwrap();
        let u = QFunction::from_fixture(&g, &Fixture::Branch { scale: 1.0 }).unwrap();
        let p = frequency(
            &u,
            &[0.0; 3],
            &[0.3, 0.5, 0.7, 0.9],
            FrequencyVariant::Sharp,
        )
        .unwrap();
        for i in &p.i {
            assert!((i - 1.5).abs() < 0.05, "{i}");
        }
    }

    #[test]
    fn smoothed_linear_frequency_is_one() {
        let f = linear(&[(1.0, 1)]);
        let mut vals = Vec::new();
        for h in [1.0 / 32.0, 1.0 / 64.0] {
            let g = HalfBallGrid::new(2, h).unwrap();
            let u = QFunction::from_fixture(&g, &f).unwrap();
            vals.push(smoothed_frequency(&u, &[0.0, 0.0], 0.8).unwrap().i.unwrap());
        }
        for v in vals {
            assert!((v - 1.0).abs() < 2e-3, "{v}");
        }
    }

    #[test]
    fn doubling_slacks_vanish_on_cones() {
        let g = HalfBallGrid::new(2, 1.0 / 64.0).unwrap();
        let f = Fixture::Polar {
            degree: 2,
            direction: vec![1.0],
        };
        let u = QFunction::from_fixture(&g, &f).unwrap();
        let rep = energy_doubling_check(&u, &[0.0, 0.0], 0.3, 0.8).unwrap();
        for s in [
            rep.height_lower,
            rep.height_upper,
            rep.energy_lower,
            rep.energy_upper,
        ] {
            assert!(s.abs() < 0.03, "{rep:?}");
        }
        let an = Analysis::new(&u, false).unwrap();
        assert!(an.height_decay(&[0.0, 0.0], 0.5, 2.0).unwrap() >= -0.02);
    }

    #[test]
    fn doubling_on_perturbed_linear() {
        let g = HalfBallGrid::new(2, 1.0 / 64.0).unwrap();
        let u =
            QFunction::from_fn(&g, 1, 1, |x| vec![vec![x[1] + 0.2 * 2.0 * x[0] * x[1]]]).unwrap();
        let rep = energy_doubling_check(&u, &[0.0, 0.0], 0.25, 0.75).unwrap();
        assert!(rep.min_slack() >= -0.02, "{rep:?}");
    }

    #[test]
    fn solver_reproduces_harmonic_extensions() {
        let g = HalfBallGrid::new(2, 1.0 / 32.0).unwrap();
        let (u, stats) =
            solve_dirichlet(&g, 1, |y| vec![vec![y[1]]], &[1], &SolveOptions::default()).unwrap();
        assert!(stats.residual <= 1e-10);
        // u = x₂ is reproduced exactly by the five-point stencil
        for idx in (0..g.len()).filter(|&i| g.in_half_ball(i)) {
            assert!((u.atoms(idx)[0] - g.point(idx)[1]).abs() < 1e-8);
        }
        let d = dirichlet_energy(&u, &[0.0, 0.0], 1.0).unwrap();
        assert!((d - PI / 2.0).abs() < 0.1, "{d}");

        let (z, _) =
            solve_dirichlet(&g, 1, |_| vec![vec![0.0]], &[1], &SolveOptions::default()).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn solver_decouples_sheets() {
        let g = HalfBallGrid::new(2, 1.0 / 32.0).unwrap();
        let data = |y: &[f64]| {
            let v = y[1] + 0.3 * 2.0 * y[0] * y[1];
            vec![vec![v], vec![-v]]
        };
        let (two, _) = solve_dirichlet(&g, 1, data, &[1, 1], &SolveOptions::default()).unwrap();
        let (one, _) = solve_dirichlet(
            &g,
            1,
            |y| vec![data(y)[0].clone()],
            &[1],
            &SolveOptions::default(),
        )
        .unwrap();
        let e2 = dirichlet_energy(&two, &[0.0, 0.0], 0.9).unwrap();
        let e1 = dirichlet_energy(&one, &[0.0, 0.0], 0.9).unwrap();
        assert!((e2 - 2.0 * e1).abs() < 1e-9 * e1);
        assert!(matches!(
            solve_dirichlet(
                &g,
                1,
                |y| vec![vec![y[1]], vec![0.0]],
                &[2],
                &SolveOptions::default()
            ),
            Err(Error::NonSeparableBoundary)
        ));
    }

    #[test]
    fn identities_on_solver_output() {
        let data = |y: &[f64]| {
            let a = y[1] + 0.4 * 2.0 * y[0] * y[1];
            let b = -0.5 * y[1] + 0.3 * (3.0 * y[0] * y[0] * y[1] - y[1] * y[1] * y[1]);
            vec![vec![a], vec![b]]
        };
        let mut errs = Vec::new();
        for h in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
            let g = HalfBallGrid::new(2, h).unwrap();
            let (u, _) = solve_dirichlet(&g, 1, data, &[1, 1], &SolveOptions::default()).unwrap();
            let an = Analysis::new(&u, false).unwrap();
            let rep = an.identities(&[0.0, 0.0], 0.7).unwrap();
            errs.push(rep.err1.max(rep.err2));
        }
        assert!(errs[2] < 0.03, "{errs:?}");
        let order = math::ln(errs[0] / errs[2]) / math::ln(4.0);
        assert!(order >= 0.8, "{errs:?}");
    }

    #[test]
    fn blowups_of_cones_are_fixed_points() {
        let g = HalfBallGrid::new(2, 1.0 / 64.0).unwrap();
        let f = Fixture::Polar {
            degree: 2,
            direction: vec![1.0],
        };
        let u = QFunction::from_fixture(&g, &f).unwrap();
        let dir = dirichlet_energy(&u, &[0.0, 0.0], 1.0).unwrap();
        let b = blowup(&u, &[0.0, 0.0], 0.5).unwrap();
        let db = dirichlet_energy(&b, &[0.0, 0.0], 1.0).unwrap();
        assert!((db - 1.0).abs() < 0.01, "{db}");
        for idx in (0..g.len()).filter(|&i| g.in_half_ball(i)).step_by(37) {
            let want = u.atoms(idx)[0] / sqrt(dir);
            assert!((b.atoms(idx)[0] - want).abs() < 1e-2, "{idx}");
        }
        let l = QFunction::from_fixture(&g, &linear(&[(1.0, 1), (-2.0, 1)])).unwrap();
        let b1 = blowup(&l, &[0.1, 0.0], 0.3).unwrap();
        let b2 = blowup(&l, &[0.0, 0.0], 0.8).unwrap();
        let diff = b1
            .values
            .iter()
            .zip(&b2.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-2);
        let z = QFunction::from_fn(&g, 1, 1, |_| vec![vec![0.0]]).unwrap();
        assert!(matches!(
            blowup(&z, &[0.0, 0.0], 0.5),
            Err(Error::ZeroEnergy)
        ));
    }

    #[test]
    fn decay_to_linear_on_fixtures() {
        let g = HalfBallGrid::new(2, 1.0 / 64.0).unwrap();
        let l = linear(&[(1.0, 1), (-0.5, 2)]);
        let u = QFunction::from_fixture(&g, &l).unwrap();
        for fit in decay_to_linear(&u, &[0.0, 0.0], &[0.3, 0.6]).unwrap() {
            assert!(fit.residual < 1e-20);
            assert!((fit.alpha - 1.5).abs() < 1e-9);
        }

        let u = QFunction::from_fixture(
            &g,
            &Fixture::LinearQuadratic {
                v: vec![1.0],
                c: 0.5,
            },
        )
        .unwrap();
        let radii = [0.2, 0.4, 0.8];
        let fits = decay_to_linear(&u, &[0.0, 0.0], &radii).unwrap();
        let slope = math::ln(fits[2].residual / fits[0].residual) / math::ln(4.0);
        assert!((slope - 2.0).abs() < 0.2, "{slope}");
    }

    #[test]
    fn decay_of_branch_fixture_goes_to_zero_map() {
        let g = HalfBallGrid::new(3, 1.0 / 16.0).unwrap();
        let u = QFunction::from_fixture(&g, &Fixture::Branch { scale: 1.0 }).unwrap();
        let fits = decay_to_linear(&u, &[0.0; 3], &[0.4, 0.8]).unwrap();
        for f in &fits {
            let norm: f64 = f
                .map
                .directions
                .iter()
                .map(|(v, q)| *q as f64 * math::norm_sq(v))
                .sum();
            assert!(norm < 0.5, "{f:?}");
        }
        // residual decays like r^{2α − 2} = r
        assert!(fits[0].residual < fits[1].residual);
    }

    #[test]
    fn strict_matching_flags_crossings() {
        let g = HalfBallGrid::new(2, 1.0 / 16.0).unwrap();
        // two sheets crossing along x₁ = 0
        let u =
            QFunction::from_fn(&g, 2, 1, |x| vec![vec![x[0] * x[1]], vec![-x[0] * x[1]]]).unwrap();
        assert!(matches!(gradients(&u, true), Err(Error::SheetAmbiguity(_))));
        assert!(gradients(&u, false).is_ok());
        let sep = QFunction::from_fixture(&g, &linear(&[(1.0, 1), (-1.0, 1)])).unwrap();
        assert!(gradients(&sep, true).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn frequency_at_least_one_on_linear_maps(a in -2.0f64..2.0, b in -2.0f64..2.0, cx in -0.3f64..0.3) {
            prop_assume!((a - b).abs() > 0.1 && a.abs() + b.abs() > 0.1);
            let g = HalfBallGrid::new(2, 1.0 / 32.0).unwrap();
            let u = QFunction::from_fixture(&g, &linear(&[(a, 1), (b, 1)])).unwrap();
            let p = frequency(&u, &[cx, 0.0], &[0.2, 0.4, 0.6], FrequencyVariant::Sharp).unwrap();
            for i in &p.i {
                prop_assert!(*i >= 0.97);
            }
            prop_assert!(p.defect <= 0.02);
        }
    }
}
