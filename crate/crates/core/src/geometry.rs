//! Spines, half-planes, open books, wedges, the calibration form and the
//! layer subdivision of a book's sheets.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, angle, dot, norm, norm_sq, sqrt, tan};
use crate::qvalued::{q_metric, QPoint};

/// Tolerance for orthonormality and unit-length invariants.
pub const GEOM_TOL: f64 = 1e-12;

/// An affine `(m−1)`-plane `V` in `R^{m+n}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpineRepr", into = "SpineRepr")]
pub struct Spine {
    origin: Vec<f64>,
    basis: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SpineRepr {
    origin: Vec<f64>,
    basis: Vec<Vec<f64>>,
}

impl TryFrom<SpineRepr> for Spine {
    type Error = Error;
    fn try_from(r: SpineRepr) -> Result<Self> {
        Spine::new(r.origin, r.basis)
    }
}

impl From<Spine> for SpineRepr {
    fn from(s: Spine) -> Self {
        SpineRepr {
            origin: s.origin,
            basis: s.basis,
        }
    }
}

impl Spine {
    pub fn new(origin: Vec<f64>, basis: Vec<Vec<f64>>) -> Result<Self> {
        let d = origin.len();
        if basis.is_empty() {
            return Err(Error::InvalidSpine(
                "spine dimension must be at least 1".into(),
            ));
        }
        if basis.len() + 1 >= d {
            return Err(Error::InvalidSpine(format!(
                "spine of dimension {} leaves no room for sheets in R^{d}",
                basis.len()
            )));
        }
        for (i, b) in basis.iter().enumerate() {
            if b.len() != d {
                return Err(Error::MismatchedDimension {
                    expected: d,
                    got: b.len(),
                });
            }
            for (j, c) in basis.iter().enumerate().take(i + 1) {
                let target = if i == j { 1.0 } else { 0.0 };
                if math::abs(dot(b, c) - target) > GEOM_TOL {
                    return Err(Error::InvalidSpine("basis is not orthonormal".into()));
                }
            }
        }
        Ok(Spine { origin, basis })
    }

    /// `R^{m−1} × {0}` inside `R^{m+n}`.
    pub fn standard(m: usize, n: usize) -> Self {
        let d = m + n;
        Spine {
            origin: vec![0.0; d],
            basis: (0..m - 1).map(|k| math::unit(d, k)).collect(),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.origin.len()
    }

    pub fn spine_dim(&self) -> usize {
        self.basis.len()
    }

    /// The sheet dimension `m`.
    pub fn m(&self) -> usize {
        self.basis.len() + 1
    }

    /// The codimension parameter `n`.
    pub fn n(&self) -> usize {
        self.ambient_dim() - self.m()
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    /// Spine coordinates of `p − origin`.
    pub fn coords(&self, p: &[f64]) -> Vec<f64> {
        let z = math::sub(p, &self.origin);
        self.basis.iter().map(|b| dot(&z, b)).collect()
    }

    /// `p_{V⊥}(p − origin)` as an ambient vector.
    pub fn normal_part(&self, p: &[f64]) -> Vec<f64> {
        let mut z = math::sub(p, &self.origin);
        for b in &self.basis {
            let c = dot(&z, b);
            math::axpy(&mut z, -c, b);
        }
        z
    }

    pub fn dist_sq(&self, p: &[f64]) -> f64 {
        norm_sq(&self.normal_part(p))
    }

    pub fn dist(&self, p: &[f64]) -> f64 {
        sqrt(self.dist_sq(p))
    }

    /// Circular projection `(p_V(p), |p_{V⊥}(p)|)` in spine coordinates.
    pub fn circular(&self, p: &[f64]) -> Vec<f64> {
        let mut out = self.coords(p);
        out.push(self.dist(p));
        out
    }

    /// `σ(p) = p_{V⊥}(p)/|p_{V⊥}(p)|` as an ambient unit vector.
    pub fn sigma(&self, p: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.normal_part(p);
        let r = math::normalize(&mut y);
        if r <= GEOM_TOL * (1.0 + norm(p)) {
            return Err(Error::OnSpine);
        }
        Ok(y)
    }

    /// True if both spines describe the same affine plane.
    pub fn same_as(&self, other: &Spine) -> bool {
        if self.ambient_dim() != other.ambient_dim() || self.spine_dim() != other.spine_dim() {
            return false;
        }
        let tol = 1e-9;
        other.basis.iter().all(|b| {
            let mut r = b.clone();
            for c in &self.basis {
                let k = dot(&r, c);
                math::axpy(&mut r, -k, c);
            }
            norm(&r) <= tol
        }) && self.dist(&other.origin) <= tol
    }

    /// Rejects vectors that are not unit or not orthogonal to the spine.
    pub fn check_normal(&self, nu: &[f64]) -> Result<()> {
        if nu.len() != self.ambient_dim() {
            return Err(Error::MismatchedDimension {
                expected: self.ambient_dim(),
                got: nu.len(),
            });
        }
        if math::abs(norm(nu) - 1.0) > GEOM_TOL {
            return Err(Error::InvalidBook(
                "sheet normal is not a unit vector".into(),
            ));
        }
        if self.basis.iter().any(|b| math::abs(dot(b, nu)) > GEOM_TOL) {
            return Err(Error::InvalidBook(
                "sheet normal is not orthogonal to the spine".into(),
            ));
        }
        Ok(())
    }
}

/// `(x, y) ↦ (x, |y|)` with `x` the first `split` coordinates.
pub fn circular_projection(p: &[f64], split: usize) -> Vec<f64> {
    let mut out = p[..split].to_vec();
    out.push(norm(&p[split..]));
    out
}

/// `σ(x, y) = y/|y|` with `x` the first `split` coordinates.
pub fn sigma_direction(p: &[f64], split: usize) -> Result<Vec<f64>> {
    let mut y = p[split..].to_vec();
    if math::normalize(&mut y) <= GEOM_TOL * (1.0 + norm(p)) {
        return Err(Error::OnSpine);
    }
    Ok(y)
}

/// One sheet `V ⊕ R⁺ν` with its multiplicity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sheet {
    pub normal: Vec<f64>,
    pub multiplicity: usize,
}

/// `C = Σ Q_i ⟦H_i⟧`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BookRepr", into = "BookRepr")]
pub struct OpenBook {
    spine: Spine,
    sheets: Vec<Sheet>,
}

#[derive(Serialize, Deserialize)]
struct BookRepr {
    spine: Spine,
    sheets: Vec<Sheet>,
}

impl TryFrom<BookRepr> for OpenBook {
    type Error = Error;
    fn try_from(r: BookRepr) -> Result<Self> {
        OpenBook::new(r.spine, r.sheets)
    }
}

impl From<OpenBook> for BookRepr {
    fn from(b: OpenBook) -> Self {
        BookRepr {
            spine: b.spine,
            sheets: b.sheets,
        }
    }
}

impl OpenBook {
    pub fn new(spine: Spine, sheets: Vec<Sheet>) -> Result<Self> {
        if sheets.is_empty() {
            return Err(Error::InvalidBook("a book needs at least one sheet".into()));
        }
        for (i, s) in sheets.iter().enumerate() {
            spine.check_normal(&s.normal)?;
            if s.multiplicity == 0 {
                return Err(Error::InvalidBook("multiplicities must be positive".into()));
            }
            for t in &sheets[..i] {
                if angle(&s.normal, &t.normal) <= GEOM_TOL {
                    return Err(Error::DegenerateAngles);
                }
            }
        }
        Ok(OpenBook { spine, sheets })
    }

    /// Book over the standard spine with normals `cos θ e_m + sin θ e_{m+1}`.
    pub fn planar(m: usize, n: usize, sheets: &[(f64, usize)]) -> Result<Self> {
        let spine = Spine::standard(m, n);
        let d = m + n;
        let sheets = sheets
            .iter()
            .map(|&(theta, q)| {
                let mut nu = vec![0.0; d];
                nu[m - 1] = math::cos(theta);
                nu[m] = math::sin(theta);
                Sheet {
                    normal: nu,
                    multiplicity: q,
                }
            })
            .collect();
        OpenBook::new(spine, sheets)
    }

    /// Replaces the sheets, keeping the spine.
    pub fn with_sheets(&self, sheets: Vec<Sheet>) -> Result<Self> {
        OpenBook::new(self.spine.clone(), sheets)
    }

    pub fn spine(&self) -> &Spine {
        &self.spine
    }

    pub fn sheets(&self) -> &[Sheet] {
        &self.sheets
    }

    pub fn n_sheets(&self) -> usize {
        self.sheets.len()
    }

    pub fn q(&self) -> usize {
        self.sheets.iter().map(|s| s.multiplicity).sum()
    }

    pub fn m(&self) -> usize {
        self.spine.m()
    }

    pub fn ambient_dim(&self) -> usize {
        self.spine.ambient_dim()
    }

    pub fn sheet_angle(&self, i: usize, j: usize) -> f64 {
        angle(&self.sheets[i].normal, &self.sheets[j].normal)
    }

    /// Row-major `N × N` matrix of pairwise sheet angles.
    pub fn angle_matrix(&self) -> Vec<f64> {
        let n = self.n_sheets();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let t = self.sheet_angle(i, j);
                a[i * n + j] = t;
                a[j * n + i] = t;
            }
        }
        a
    }

    /// Pair realizing `α(C)`, lowest indices on ties.
    pub fn closest_pair(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..self.n_sheets() {
            for j in (i + 1)..self.n_sheets() {
                let t = self.sheet_angle(i, j);
                if best.is_none_or(|b| t < b.2) {
                    best = Some((i, j, t));
                }
            }
        }
        best
    }

    /// `η = Σ Q_i ⟦ν_i⟧`
    pub fn normal_tuple(&self) -> QPoint {
        let mut atoms = Vec::with_capacity(self.q());
        for s in &self.sheets {
            for _ in 0..s.multiplicity {
                atoms.push(s.normal.clone());
            }
        }
        QPoint::new(atoms)
    }

    /// Orthonormal tangent rows `(ν_i, e₁, …, e_{m−1})`, oriented so the calibration pairs to +1.
    pub fn sheet_tangent(&self, i: usize) -> Vec<Vec<f64>> {
        let mut rows = Vec::with_capacity(self.m());
        rows.push(self.sheets[i].normal.clone());
        rows.extend(self.spine.basis.iter().cloned());
        rows
    }

    /// Point of sheet `i` with spine coordinates `x` at height `t ≥ 0`.
    pub fn sheet_point(&self, i: usize, x: &[f64], t: f64) -> Vec<f64> {
        let mut p = self.spine.origin.clone();
        for (c, b) in x.iter().zip(&self.spine.basis) {
            math::axpy(&mut p, *c, b);
        }
        math::axpy(&mut p, t, &self.sheets[i].normal);
        p
    }

    /// Squared distance to the closed half-plane `H_i`.
    pub fn sheet_dist_sq(&self, i: usize, p: &[f64]) -> f64 {
        let w = self.spine.normal_part(p);
        let t = dot(&w, &self.sheets[i].normal);
        let w2 = norm_sq(&w);
        if t > 0.0 {
            (w2 - t * t).max(0.0)
        } else {
            w2
        }
    }

    /// Nearest sheet (lowest index on ties) and the squared distance to it.
    pub fn nearest_sheet(&self, p: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for i in 0..self.n_sheets() {
            let d = self.sheet_dist_sq(i, p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// `dist(p, spt C)²`
    pub fn dist_sq(&self, p: &[f64]) -> f64 {
        self.nearest_sheet(p).1
    }

    /// Orthogonal projection onto the closed half-plane `H_i`.
    pub fn project_to_sheet(&self, i: usize, p: &[f64]) -> Vec<f64> {
        let w = self.spine.normal_part(p);
        let t = dot(&w, &self.sheets[i].normal).max(0.0);
        let mut q = math::sub(p, &w);
        math::axpy(&mut q, t, &self.sheets[i].normal);
        q
    }
}

/// `α(C)`: smallest angle between distinct sheets, or 1 for a single sheet.
pub fn book_angle(c: &OpenBook) -> f64 {
    c.closest_pair().map_or(1.0, |p| p.2)
}

/// `𝒢(C¹, C²)`: matching distance of the multiplicity-expanded normal tuples.
pub fn book_distance(c1: &OpenBook, c2: &OpenBook) -> Result<f64> {
    if c1.q() != c2.q() {
        return Err(Error::MismatchedQ(c1.q(), c2.q()));
    }
    if !c1.spine.same_as(&c2.spine) {
        return Err(Error::MismatchedSpine);
    }
    q_metric(&c1.normal_tuple(), &c2.normal_tuple())
}

/// `W(V, ν, ϑ)` translated to the spine origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wedge {
    pub spine: Spine,
    pub axis: Vec<f64>,
    pub opening: f64,
}

impl Wedge {
    pub fn new(spine: Spine, axis: Vec<f64>, opening: f64) -> Result<Self> {
        spine.check_normal(&axis)?;
        if !(opening > 0.0 && opening < math::PI / 2.0) {
            return Err(Error::InvalidParameter(format!(
                "wedge opening {opening} outside (0, π/2)"
            )));
        }
        Ok(Wedge {
            spine,
            axis,
            opening,
        })
    }

    /// `|y − p_V(y) − (y·ν)ν| − tan(ϑ)(y·ν)`
    pub fn defect(&self, p: &[f64]) -> f64 {
        let w = self.spine.normal_part(p);
        let t = dot(&w, &self.axis);
        let lateral = (norm_sq(&w) - t * t).max(0.0);
        sqrt(lateral) - tan(self.opening) * t
    }
}

pub fn wedge_contains(w: &Wedge, p: &[f64]) -> bool {
    w.defect(p) <= 0.0
}

/// Largest signed defect over `points`; `−∞` for an empty set.
pub fn wedge_violation<'a, I>(w: &Wedge, points: I) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    points
        .into_iter()
        .map(|p| w.defect(p))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `⟨ω(p), T⃗⟩` with `ω = dr ∧ de₁ ∧ … ∧ de_{m−1}`; `tangent` holds `m` orthonormal rows.
pub fn calibration_pairing(spine: &Spine, tangent: &[Vec<f64>], p: &[f64]) -> Result<f64> {
    let m = spine.m();
    if tangent.len() != m {
        return Err(Error::MismatchedDimension {
            expected: m,
            got: tangent.len(),
        });
    }
    let sigma = spine.sigma(p)?;
    let mut a = Vec::with_capacity(m * m);
    for t in tangent {
        a.push(dot(&sigma, t));
    }
    for e in spine.basis() {
        for t in tangent {
            a.push(dot(e, t));
        }
    }
    Ok(math::det(a, m))
}

/// Nested sheet layers with their angle statistics and multiplicities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDecomposition {
    /// `I(0) ⊋ … ⊋ I(κ̄)`, zero-based sheet indices in increasing order.
    pub index_sets: Vec<Vec<usize>>,
    pub min_angle: Vec<f64>,
    pub covering: Vec<f64>,
    pub max_angle: Vec<f64>,
    /// `Q_i^s` for `i ∈ I(s)`, aligned with `index_sets`.
    pub multiplicities: Vec<Vec<usize>>,
    pub kappa: usize,
    pub kappa_bar: usize,
    /// The δ for which conditions hold (after internal halving).
    pub delta: f64,
    pub eta: f64,
}

fn set_stats(a: &[f64], n: usize, set: &[usize]) -> (f64, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for (k, &i) in set.iter().enumerate() {
        for &j in &set[k + 1..] {
            lo = lo.min(a[i * n + j]);
            hi = hi.max(a[i * n + j]);
        }
    }
    let mut cover: f64 = 0.0;
    for i in 0..n {
        let d = set
            .iter()
            .map(|&j| a[i * n + j])
            .fold(f64::INFINITY, f64::min);
        cover = cover.max(d);
    }
    (lo, cover, hi)
}

/// Guaranteed `η(δ, N)` of the merge-height construction.
pub fn layer_eta(delta: f64, n: usize) -> f64 {
    let g = layer_gap(delta, n);
    1.0 / ((n as f64 - 1.0) * math::powi(g, n as i32))
}

fn layer_gap(delta: f64, n: usize) -> f64 {
    (n.saturating_sub(2).max(3)) as f64 / delta
}

/// Checks layer conditions (1)–(4) and multiplicity conservation.
pub fn check_layer_conditions(
    c: &OpenBook,
    ld: &LayerDecomposition,
) -> core::result::Result<(), String> {
    let n = c.n_sheets();
    let a = c.angle_matrix();
    let k = ld.kappa;
    let (delta, eta) = (ld.delta, ld.eta);
    if ld.index_sets.first().map(Vec::as_slice) != Some(&(0..n).collect::<Vec<_>>()[..]) {
        return Err("I(0) is not the full index set".into());
    }
    for s in 0..=k {
        if ld.index_sets[s].len() < 2 {
            return Err(format!("I({s}) has fewer than two elements"));
        }
        if s > 0 {
            let prev = &ld.index_sets[s - 1];
            let cur = &ld.index_sets[s];
            if cur.len() >= prev.len() || !cur.iter().all(|i| prev.contains(i)) {
                return Err(format!("I({s}) is not a proper subset of I({})", s - 1));
            }
        }
    }
    let stats: Vec<_> = (0..=k)
        .map(|s| set_stats(&a, n, &ld.index_sets[s]))
        .collect();
    if math::abs(stats[k].2 - stats[0].2) > 0.0 {
        return Err("condition (1): M(κ) ≠ M(0)".into());
    }
    if eta * stats[k].2 > stats[k].0 {
        return Err("condition (2): η M(κ) > m(κ)".into());
    }
    for s in 1..=k {
        if stats[s].1 > delta * stats[s].0 {
            return Err(format!("condition (3): d({s}) > δ m({s})"));
        }
        if eta * stats[s].1 > stats[s - 1].0 {
            return Err(format!("condition (3): η d({s}) > m({})", s - 1));
        }
        if stats[s - 1].0 > delta * stats[s].0 {
            return Err(format!("condition (4): m({}) > δ m({s})", s - 1));
        }
    }
    let extend = stats[k].2 < delta;
    let expected_bar = if extend { k + 1 } else { k };
    if ld.kappa_bar != expected_bar || ld.index_sets.len() != expected_bar + 1 {
        return Err("singleton extension does not match M(κ) < δ".into());
    }
    if extend && ld.index_sets[k + 1] != vec![ld.index_sets[k][0]] {
        return Err("extension layer is not {min I(κ)}".into());
    }
    let q = c.q();
    for (s, mult) in ld.multiplicities.iter().enumerate() {
        if mult.len() != ld.index_sets[s].len() || mult.iter().sum::<usize>() != q {
            return Err(format!("multiplicities of layer {s} do not sum to Q"));
        }
    }
    Ok(())
}

/// Representative of one cluster: a member of the diameter pair if present, else the lowest index.
fn representative(cluster: &[usize], diam_pair: (usize, usize)) -> usize {
    if cluster.contains(&diam_pair.0) {
        diam_pair.0
    } else if cluster.contains(&diam_pair.1) {
        diam_pair.1
    } else {
        cluster[0]
    }
}

fn layers_for_delta(c: &OpenBook, delta: f64) -> LayerDecomposition {
    let n = c.n_sheets();
    let a = c.angle_matrix();

    // Diameter pair, lowest indices on ties.
    let mut diam = (0, 1, f64::NEG_INFINITY);
    for i in 0..n {
        for j in (i + 1)..n {
            if a[i * n + j] > diam.2 {
                diam = (i, j, a[i * n + j]);
            }
        }
    }
    let diam_pair = (diam.0, diam.1);

    // Kruskal merge sequence; heights h_1 ≤ … ≤ h_{N−1}.
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push((a[i * n + j], i, j));
        }
    }
    edges.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut heights = Vec::with_capacity(n - 1);
    // partitions[k] = clustering after k merges
    let mut partitions: Vec<Vec<usize>> = vec![(0..n).collect()];
    for (w, i, j) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri.max(rj)] = ri.min(rj);
            heights.push(w);
            let labels: Vec<usize> = (0..n).map(|x| find(&mut parent, x)).collect();
            partitions.push(labels);
        }
    }

    let g = layer_gap(delta, n);
    let mut cuts = vec![0usize];
    for k in 1..=n.saturating_sub(2) {
        if heights[k] >= g * heights[k - 1] {
            cuts.push(k);
        }
    }

    let mut index_sets = Vec::with_capacity(cuts.len() + 1);
    for &k in &cuts {
        let labels = &partitions[k];
        let mut reps = Vec::new();
        let mut seen = Vec::new();
        for x in 0..n {
            if !seen.contains(&labels[x]) {
                seen.push(labels[x]);
                let cluster: Vec<usize> = (0..n).filter(|&y| labels[y] == labels[x]).collect();
                reps.push(representative(&cluster, diam_pair));
            }
        }
        reps.sort_unstable();
        index_sets.push(reps);
    }
    let kappa = index_sets.len() - 1;
    let stats_k = set_stats(&a, n, &index_sets[kappa]);
    let kappa_bar = if stats_k.2 < delta {
        index_sets.push(vec![index_sets[kappa][0]]);
        kappa + 1
    } else {
        kappa
    };

    let mut multiplicities = vec![c
        .sheets()
        .iter()
        .map(|s| s.multiplicity)
        .collect::<Vec<_>>()];
    for s in 1..index_sets.len() {
        let prev = &index_sets[s - 1];
        let cur = &index_sets[s];
        let mut mult = vec![0usize; cur.len()];
        for (pj, &j) in prev.iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (ci, &i) in cur.iter().enumerate() {
                let t = a[j * n + i];
                if t < best.1 {
                    best = (ci, t);
                }
            }
            mult[best.0] += multiplicities[s - 1][pj];
        }
        multiplicities.push(mult);
    }

    let mut min_angle = Vec::new();
    let mut covering = Vec::new();
    let mut max_angle = Vec::new();
    for set in &index_sets {
        let (lo, cover, hi) = set_stats(&a, n, set);
        min_angle.push(lo);
        covering.push(cover);
        max_angle.push(hi);
    }
    LayerDecomposition {
        index_sets,
        min_angle,
        covering,
        max_angle,
        multiplicities,
        kappa,
        kappa_bar,
        delta,
        eta: layer_eta(delta, n),
    }
}

/// Layering via single-linkage merge heights, verified and retried with halved δ.
pub fn layer_subdivision(c: &OpenBook, delta: f64) -> Result<LayerDecomposition> {
    if c.n_sheets() < 2 {
        return Err(Error::InvalidParameter(
            "layer subdivision needs at least two sheets".into(),
        ));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "δ = {delta} outside (0, 1]"
        )));
    }
    let mut d = delta;
    for _ in 0..=10 {
        let ld = layers_for_delta(c, d);
        if check_layer_conditions(c, &ld).is_ok() {
            return Ok(ld);
        }
        d *= 0.5;
    }
    Err(Error::LayerConditions)
}
