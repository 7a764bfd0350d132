//! L², reverse L² and tilt excesses, cone fitting and sheet pruning.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{book_angle, OpenBook, Sheet, Spine, GEOM_TOL};
use crate::math::{self, dot, powi, unit_ball_volume};
use crate::measures::{sample_open_book, DiscreteCurrent};
use crate::transport::{strong_excess, BumpFunction, ConeSampling};

fn check_dim(t: &DiscreteCurrent, c: &OpenBook) -> Result<()> {
    if !t.is_empty() && t.dim() != c.ambient_dim() {
        return Err(Error::MismatchedDimension {
            expected: c.ambient_dim(),
            got: t.dim(),
        });
    }
    Ok(())
}

fn check_radius(r: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "radius {r} must be positive"
        )));
    }
    Ok(())
}

/// `𝐄(T, C, B_r(p)) = r^{−(m+2)} ∫_{B_r(p)} dist(x, C)² d|T|`.
pub fn l2_excess(t: &DiscreteCurrent, c: &OpenBook, p: &[f64], r: f64) -> Result<f64> {
    check_radius(r)?;
    check_dim(t, c)?;
    let r2 = r * r;
    let mut sum = 0.0;
    let mut count = 0;
    for (x, w) in t.points.iter().zip(&t.weights) {
        if math::dist_sq(x, p) < r2 {
            sum += w * c.dist_sq(x);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyBall);
    }
    Ok(sum * powi(r, -(c.m() as i32 + 2)))
}

/// Reverse excess with an estimate of the nearest-neighbour discretization bias.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReverseExcess {
    pub value: f64,
    /// Expected value for a current sampled exactly from `C` at the same spacing.
    pub bias: f64,
    pub cone_count: usize,
}

/// `r^{−(m+2)} ∫ φ_r dist(y, spt T)² d|C|(y)` against a sample of `C` drawn here.
pub fn reverse_l2_excess(
    t: &DiscreteCurrent,
    c: &OpenBook,
    p: &[f64],
    r: f64,
    cone: &ConeSampling,
) -> Result<ReverseExcess> {
    check_radius(r)?;
    let inside = t.ball_mass(p, r).1;
    let count = cone.count.unwrap_or(4 * inside).max(100);
    let sample = sample_open_book(
        c,
        r + math::dist(p, c.spine().origin()),
        count,
        cone.seed,
        cone.layout,
    )?;
    reverse_l2_excess_against(t, &sample, c.m(), p, r)
}

/// As [`reverse_l2_excess`] with a caller-supplied sample of the cone.
pub fn reverse_l2_excess_against(
    t: &DiscreteCurrent,
    cone_sample: &DiscreteCurrent,
    m: usize,
    p: &[f64],
    r: f64,
) -> Result<ReverseExcess> {
    check_radius(r)?;
    if t.is_empty() {
        return Err(Error::EmptyCurrent);
    }
    if !cone_sample.is_empty() && cone_sample.dim() != t.dim() {
        return Err(Error::MismatchedDimension {
            expected: t.dim(),
            got: cone_sample.dim(),
        });
    }
    let bump = BumpFunction { radius: r };
    // samples beyond B_2r(p) are farther than r from every y in B_r(p)
    let near: Vec<&[f64]> = t
        .points
        .iter()
        .filter(|x| math::dist_sq(x, p) < 4.0 * r * r)
        .map(Vec::as_slice)
        .collect();
    let nearest_sq = |y: &[f64]| -> f64 {
        let best = near
            .iter()
            .map(|x| math::dist_sq(x, y))
            .fold(f64::INFINITY, f64::min);
        if best <= r * r {
            best
        } else {
            t.points
                .iter()
                .map(|x| math::dist_sq(x, y))
                .fold(f64::INFINITY, f64::min)
        }
    };
    let mut sum = 0.0;
    let mut cone_mass = 0.0;
    let mut cone_count = 0;
    for (y, w) in cone_sample.points.iter().zip(&cone_sample.weights) {
        let f = bump.eval(p, y);
        if f > 0.0 {
            sum += w * f * nearest_sq(y);
            cone_mass += w * f;
            cone_count += 1;
        }
    }

    // for Poisson-like samples a uniform point and a sample see the same mean squared nearest-neighbour distance
    let inner: Vec<&[f64]> = near
        .iter()
        .copied()
        .filter(|x| math::dist_sq(x, p) < r * r)
        .collect();
    let stride = (inner.len() / 500).max(1);
    let mut spacing = 0.0;
    let mut probes = 0;
    for (k, x) in inner.iter().enumerate().step_by(stride) {
        let d = inner
            .iter()
            .enumerate()
            .filter(|&(l, _)| l != k)
            .map(|(_, z)| math::dist_sq(x, z))
            .fold(f64::INFINITY, f64::min);
        if d.is_finite() {
            spacing += d;
            probes += 1;
        }
    }
    let mean_spacing = if probes > 0 {
        spacing / probes as f64
    } else {
        0.0
    };
    let norm = powi(r, -(m as i32 + 2));
    Ok(ReverseExcess {
        value: sum * norm,
        bias: mean_spacing * cone_mass * norm,
        cone_count,
    })
}

/// `⟨T⃗, π⃗⟩` for unit simple m-vectors given by orthonormal rows.
fn mvector_inner(a: &[f64], b: &[Vec<f64>], d: usize) -> f64 {
    let m = b.len();
    let mut g = Vec::with_capacity(m * m);
    for ra in a.chunks(d) {
        for rb in b {
            g.push(dot(ra, rb));
        }
    }
    math::det(g, m)
}

/// `Ē(T, B_r(p), π) = (ω_m r^m)^{−1} ∫_{B_r(p)} |T⃗ − π⃗|²/2 d‖T‖`, with `π` given by oriented orthonormal rows.
pub fn tilt_excess(t: &DiscreteCurrent, plane: &[Vec<f64>], p: &[f64], r: f64) -> Result<f64> {
    check_radius(r)?;
    let tangents = t.tangents.as_ref().ok_or(Error::MissingTangents)?;
    let d = t.dim();
    if plane.len() != t.m {
        return Err(Error::MismatchedDimension {
            expected: t.m,
            got: plane.len(),
        });
    }
    if let Some(row) = plane.iter().find(|row| row.len() != d) {
        return Err(Error::MismatchedDimension {
            expected: d,
            got: row.len(),
        });
    }
    let mut sum = 0.0;
    for ((x, w), rows) in t.points.iter().zip(&t.weights).zip(tangents) {
        if math::dist_sq(x, p) < r * r {
            // |a − b|²/2 = 1 − ⟨a, b⟩ for unit m-vectors
            sum += w * (1.0 - mvector_inner(rows, plane, d));
        }
    }
    Ok(sum / (unit_ball_volume(t.m) * powi(r, t.m as i32)))
}

/// `Ê_κ = max{𝔼, κ^{−1} A_Γ r, κ^{−1} A_Σ² r²}`.
pub fn amended_excess(strong: f64, kappa: f64, a_gamma: f64, a_sigma: f64, r: f64) -> f64 {
    debug_assert!(kappa > 0.0);
    strong
        .max(a_gamma * r / kappa)
        .max(a_sigma * a_sigma * r * r / kappa)
}

/// Optional parts of an [`ExcessReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Compute 𝔼 with this cone sampling.
    pub strong: Option<ConeSampling>,
    /// Cone sampling for the reverse excess.
    pub reverse: ConeSampling,
    /// Reference plane for the tilt excess.
    pub tilt_plane: Option<Vec<Vec<f64>>>,
    pub kappa: f64,
    pub a_gamma: f64,
    pub a_sigma: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            strong: Some(ConeSampling::default()),
            reverse: ConeSampling::default(),
            tilt_plane: None,
            kappa: 1.0,
            a_gamma: 0.0,
            a_sigma: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcessReport {
    pub l2: f64,
    pub reverse_l2: f64,
    pub reverse_bias: f64,
    pub strong: Option<f64>,
    pub tilt: Option<f64>,
    /// `Ê_κ`, present with `strong`.
    pub amended: Option<f64>,
    pub cone: OpenBook,
    pub radius: f64,
    pub center: Vec<f64>,
}

pub fn excess_report(
    t: &DiscreteCurrent,
    c: &OpenBook,
    p: &[f64],
    r: f64,
    opts: &ReportOptions,
) -> Result<ExcessReport> {
    let l2 = l2_excess(t, c, p, r)?;
    let reverse = reverse_l2_excess(t, c, p, r, &opts.reverse)?;
    let strong = match &opts.strong {
        Some(cs) => Some(strong_excess(t, c, p, r, cs)?.value),
        None => None,
    };
    let tilt = match &opts.tilt_plane {
        Some(plane) => Some(tilt_excess(t, plane, p, r)?),
        None => None,
    };
    if !(opts.kappa > 0.0) {
        return Err(Error::InvalidParameter("kappa must be positive".into()));
    }
    Ok(ExcessReport {
        l2,
        reverse_l2: reverse.value,
        reverse_bias: reverse.bias,
        strong,
        tilt,
        amended: strong.map(|e| amended_excess(e, opts.kappa, opts.a_gamma, opts.a_sigma, r)),
        cone: c.clone(),
        radius: r,
        center: p.to_vec(),
    })
}

/// Settings for [`fit_open_book`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_sheets: usize,
    /// Total multiplicity; inferred from the annulus mass when absent.
    pub q: Option<usize>,
    /// Lower bound on the clustering angle.
    pub threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_sheets: 8,
            q: None,
            threshold: 0.1,
        }
    }
}

/// Minimum number of annulus samples for a fit.
pub const MIN_FIT_SAMPLES: usize = 20;

/// Fits `Σ Q_i ⟦H_i⟧` over `spine` to the samples in the annulus `r/8 < |x − p| < r`; `p` must lie on the spine.
pub fn fit_open_book(
    t: &DiscreteCurrent,
    spine: &Spine,
    p: &[f64],
    r: f64,
    opts: &FitOptions,
) -> Result<OpenBook> {
    check_radius(r)?;
    if spine.dist(p) > 1e-9 * (1.0 + r) {
        return Err(Error::InvalidParameter(
            "fit center must lie on the spine".into(),
        ));
    }
    if opts.max_sheets == 0 {
        return Err(Error::InvalidParameter(
            "max_sheets must be positive".into(),
        ));
    }
    let (lo, hi) = (r * r / 64.0, r * r);
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    let mut pos: Vec<&[f64]> = Vec::new();
    let mut mass: Vec<f64> = Vec::new();
    for (x, w) in t.points.iter().zip(&t.weights) {
        let d2 = math::dist_sq(x, p);
        if d2 <= lo || d2 >= hi {
            continue;
        }
        if let Ok(s) = spine.sigma(x) {
            dirs.push(s);
            pos.push(x);
            mass.push(*w);
        }
    }
    let n = dirs.len();
    if n < MIN_FIT_SAMPLES {
        return Err(Error::TooFewSamples(n));
    }

    // angular noise: σ-angle to the spatially nearest sample, on a deterministic subsample
    let stride = (n / 400).max(1);
    let mut noise: Vec<f64> = Vec::new();
    for k in (0..n).step_by(stride) {
        let mut best = (f64::INFINITY, k);
        for l in 0..n {
            if l != k {
                let d = math::dist_sq(pos[k], pos[l]);
                if d < best.0 {
                    best = (d, l);
                }
            }
        }
        noise.push(math::angle(&dirs[k], &dirs[best.1]));
    }
    noise.sort_by(f64::total_cmp);
    let threshold = (4.0 * noise[noise.len() / 2]).max(opts.threshold);

    // greedy seeds: densest remaining direction (over a subsample of candidates)
    let cos_t = math::cos(threshold);
    let mut label = vec![usize::MAX; n];
    let mut centers: Vec<Vec<f64>> = Vec::new();
    let cand_stride = (n / 1000).max(1);
    loop {
        let mut best = (0.0, usize::MAX);
        for k in (0..n).step_by(cand_stride) {
            if label[k] != usize::MAX {
                continue;
            }
            let w: f64 = (0..n)
                .filter(|&l| label[l] == usize::MAX && dot(&dirs[k], &dirs[l]) >= cos_t)
                .map(|l| mass[l])
                .sum();
            if w > best.0 {
                best = (w, k);
            }
        }
        if best.1 == usize::MAX {
            // only non-candidate stragglers remain
            let Some(k) = (0..n).find(|&l| label[l] == usize::MAX) else {
                break;
            };
            best.1 = k;
        }
        let seed = dirs[best.1].clone();
        let id = centers.len();
        for l in 0..n {
            if label[l] == usize::MAX && dot(&seed, &dirs[l]) >= cos_t {
                label[l] = id;
            }
        }
        label[best.1] = id;
        centers.push(seed);
    }

    // keep the heaviest clusters, then two rounds of spherical means and reassignment
    let cluster_mass = |label: &[usize], k: usize| -> f64 {
        (0..n).filter(|&l| label[l] == k).map(|l| mass[l]).sum()
    };
    let mut order: Vec<usize> = (0..centers.len()).collect();
    let weights: Vec<f64> = order.iter().map(|&k| cluster_mass(&label, k)).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order.truncate(opts.max_sheets);
    let mut normals: Vec<Vec<f64>> = order.iter().map(|&k| centers[k].clone()).collect();
    let sector = 0.5
        * unit_ball_volume(spine.m())
        * (powi(r, spine.m() as i32) - powi(r / 8.0, spine.m() as i32));
    let mut raw = Vec::new();
    for _ in 0..2 {
        for l in 0..n {
            label[l] = (0..normals.len())
                .max_by(|&a, &b| {
                    dot(&dirs[l], &normals[a])
                        .total_cmp(&dot(&dirs[l], &normals[b]))
                        .then(b.cmp(&a))
                })
                .unwrap();
        }
        let mut next = Vec::new();
        raw.clear();
        for k in 0..normals.len() {
            let mut s = vec![0.0; dirs[0].len()];
            let mut w = 0.0;
            for l in (0..n).filter(|&l| label[l] == k) {
                math::axpy(&mut s, mass[l], &dirs[l]);
                w += mass[l];
            }
            // negligible clusters are dropped
            if w / sector < 0.25 || math::normalize(&mut s) <= GEOM_TOL {
                continue;
            }
            next.push(s);
            raw.push(w / sector);
        }
        if next.is_empty() {
            return Err(Error::TooFewSamples(n));
        }
        normals = next;
    }

    let q = opts
        .q
        .unwrap_or_else(|| (math::round(raw.iter().sum::<f64>()) as usize).max(1));
    let mult = largest_remainder(&raw, q)?;
    let sheets = normals
        .into_iter()
        .zip(mult)
        .map(|(normal, multiplicity)| Sheet {
            normal,
            multiplicity,
        })
        .collect();
    OpenBook::new(spine.clone(), sheets)
}

/// Positive integers summing to `q`, each within one of `raw`, by largest remainders.
fn largest_remainder(raw: &[f64], q: usize) -> Result<Vec<usize>> {
    let mut base: Vec<usize> = raw
        .iter()
        .map(|x| (math::floor(*x) as usize).max(1))
        .collect();
    let total: usize = base.iter().sum();
    let frac: Vec<f64> = raw.iter().zip(&base).map(|(x, b)| x - *b as f64).collect();
    let mut idx: Vec<usize> = (0..raw.len()).collect();
    if total <= q {
        idx.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]).then(a.cmp(&b)));
        for k in 0..(q - total) {
            match idx.get(k) {
                Some(&i) => base[i] += 1,
                None => return Err(Error::MultiplicityMismatch(q)),
            }
        }
    } else {
        idx.sort_by(|&a, &b| frac[a].total_cmp(&frac[b]).then(a.cmp(&b)));
        let mut excess = total - q;
        for &i in &idx {
            if excess == 0 {
                break;
            }
            if base[i] > 1 {
                base[i] -= 1;
                excess -= 1;
            }
        }
        if excess > 0 {
            return Err(Error::MultiplicityMismatch(q));
        }
    }
    if base
        .iter()
        .zip(raw)
        .any(|(b, x)| math::abs(*b as f64 - x) >= 1.0 + 1e-12)
    {
        return Err(Error::MultiplicityMismatch(q));
    }
    Ok(base)
}

/// Which excess drives the stop rule in [`prune`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneEvaluator {
    Strong(ConeSampling),
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneAction {
    Stop,
    /// Sheet `remove` is dropped and its multiplicity added to sheet `keep` (indices into the current cone).
    Merge {
        keep: usize,
        remove: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneStep {
    pub cone: OpenBook,
    pub excess: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub action: PruneAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneTrace {
    pub evaluator: String,
    pub steps: Vec<PruneStep>,
    pub final_cone: OpenBook,
    pub final_sheets: usize,
    /// `h(i)`: original sheets grouped into original sheet `i`; empty for removed sheets.
    pub partition: Vec<Vec<usize>>,
    /// `𝔼(C_{k+1}) / 𝔼(C_k)` for every merge.
    pub inflation: Vec<f64>,
    /// The final state satisfies `excess ≤ ε_{N′} α(C′)²`.
    pub stop_rule_holds: bool,
}

/// Merges the two closest sheets until `excess(C_k) ≤ ε_{N_k} α(C_k)²` or one sheet remains.
pub fn prune(
    t: &DiscreteCurrent,
    c: &OpenBook,
    p: &[f64],
    r: f64,
    epsilons: &[f64],
    evaluator: &PruneEvaluator,
) -> Result<PruneTrace> {
    if epsilons.len() < c.n_sheets() {
        return Err(Error::InvalidParameter(format!(
            "need {} epsilons, got {}",
            c.n_sheets(),
            epsilons.len()
        )));
    }
    if epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(Error::InvalidParameter(
            "epsilons must lie in (0, 1)".into(),
        ));
    }
    let eval = |cone: &OpenBook| -> Result<f64> {
        match evaluator {
            PruneEvaluator::Strong(cs) => Ok(strong_excess(t, cone, p, r, cs)?.value),
            PruneEvaluator::L2 => l2_excess(t, cone, p, r),
        }
    };
    // original index of each current sheet
    let mut origin: Vec<usize> = (0..c.n_sheets()).collect();
    let mut partition: Vec<Vec<usize>> = (0..c.n_sheets()).map(|i| vec![i]).collect();
    let mut cone = c.clone();
    let mut steps = Vec::new();
    let mut inflation = Vec::new();
    let mut excess = eval(&cone)?;
    loop {
        let alpha = book_angle(&cone);
        let epsilon = epsilons[cone.n_sheets() - 1];
        let holds = excess <= epsilon * alpha * alpha;
        if holds || cone.n_sheets() == 1 {
            steps.push(PruneStep {
                cone: cone.clone(),
                excess,
                alpha,
                epsilon,
                action: PruneAction::Stop,
            });
            return Ok(PruneTrace {
                evaluator: String::from(match evaluator {
                    PruneEvaluator::Strong(_) => "strong",
                    PruneEvaluator::L2 => "l2",
                }),
                steps,
                final_sheets: cone.n_sheets(),
                final_cone: cone,
                partition,
                inflation,
                stop_rule_holds: holds,
            });
        }
        let (keep, remove, _) = cone.closest_pair().expect("at least two sheets");
        steps.push(PruneStep {
            cone: cone.clone(),
            excess,
            alpha,
            epsilon,
            action: PruneAction::Merge { keep, remove },
        });
        let mut sheets = cone.sheets().to_vec();
        let moved = sheets.remove(remove);
        sheets[keep].multiplicity += moved.multiplicity;
        let (ok, ro) = (origin[keep], origin[remove]);
        let group = core::mem::take(&mut partition[ro]);
        partition[ok].extend(group);
        partition[ok].sort_unstable();
        origin.remove(remove);
        cone = cone.with_sheets(sheets)?;
        let next = eval(&cone)?;
        inflation.push(if excess > 0.0 {
            next / excess
        } else {
            f64::INFINITY
        });
        excess = next;
    }
}
