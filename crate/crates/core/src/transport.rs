//! Balanced W₂, the spine-penalized unbalanced distance `d`, and the strong excess 𝔼.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OpenBook, Spine};
use crate::math::{self, powi};
use crate::measures::{sample_open_book, DiscreteCurrent, DiscreteMeasure, SampleLayout};
use crate::simplex;

/// Default entering threshold on scaled reduced costs.
pub const DEFAULT_LP_EPS: f64 = 1e-10;

/// Transported pairs plus per-point leftovers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub pairs: Vec<(usize, usize, f64)>,
    pub leftover_source: Vec<f64>,
    pub leftover_target: Vec<f64>,
}

impl TransportPlan {
    /// Largest violation of the marginal constraints.
    pub fn marginal_error(&self, mu1: &DiscreteMeasure, mu2: &DiscreteMeasure) -> f64 {
        let mut out = self.leftover_source.clone();
        let mut inn = self.leftover_target.clone();
        for &(i, j, f) in &self.pairs {
            out[i] += f;
            inn[j] += f;
        }
        let a = out.iter().zip(&mu1.weights).map(|(x, w)| math::abs(x - w));
        let b = inn.iter().zip(&mu2.weights).map(|(x, w)| math::abs(x - w));
        a.chain(b).fold(0.0, f64::max)
    }
}

/// Cost split of an unbalanced plan.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostSplit {
    pub transport: f64,
    pub source_leftover: f64,
    pub target_leftover: f64,
}

impl CostSplit {
    pub fn total(&self) -> f64 {
        self.transport + self.source_leftover + self.target_leftover
    }
}

fn check_dims(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure) -> Result<()> {
    let d1 = mu1.points.first().map(Vec::len);
    let d2 = mu2.points.first().map(Vec::len);
    if let (Some(a), Some(b)) = (d1, d2) {
        if a != b {
            return Err(Error::MismatchedDimension {
                expected: a,
                got: b,
            });
        }
    }
    Ok(())
}

/// `W₂(μ¹, μ²)²` and an optimal plan; masses must agree to `1e−9` relative.
pub fn wasserstein2(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure) -> Result<(f64, TransportPlan)> {
    wasserstein2_eps(mu1, mu2, DEFAULT_LP_EPS)
}

pub fn wasserstein2_eps(
    mu1: &DiscreteMeasure,
    mu2: &DiscreteMeasure,
    eps: f64,
) -> Result<(f64, TransportPlan)> {
    check_dims(mu1, mu2)?;
    let (a, b) = (mu1.total_mass(), mu2.total_mass());
    if math::abs(a - b) > 1e-9 * a.max(b).max(1e-300) {
        return Err(Error::UnbalancedMass(a, b));
    }
    let empty = TransportPlan {
        pairs: Vec::new(),
        leftover_source: vec![0.0; mu1.len()],
        leftover_target: vec![0.0; mu2.len()],
    };
    if mu1.is_empty() || mu2.is_empty() {
        return Ok((0.0, empty));
    }
    // rescale the target so totals agree to the last bit
    let demand: Vec<f64> = mu2.weights.iter().map(|w| w * a / b).collect();
    let cost = |i: usize, j: usize| math::dist_sq(&mu1.points[i], &mu2.points[j]);
    let flow = simplex::transport(&mu1.weights, &demand, cost, eps)?;
    let mut plan = empty;
    let mut total = 0.0;
    for (i, j, f) in flow.basic {
        if f > 0.0 {
            total += f * cost(i, j);
            plan.pairs.push((i, j, f));
        }
    }
    Ok((total, plan))
}

/// `d(μ¹, μ²) = inf W₂(μ₁¹, μ₁²)² + Σ_i ∫ dist(x, V)² dμ₂ⁱ` over nonnegative splittings.
pub fn unbalanced_distance(
    mu1: &DiscreteMeasure,
    mu2: &DiscreteMeasure,
    spine: &Spine,
) -> Result<(f64, TransportPlan)> {
    let (plan, split) = unbalanced_plan(mu1, mu2, spine, 1.0, DEFAULT_LP_EPS)?;
    Ok((split.total(), plan))
}

/// Unbalanced transport with leftover penalties `penalty_scale · dist(·, V)²`.
pub fn unbalanced_plan(
    mu1: &DiscreteMeasure,
    mu2: &DiscreteMeasure,
    spine: &Spine,
    penalty_scale: f64,
    eps: f64,
) -> Result<(TransportPlan, CostSplit)> {
    check_dims(mu1, mu2)?;
    if !(penalty_scale >= 0.0) {
        return Err(Error::InvalidParameter(
            "penalty scale must be nonnegative".into(),
        ));
    }
    let ns = mu1.len();
    let nt = mu2.len();
    let pen1: Vec<f64> = mu1
        .points
        .iter()
        .map(|x| penalty_scale * spine.dist_sq(x))
        .collect();
    let pen2: Vec<f64> = mu2
        .points
        .iter()
        .map(|y| penalty_scale * spine.dist_sq(y))
        .collect();

    // sources ∪ {void_S}, targets ∪ {void_T}
    let mut supply = mu1.weights.clone();
    supply.push(mu2.total_mass());
    let mut demand = mu2.weights.clone();
    demand.push(mu1.total_mass());
    let cost = |i: usize, j: usize| match (i < ns, j < nt) {
        (true, true) => math::dist_sq(&mu1.points[i], &mu2.points[j]),
        (true, false) => pen1[i],
        (false, true) => pen2[j],
        (false, false) => 0.0,
    };

    let (sa, sb) = (supply.iter().sum::<f64>(), demand.iter().sum::<f64>());
    if sa > 0.0 {
        // exact balance for the LP; the two sums differ only by rounding
        let k = sa / sb;
        demand.iter_mut().for_each(|x| *x *= k);
    }
    let mut plan = TransportPlan {
        pairs: Vec::new(),
        leftover_source: vec![0.0; ns],
        leftover_target: vec![0.0; nt],
    };
    let mut split = CostSplit::default();
    if sa == 0.0 {
        return Ok((plan, split));
    }
    let flow = simplex::transport(&supply, &demand, cost, eps)?;
    for (i, j, f) in flow.basic {
        if !(f > 0.0) {
            continue;
        }
        match (i < ns, j < nt) {
            (true, true) => {
                split.transport += f * cost(i, j);
                plan.pairs.push((i, j, f));
            }
            (true, false) => {
                split.source_leftover += f * pen1[i];
                plan.leftover_source[i] += f;
            }
            (false, true) => {
                split.target_leftover += f * pen2[j];
                plan.leftover_target[j] += f;
            }
            (false, false) => {}
        }
    }
    Ok((plan, split))
}

/// The cutoff `φ_r(x) = φ(|x − p|/r)` with `φ = 1` on `[0, ½]`, `cos²(π(t − ½))` on `[½, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpFunction {
    pub radius: f64,
}

impl BumpFunction {
    pub fn profile(t: f64) -> f64 {
        if t <= 0.5 {
            1.0
        } else if t < 1.0 {
            let c = math::cos(math::PI * (t - 0.5));
            c * c
        } else {
            0.0
        }
    }

    pub fn eval(&self, p: &[f64], x: &[f64]) -> f64 {
        Self::profile(math::dist(p, x) / self.radius)
    }
}

/// How the cone measure is discretized inside [`strong_excess`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeSampling {
    /// Cone samples; `None` means four times the current's samples in the ball.
    pub count: Option<usize>,
    pub seed: u64,
    pub layout: SampleLayout,
}

impl Default for ConeSampling {
    fn default() -> Self {
        ConeSampling {
            count: None,
            seed: 0,
            layout: SampleLayout::Stratified,
        }
    }
}

/// 𝔼 with the plan and its L² / reverse decomposition; all quantities carry the `r^{−(m+2)}` factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongExcess {
    pub value: f64,
    pub split: CostSplit,
    /// `∫ φ_r dist(x, C)² d|T|` over the plan's source marginal.
    pub l2_component: f64,
    /// `∫ φ_r dist(y, spt T ∪ V)² d|C|` over the plan's target marginal.
    pub reverse_component: f64,
    pub current_count: usize,
    pub cone_count: usize,
    #[serde(skip)]
    pub plan: TransportPlan,
}

/// Bump-weighted restriction of a current to `B_r(p)`.
pub fn bump_measure(t: &DiscreteCurrent, p: &[f64], r: f64) -> DiscreteMeasure {
    let bump = BumpFunction { radius: r };
    let mut out = DiscreteMeasure::default();
    for (x, w) in t.points.iter().zip(&t.weights) {
        let f = bump.eval(p, x);
        if f > 0.0 {
            out.points.push(x.clone());
            out.weights.push(w * f);
        }
    }
    out
}

/// `𝔼(T, C, B_r(p)) = r^{−(m+2)} d(φ_r|T|, φ_r|C|)` against a sample of `C` drawn here.
pub fn strong_excess(
    t: &DiscreteCurrent,
    c: &OpenBook,
    p: &[f64],
    r: f64,
    cone: &ConeSampling,
) -> Result<StrongExcess> {
    let inside = t.ball_mass(p, r).1;
    let count = cone.count.unwrap_or(4 * inside).max(100);
    let mut sample = sample_open_book(
        c,
        r + math::dist(p, c.spine().origin()),
        count,
        cone.seed,
        cone.layout,
    )?;
    sample.generator = alloc::string::String::from("cone_sample");
    strong_excess_against(t, &sample, c, p, r, DEFAULT_LP_EPS)
}

/// As [`strong_excess`] with a caller-supplied cone sample.
pub fn strong_excess_against(
    t: &DiscreteCurrent,
    cone_sample: &DiscreteCurrent,
    c: &OpenBook,
    p: &[f64],
    r: f64,
    eps: f64,
) -> Result<StrongExcess> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter("radius must be positive".into()));
    }
    let mu1 = bump_measure(t, p, r);
    let mu2 = bump_measure(cone_sample, p, r);
    let (plan, split) = unbalanced_plan(&mu1, &mu2, c.spine(), 1.0, eps)?;
    let norm = powi(r, -(c.m() as i32 + 2));

    let mut out_mass = plan.leftover_source.clone();
    let mut in_mass = plan.leftover_target.clone();
    for &(i, j, f) in &plan.pairs {
        out_mass[i] += f;
        in_mass[j] += f;
    }
    let l2: f64 = mu1
        .points
        .iter()
        .zip(&out_mass)
        .map(|(x, w)| w * c.dist_sq(x))
        .sum();
    let mut reverse = 0.0;
    for (y, w) in mu2.points.iter().zip(&in_mass) {
        if *w == 0.0 {
            continue;
        }
        let mut best = c.spine().dist_sq(y);
        for x in &mu1.points {
            best = best.min(math::dist_sq(x, y));
        }
        reverse += w * best;
    }
    Ok(StrongExcess {
        value: split.total() * norm,
        split: CostSplit {
            transport: split.transport * norm,
            source_leftover: split.source_leftover * norm,
            target_leftover: split.target_leftover * norm,
        },
        l2_component: l2 * norm,
        reverse_component: reverse * norm,
        current_count: mu1.len(),
        cone_count: mu2.len(),
        plan,
    })
}

/// 𝔼 between two independent samples of `C`: the discretization floor at this resolution.
pub fn strong_excess_noise_floor(
    c: &OpenBook,
    p: &[f64],
    r: f64,
    count: usize,
    seeds: (u64, u64),
) -> Result<f64> {
    let radius = r + math::dist(p, c.spine().origin());
    let a = sample_open_book(c, radius, count, seeds.0, SampleLayout::Stratified)?;
    let b = sample_open_book(c, radius, count, seeds.1, SampleLayout::Stratified)?;
    Ok(strong_excess_against(&a, &b, c, p, r, DEFAULT_LP_EPS)?.value)
}
