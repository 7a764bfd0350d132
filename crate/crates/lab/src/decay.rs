//! The iterative excess-decay loop: halve on large curvature, otherwise refit the cone at
//! the best candidate radius in `[η r, r/2]`.

use std::time::Instant;

use openbook_core::excess::{amended_excess, fit_open_book, l2_excess, FitOptions};
use openbook_core::geometry::{book_angle, book_distance, OpenBook};
use openbook_core::math;
use openbook_core::measures::{sample_graph_over_book, DiscreteCurrent, SampleLayout, SheetGraph};
use openbook_core::transport::{
    strong_excess, strong_excess_against, ConeSampling, DEFAULT_LP_EPS,
};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Where the current at scale `r` comes from.
#[derive(Clone, Debug)]
pub enum CurrentSource {
    /// A fixed sample, restricted to each ball.
    Fixed(DiscreteCurrent),
    /// A graph over a book, resampled with `count` base points in every ball it is asked about.
    Graph {
        book: OpenBook,
        graph: SheetGraph,
        count: usize,
        seed: u64,
        layout: SampleLayout,
    },
}

impl CurrentSource {
    pub fn sample(&self, p: &[f64], r: f64) -> Result<DiscreteCurrent> {
        match self {
            CurrentSource::Fixed(t) => Ok(t.restrict(p, r)),
            CurrentSource::Graph {
                book,
                graph,
                count,
                seed,
                layout,
            } => {
                let reach = COVER * r + math::dist(p, book.spine().origin());
                Ok(sample_graph_over_book(
                    book, graph, reach, *count, *seed, *layout,
                )?)
            }
        }
    }

    /// `𝔼(t, c, B_r(p))` for a sample `t` produced by [`CurrentSource::sample`].
    pub fn strong_excess(
        &self,
        t: &DiscreteCurrent,
        c: &OpenBook,
        p: &[f64],
        r: f64,
        fallback: &ConeSampling,
    ) -> Result<f64> {
        if let CurrentSource::Graph { book, graph, .. } = self {
            if let Some(cone) = pushforward_cone(t, book, graph, c) {
                return Ok(strong_excess_against(t, &cone, c, p, r, DEFAULT_LP_EPS)?.value);
            }
        }
        Ok(strong_excess(t, c, p, r, &self.coupled_sampling(*fallback))?.value)
    }

    /// Cone sampling coupled to this source: resampled graphs share base points with the cone.
    pub fn coupled_sampling(&self, fallback: ConeSampling) -> ConeSampling {
        match self {
            CurrentSource::Fixed(_) => fallback,
            CurrentSource::Graph {
                count,
                seed,
                layout,
                ..
            } => ConeSampling {
                count: Some(*count),
                seed: *seed,
                layout: *layout,
            },
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            CurrentSource::Fixed(t) => t.seed,
            CurrentSource::Graph { seed, .. } => Some(*seed),
        }
    }
}

/// Graph sources are sampled out to this multiple of the radius so projected samples cover the ball.
const COVER: f64 = 1.25;

/// Quadrature of `|c|` from the samples of a graph current: every atom group is assigned the
/// sheet of `c` most of its samples are nearest to, and each sample is projected there with its
/// weight scaled by the tangential Jacobian. `None` if the atom counts per sheet differ from
/// the multiplicities of `c`.
pub fn pushforward_cone(
    t: &DiscreteCurrent,
    book: &OpenBook,
    graph: &SheetGraph,
    c: &OpenBook,
) -> Option<DiscreteCurrent> {
    let tangents = t.tangents.as_ref()?;
    if t.sheet.len() != t.len() || !book.spine().same_as(c.spine()) {
        return None;
    }
    // atom groups per base sheet, in sampler order: (group index, multiplicity)
    let groups: Vec<Vec<usize>> = book
        .sheets()
        .iter()
        .zip(&graph.atoms)
        .map(|(sheet, atoms)| {
            if atoms.is_empty() {
                return vec![sheet.multiplicity];
            }
            let mut distinct: Vec<(&Vec<_>, usize)> = Vec::new();
            for a in atoms {
                match distinct.iter_mut().find(|d| d.0 == a) {
                    Some(d) => d.1 += 1,
                    None => distinct.push((a, 1)),
                }
            }
            distinct.into_iter().map(|d| d.1).collect()
        })
        .collect();
    let mut seen = vec![0usize; book.n_sheets()];
    let label: Vec<(usize, usize)> = t
        .sheet
        .iter()
        .map(|&i| {
            let g = seen[i] % groups[i].len();
            seen[i] += 1;
            (i, g)
        })
        .collect();
    let mut votes: Vec<Vec<Vec<f64>>> = groups
        .iter()
        .map(|g| vec![vec![0.0; c.n_sheets()]; g.len()])
        .collect();
    for (k, x) in t.points.iter().enumerate() {
        if c.spine().dist(x) > 0.0 {
            let (i, g) = label[k];
            votes[i][g][c.nearest_sheet(x).0] += t.weights[k];
        }
    }
    let assign: Vec<Vec<usize>> = votes
        .iter()
        .map(|per| {
            per.iter()
                .map(|v| {
                    (0..v.len())
                        .max_by(|a, b| v[*a].total_cmp(&v[*b]))
                        .unwrap_or(0)
                })
                .collect()
        })
        .collect();
    let mut count = vec![0usize; c.n_sheets()];
    for (i, per) in assign.iter().enumerate() {
        for (g, &j) in per.iter().enumerate() {
            count[j] += groups[i][g];
        }
    }
    if count
        .iter()
        .zip(c.sheets())
        .any(|(n, s)| *n != s.multiplicity)
    {
        return None;
    }
    let m = c.m();
    let d = c.ambient_dim();
    let frames: Vec<Vec<Vec<f64>>> = (0..c.n_sheets()).map(|j| c.sheet_tangent(j)).collect();
    let mut out = DiscreteCurrent {
        m,
        points: Vec::with_capacity(t.len()),
        weights: Vec::with_capacity(t.len()),
        tangents: Some(Vec::with_capacity(t.len())),
        sheet: Vec::with_capacity(t.len()),
        generator: "pushforward_cone".into(),
        seed: t.seed,
    };
    for (k, x) in t.points.iter().enumerate() {
        let (i, g) = label[k];
        let j = assign[i][g];
        let tau = &tangents[k];
        let mut gram = Vec::with_capacity(m * m);
        for a in 0..m {
            for h in &frames[j] {
                gram.push(math::dot(&tau[a * d..(a + 1) * d], h));
            }
        }
        out.points.push(c.project_to_sheet(j, x));
        out.weights.push(t.weights[k] * math::det(gram, m).abs());
        out.tangents.as_mut().unwrap().push(frames[j].concat());
        out.sheet.push(j);
    }
    Some(out)
}

/// `𝔼` of an exact sample of `c` at the resolution of `source`, measured the way the loop
/// measures: the discretization floor below which excesses carry no signal.
pub fn noise_floor(
    source: &CurrentSource,
    c: &OpenBook,
    p: &[f64],
    r: f64,
    fallback: &ConeSampling,
) -> Result<f64> {
    match source {
        CurrentSource::Graph {
            count,
            seed,
            layout,
            ..
        } => {
            let exact = CurrentSource::Graph {
                book: c.clone(),
                graph: SheetGraph::zero(c),
                count: *count,
                seed: *seed,
                layout: *layout,
            };
            let t = exact.sample(p, r)?;
            exact.strong_excess(&t, c, p, r, fallback)
        }
        CurrentSource::Fixed(t) => {
            let count = t.ball_mass(p, r).1.max(100);
            let seed = t.seed.unwrap_or(0);
            Ok(openbook_core::transport::strong_excess_noise_floor(
                c,
                p,
                r,
                count,
                (seed, seed ^ 0x9e37_79b9),
            )?)
        }
    }
}

/// `ε_N = 10⁻³ · 4^{−N}`
pub fn default_epsilon(n: usize) -> f64 {
    1e-3 * 4f64.powi(-(n as i32))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayParams {
    pub steps: usize,
    pub eta: f64,
    pub theta: f64,
    /// `ε_N` for `N = 1, 2, …`; missing entries use [`default_epsilon`].
    pub epsilons: Vec<f64>,
    pub kappa: f64,
    pub a_gamma: f64,
    pub a_sigma: f64,
    pub candidates: usize,
    /// Excesses at or below this are treated as converged and the radius is halved.
    pub floor: f64,
    /// The loop stops once a ball holds fewer samples.
    pub min_samples: usize,
    pub cone: ConeSampling,
    pub fit: FitOptions,
    pub record_timings: bool,
}

impl Default for DecayParams {
    fn default() -> Self {
        DecayParams {
            steps: 12,
            eta: 0.1,
            theta: 0.01,
            epsilons: Vec::new(),
            kappa: 1.0,
            a_gamma: 0.0,
            a_sigma: 0.0,
            candidates: 8,
            floor: 1e-12,
            min_samples: 200,
            cone: ConeSampling::default(),
            fit: FitOptions::default(),
            record_timings: false,
        }
    }
}

impl DecayParams {
    pub fn epsilon(&self, n: usize) -> f64 {
        self.epsilons
            .get(n.wrapping_sub(1))
            .copied()
            .unwrap_or_else(|| default_epsilon(n))
    }

    /// Geometric grid of candidate radii from `η r` to `r/2`.
    pub fn candidate_radii(&self, r: f64) -> Vec<f64> {
        math::log_spaced(self.eta * r, 0.5 * r, self.candidates.max(1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayAction {
    Halve,
    Refit,
    /// Too few samples left at this scale; the loop ends.
    Exhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub radius: f64,
    pub strong: Option<f64>,
    pub alpha: Option<f64>,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub step: usize,
    pub radius: f64,
    pub cone: OpenBook,
    pub q: usize,
    pub sheets: usize,
    /// `𝔼(T, C_l, B_{r_l})`
    pub strong: f64,
    /// `𝐄(T, C_l, B_{r_l})`
    pub l2: f64,
    pub alpha: f64,
    pub amended: f64,
    /// `𝔼 ≤ ε_N α²` (or `≤ ε₁` for one sheet).
    pub hypothesis: bool,
    pub action: DecayAction,
    pub next_radius: Option<f64>,
    pub candidates: Vec<Candidate>,
    /// `𝔼_{l+1}/𝔼_l` for a refit.
    pub contraction: Option<f64>,
    pub contraction_held: Option<bool>,
    /// No candidate reached `𝔼' ≤ θ min{α(C')², 𝔼_l}`.
    pub stall: bool,
    /// `𝒢(C_{l+1}, C_l)² / 𝔼_l` for a refit.
    pub drift: Option<f64>,
    pub current_seed: Option<u64>,
    pub cone_seed: u64,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    pub records: Vec<ExperimentRecord>,
    pub q_conserved: bool,
    pub ratios_in_range: bool,
    pub refits: usize,
    pub contracted: usize,
    pub max_drift: Option<f64>,
}

impl DecaySummary {
    pub fn contraction_rate(&self) -> Option<f64> {
        (self.refits > 0).then(|| self.contracted as f64 / self.refits as f64)
    }
}

/// Runs the loop from `(C₀, r₀)` at center `p` on the spine.
pub fn decay_loop(
    source: &CurrentSource,
    c0: &OpenBook,
    p: &[f64],
    r0: f64,
    params: &DecayParams,
) -> Result<DecaySummary> {
    if !(params.eta > 0.0 && params.eta < 0.5) {
        return Err(LabError::Config(format!(
            "eta {} outside (0, 1/2)",
            params.eta
        )));
    }
    if !(params.kappa > 0.0) {
        return Err(LabError::Config("kappa must be positive".into()));
    }
    let q = c0.q();
    let sampling = source.coupled_sampling(params.cone);
    let fit = FitOptions {
        q: Some(q),
        ..params.fit
    };
    let mut cone = c0.clone();
    let mut r = r0;
    let mut cached: Option<f64> = None;
    let mut records = Vec::new();
    for step in 0..params.steps {
        let started = Instant::now();
        let t = source.sample(p, r)?;
        let inside = t.ball_mass(p, r).1;
        let alpha = book_angle(&cone);
        let mut rec = ExperimentRecord {
            step,
            radius: r,
            cone: cone.clone(),
            q: cone.q(),
            sheets: cone.n_sheets(),
            strong: f64::NAN,
            l2: f64::NAN,
            alpha,
            amended: f64::NAN,
            hypothesis: false,
            action: DecayAction::Exhausted,
            next_radius: None,
            candidates: Vec::new(),
            contraction: None,
            contraction_held: None,
            stall: false,
            drift: None,
            current_seed: source.seed(),
            cone_seed: sampling.seed,
            samples: inside,
            elapsed_ms: None,
        };
        if inside < params.min_samples {
            records.push(rec);
            break;
        }
        let e = match cached.take() {
            Some(e) => e,
            None => source.strong_excess(&t, &cone, p, r, &params.cone)?,
        };
        rec.strong = e;
        rec.l2 = l2_excess(&t, &cone, p, r)?;
        rec.amended = amended_excess(e, params.kappa, params.a_gamma, params.a_sigma, r);
        let n = cone.n_sheets();
        rec.hypothesis = if n == 1 {
            e <= params.epsilon(1)
        } else {
            e <= params.epsilon(n) * alpha * alpha
        };

        if rec.amended > e || e <= params.floor {
            rec.action = DecayAction::Halve;
            r *= 0.5;
        } else {
            rec.action = DecayAction::Refit;
            let mut best: Option<(f64, f64, OpenBook, f64)> = None;
            for rc in params.candidate_radii(r) {
                let mut cand = Candidate {
                    radius: rc,
                    strong: None,
                    alpha: None,
                    score: None,
                    error: None,
                };
                let attempt = source.sample(p, rc).and_then(|tc| {
                    let c1 = fit_open_book(&tc, cone.spine(), p, rc, &fit)?;
                    let e1 = source.strong_excess(&tc, &c1, p, rc, &params.cone)?;
                    Ok((c1, e1))
                });
                match attempt {
                    Ok((c1, e1)) => {
                        let a1 = book_angle(&c1);
                        let score = e1 / (a1 * a1).min(e);
                        cand.strong = Some(e1);
                        cand.alpha = Some(a1);
                        cand.score = Some(score);
                        if best.as_ref().is_none_or(|b| score < b.0) {
                            best = Some((score, rc, c1, e1));
                        }
                    }
                    Err(err) => cand.error = Some(err.to_string()),
                }
                rec.candidates.push(cand);
            }
            match best {
                Some((score, rc, c1, e1)) => {
                    rec.contraction = Some(e1 / e);
                    rec.contraction_held = Some(e1 <= params.theta * e);
                    rec.stall = score > params.theta;
                    rec.drift = book_distance(&c1, &cone).ok().map(|g| g * g / e);
                    cone = c1;
                    r = rc;
                    cached = Some(e1);
                }
                None => {
                    rec.stall = true;
                    rec.action = DecayAction::Halve;
                    r *= 0.5;
                }
            }
        }
        rec.next_radius = Some(r);
        if params.record_timings {
            rec.elapsed_ms = Some(started.elapsed().as_secs_f64() * 1e3);
        }
        records.push(rec);
    }
    let q_conserved = records.iter().all(|r| r.q == q);
    let ratios_in_range = records.iter().all(|rec| {
        rec.next_radius.is_none_or(|nr| {
            let ratio = nr / rec.radius;
            ratio >= params.eta * (1.0 - 1e-12) && ratio <= 0.5 * (1.0 + 1e-12)
        })
    });
    let refits = records.iter().filter(|r| r.contraction.is_some()).count();
    let contracted = records
        .iter()
        .filter(|r| r.contraction_held == Some(true))
        .count();
    let max_drift = records.iter().filter_map(|r| r.drift).reduce(f64::max);
    Ok(DecaySummary {
        records,
        q_conserved,
        ratios_in_range,
        refits,
        contracted,
        max_drift,
    })
}
