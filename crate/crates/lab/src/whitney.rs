//! Dyadic cubes over the spine and their classification into interior, boundary-stopping,
//! outer, central and inner cubes.

use openbook_core::geometry::{layer_subdivision, OpenBook};
use openbook_core::math;
use openbook_core::measures::DiscreteCurrent;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitneyParams {
    pub max_generation: u32,
    pub tau: f64,
    /// `δ̄`: the separation assigned to a singleton layer.
    pub delta_bar: f64,
    /// Upper density bound on `B(L)`, in units of `ω_m r^m`; `Q/2 + 1/2` when absent.
    pub density_threshold: Option<f64>,
    /// `δ` handed to the layer subdivision.
    pub layer_delta: f64,
    /// Cubes with fewer samples in `B^h(L)` are flagged.
    pub min_samples: usize,
}

impl Default for WhitneyParams {
    fn default() -> Self {
        WhitneyParams {
            max_generation: 5,
            tau: 0.1,
            delta_bar: 0.01,
            density_threshold: None,
            layer_delta: 0.5,
            min_samples: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "k")]
pub enum CubeClass {
    /// Interior, below an inner cube.
    Interior,
    BoundaryStopping,
    Outer,
    Central(usize),
    Inner,
    /// Below a boundary-stopping cube.
    Excluded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeRegion {
    pub generation: u32,
    /// Integer position in `[0, 2^ℓ)^{m−1}`.
    pub index: Vec<u64>,
    /// Center `y_L` in spine coordinates.
    pub center: Vec<f64>,
    pub side: f64,
    pub class: CubeClass,
    /// `𝐄(L, 0)`
    pub local_excess: f64,
    /// `‖T‖(B(L)) / (ω_m (2^{2−ℓ})^m)`
    pub density_ratio: f64,
    pub gamma_hit: bool,
    pub samples: usize,
    pub sparse: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitneyReport {
    pub cubes: Vec<CubeRegion>,
    /// `s(k)` for `k = 0..=κ̄`.
    pub separations: Vec<f64>,
    pub kappa_bar: usize,
    /// Largest number of cubes whose `B^h` meets a given cube's `B^h`.
    pub max_overlap: usize,
    pub overlap_bound: usize,
}

impl WhitneyReport {
    pub fn count(&self, f: impl Fn(&CubeClass) -> bool) -> usize {
        self.cubes.iter().filter(|c| f(&c.class)).count()
    }
}

/// Hausdorff distance between the unit half-discs of two sheets at angle `θ`.
pub fn sheet_separation(theta: f64) -> f64 {
    if theta <= std::f64::consts::FRAC_PI_2 {
        theta.sin()
    } else {
        1.0
    }
}

/// `s(k)` for every layer of `C` (singletons get `δ̄`).
pub fn layer_separations(c: &OpenBook, layer_delta: f64, delta_bar: f64) -> Result<Vec<f64>> {
    if c.n_sheets() < 2 {
        return Ok(vec![delta_bar]);
    }
    let ld = layer_subdivision(c, layer_delta)?;
    let a = c.angle_matrix();
    let n = c.n_sheets();
    Ok(ld
        .index_sets
        .iter()
        .map(|set| {
            if set.len() < 2 {
                return delta_bar;
            }
            let mut s = f64::INFINITY;
            for (k, &i) in set.iter().enumerate() {
                for &j in &set[k + 1..] {
                    s = s.min(sheet_separation(a[i * n + j]));
                }
            }
            s
        })
        .collect())
}

fn side(m: usize, l: u32) -> f64 {
    2f64.powi(1 - l as i32) / ((m - 1) as f64).sqrt()
}

fn cube_center(m: usize, l: u32, index: &[u64]) -> Vec<f64> {
    let s = side(m, l);
    let lo = -1.0 / ((m - 1) as f64).sqrt();
    index.iter().map(|&k| lo + (k as f64 + 0.5) * s).collect()
}

/// Cube of generation `l` whose region `R(L)` contains the point with spine coordinates `x`
/// (inside `L₀`) and normal distance `h ∈ (0, 1]`.
pub fn region_of(m: usize, x: &[f64], h: f64) -> Option<(u32, Vec<u64>)> {
    if !(h > 0.0 && h <= 1.0) {
        return None;
    }
    let l = (-h.log2()).floor().max(0.0) as u32;
    let l = if h > 2f64.powi(-(l as i32)) {
        l.saturating_sub(1)
    } else {
        l
    };
    let lo = -1.0 / ((m - 1) as f64).sqrt();
    let s = side(m, l);
    let n = 1u64 << l;
    let mut index = Vec::with_capacity(m - 1);
    for &c in x {
        let k = ((c - lo) / s).floor();
        if k < 0.0 || k >= n as f64 + 1e-12 {
            return None;
        }
        index.push((k as u64).min(n - 1));
    }
    Some((l, index))
}

/// `|T|(B(L))`-type sums over the samples, with `B(L) = B_{2^{2−ℓ}}(y_L)` and
/// `B^h(L) = B(L) ∖ B_{2^{−5−ℓ}}(V)`.
struct Sums {
    ball_mass: f64,
    excess: f64,
    samples: usize,
}

fn cube_sums(t: &DiscreteCurrent, c: &OpenBook, y: &[f64], l: u32) -> Sums {
    let r = 2f64.powi(2 - l as i32);
    let cut = 2f64.powi(-5 - l as i32);
    let mut s = Sums {
        ball_mass: 0.0,
        excess: 0.0,
        samples: 0,
    };
    for (p, w) in t.points.iter().zip(&t.weights) {
        if math::dist_sq(p, y) >= r * r {
            continue;
        }
        s.ball_mass += w;
        if c.spine().dist(p) >= cut {
            s.excess += w * c.dist_sq(p);
            s.samples += 1;
        }
    }
    s.excess *= 2f64.powi((c.m() as i32 + 2) * l as i32);
    s
}

fn hits_gamma(gamma: &[Vec<f64>], c: &OpenBook, y: &[f64], l: u32) -> bool {
    let r = 2f64.powi(2 - l as i32);
    let cut = 2f64.powi(-5 - l as i32);
    gamma
        .iter()
        .any(|g| math::dist_sq(g, y) < r * r && c.spine().dist(g) >= cut)
}

/// Classifies every cube of generation `≤ max_generation` by the dyadic region rules, using
/// the cone `C = C₀` for `𝐄(L, 0)` and its layers for `s(k)`. `gamma` samples the boundary.
pub fn whitney_classify(
    t: &DiscreteCurrent,
    c: &OpenBook,
    gamma: &[Vec<f64>],
    params: &WhitneyParams,
) -> Result<WhitneyReport> {
    let m = c.m();
    if m < 2 {
        return Err(LabError::Config("Whitney cubes need m ≥ 2".into()));
    }
    if params.max_generation > 12 {
        return Err(LabError::Config("max_generation above 12".into()));
    }
    let sep = layer_separations(c, params.layer_delta, params.delta_bar)?;
    let threshold = params.density_threshold.unwrap_or(c.q() as f64 / 2.0 + 0.5);
    let omega = math::unit_ball_volume(m);

    // per cube: (interior, hit-so-far, max ancestor excess, class)
    struct Node {
        interior: bool,
        gamma_line: bool,
        worst: f64,
        class: CubeClass,
    }
    let mut cubes = Vec::new();
    let mut prev: Vec<Node> = Vec::new();
    for l in 0..=params.max_generation {
        let per_axis = 1u64 << l;
        let total = per_axis.pow((m - 1) as u32);
        let mut level = Vec::with_capacity(total as usize);
        for lin in 0..total {
            let mut index = Vec::with_capacity(m - 1);
            let mut rest = lin;
            for _ in 0..m - 1 {
                index.push(rest % per_axis);
                rest /= per_axis;
            }
            index.reverse();
            let parent = if l == 0 {
                None
            } else {
                let pidx: u64 = index.iter().fold(0, |acc, &k| acc * (per_axis / 2) + k / 2);
                Some(&prev[pidx as usize])
            };
            let center = cube_center(m, l, &index);
            let mut y = c.spine().origin().to_vec();
            for (cx, e) in center.iter().zip(c.spine().basis()) {
                math::axpy(&mut y, *cx, e);
            }
            let sums = cube_sums(t, c, &y, l);
            let hit = hits_gamma(gamma, c, &y, l);
            let density_ratio = sums.ball_mass / (omega * 2f64.powi(m as i32 * (2 - l as i32)));
            let gamma_line = hit || parent.is_some_and(|p| p.gamma_line);
            let interior = !gamma_line && density_ratio <= threshold;
            let parent_interior = parent.is_none_or(|p| p.interior);
            let worst = parent.map_or(0.0, |p| p.worst).max(sums.excess);
            let parent_typed =
                parent.is_some_and(|p| matches!(p.class, CubeClass::Outer | CubeClass::Central(_)));
            let class = if !interior {
                if parent_interior {
                    CubeClass::BoundaryStopping
                } else {
                    CubeClass::Excluded
                }
            } else {
                match (0..sep.len()).find(|&k| worst <= params.tau * params.tau * sep[k] * sep[k]) {
                    Some(0) => CubeClass::Outer,
                    Some(k) => CubeClass::Central(k),
                    None if parent_typed => CubeClass::Inner,
                    None => CubeClass::Interior,
                }
            };
            cubes.push(CubeRegion {
                generation: l,
                index,
                center,
                side: side(m, l),
                class,
                local_excess: sums.excess,
                density_ratio,
                gamma_hit: hit,
                samples: sums.samples,
                sparse: sums.samples < params.min_samples,
            });
            level.push(Node {
                interior,
                gamma_line,
                worst,
                class,
            });
        }
        prev = level;
    }
    let (max_overlap, overlap_bound) = overlap_counts(m, &cubes);
    Ok(WhitneyReport {
        cubes,
        kappa_bar: sep.len() - 1,
        separations: sep,
        max_overlap,
        overlap_bound,
    })
}

/// `B^h(L) ∩ B^h(L′) ≠ ∅` for balls centered on the spine: the lens of the two balls must
/// reach above both excluded neighborhoods of `V`.
fn bh_meet(y1: &[f64], l1: u32, y2: &[f64], l2: u32) -> bool {
    let (r1, r2) = (2f64.powi(2 - l1 as i32), 2f64.powi(2 - l2 as i32));
    let cut = 2f64.powi(-5 - l1 as i32).max(2f64.powi(-5 - l2 as i32));
    let d = math::dist(y1, y2);
    if d >= r1 + r2 {
        return false;
    }
    let height = if d <= (r1 - r2).abs() {
        r1.min(r2)
    } else {
        let a = (d * d + r1 * r1 - r2 * r2) / (2.0 * d);
        (r1 * r1 - a * a).max(0.0).sqrt()
    };
    height > cut
}

/// Measured overlap count and the combinatorial bound: for each generation gap `j`
/// with `|j| ≤ 7` (beyond it the heights cannot meet), the number of cubes of
/// generation `ℓ + j` within reach of a cube of generation `ℓ`.
fn overlap_counts(m: usize, cubes: &[CubeRegion]) -> (usize, usize) {
    let mut worst = 0;
    for a in cubes {
        let n = cubes
            .iter()
            .filter(|b| bh_meet(&a.center, a.generation, &b.center, b.generation))
            .count();
        worst = worst.max(n);
    }
    let mut bound = 0usize;
    for j in -7i32..=7 {
        let reach = 4.0 + 4.0 * 2f64.powi(-j);
        let s = 2.0 * 2f64.powi(-j) / ((m - 1) as f64).sqrt();
        let per_axis = (2.0 * reach / s).ceil() as usize + 1;
        bound += per_axis.pow((m - 1) as u32);
    }
    (worst, bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::flat_boundary;
    use openbook_core::measures::{
        sample_graph_over_book, sample_open_book, GraphTerm, SampleLayout, SheetGraph,
    };
    use rand::{Rng, SeedableRng};

    fn book() -> OpenBook {
        OpenBook::planar(2, 2, &[(0.0, 1), (2.0, 1)]).unwrap()
    }

    #[test]
    fn book_without_boundary_is_all_outer() {
        let c = book();
        let t = sample_open_book(&c, 4.0, 8000, 2, SampleLayout::Stratified).unwrap();
        let rep = whitney_classify(
            &t,
            &c,
            &[],
            &WhitneyParams {
                max_generation: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rep.cubes.len(), 31);
        assert!(
            rep.cubes.iter().all(|q| q.class == CubeClass::Outer),
            "{:?}",
            rep.cubes.iter().map(|q| q.class).collect::<Vec<_>>()
        );
        assert!(rep.max_overlap <= rep.overlap_bound);
    }

    #[test]
    fn flat_gamma_stops_touching_cubes() {
        let c = book();
        let t = sample_open_book(&c, 4.0, 8000, 2, SampleLayout::Stratified).unwrap();
        // a flat boundary line leaving the spine through 0 along e₄
        let gamma = flat_boundary(&[0.0; 4], &math::unit(4, 3), 4.0, 1e-3);
        let params = WhitneyParams {
            max_generation: 5,
            ..Default::default()
        };
        let rep = whitney_classify(&t, &c, &gamma, &params).unwrap();
        for q in &rep.cubes {
            let mut y = vec![0.0; 4];
            y[0] = q.center[0];
            let touches = hits_gamma(&gamma, &c, &y, q.generation);
            let ancestor_touch = rep.cubes.iter().any(|a| {
                a.generation < q.generation
                    && a.gamma_hit
                    && (q.index[0] >> (q.generation - a.generation)) == a.index[0]
            });
            match q.class {
                CubeClass::BoundaryStopping => assert!(touches && !ancestor_touch),
                CubeClass::Excluded => assert!(ancestor_touch),
                CubeClass::Outer => assert!(!touches && !ancestor_touch),
                other => panic!("unexpected {other:?}"),
            }
        }
        assert!(rep.count(|k| *k == CubeClass::BoundaryStopping) >= 1);
    }

    #[test]
    fn central_cubes_follow_excess_threshold() {
        // three sheets: two close ones merge in the first layer step
        let c = OpenBook::planar(2, 2, &[(0.0, 1), (0.15, 1), (2.5, 1)]).unwrap();
        let sep = layer_separations(&c, 0.5, 0.01).unwrap();
        assert!(sep.len() >= 2 && sep[1] > sep[0]);
        let e4 = math::unit(4, 3);
        let g = SheetGraph::uniform(
            &c,
            vec![
                vec![GraphTerm {
                    coeff: 0.004,
                    degree: 2,
                    direction: e4.clone(),
                }],
                vec![],
                vec![],
            ],
        );
        let t = sample_graph_over_book(&c, &g, 4.0, 8000, 5, SampleLayout::Stratified).unwrap();
        let params = WhitneyParams {
            max_generation: 4,
            tau: 0.3,
            ..Default::default()
        };
        let rep = whitney_classify(&t, &c, &[], &params).unwrap();
        let tau2 = params.tau * params.tau;
        for q in &rep.cubes {
            // worst excess along the ancestry decides the type
            let worst = rep
                .cubes
                .iter()
                .filter(|a| {
                    a.generation <= q.generation
                        && (q.index[0] >> (q.generation - a.generation)) == a.index[0]
                })
                .map(|a| a.local_excess)
                .fold(0.0, f64::max);
            let k = (0..sep.len()).find(|&k| worst <= tau2 * sep[k] * sep[k]);
            match (q.class, k) {
                (CubeClass::Outer, Some(0)) => {}
                (CubeClass::Central(a), Some(b)) => assert_eq!(a, b),
                (CubeClass::Inner | CubeClass::Interior, None) => {}
                other => panic!("{other:?} for excess {worst}"),
            }
        }
        assert!(
            rep.count(|k| matches!(k, CubeClass::Central(_))) > 0,
            "{sep:?} {:?}",
            rep.cubes
                .iter()
                .map(|q| (q.generation, q.class, q.local_excess))
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn regions_tile_the_whitney_domain() {
        let m = 3;
        let g = 5u32;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let lo = -1.0 / ((m - 1) as f64).sqrt();
        for _ in 0..5000 {
            let x: Vec<f64> = (0..m - 1)
                .map(|_| lo + 2.0 * (-lo) * rng.random::<f64>())
                .collect();
            let h = 2f64.powi(-(g as i32) - 1)
                + (1.0 - 2f64.powi(-(g as i32) - 1)) * rng.random::<f64>();
            let (l, idx) = region_of(m, &x, h).unwrap();
            // membership by the definition, counted over all cubes up to generation g
            let mut hits = 0;
            for gen in 0..=g {
                let s = side(m, gen);
                let band = 2f64.powi(-(gen as i32) - 1) < h && h < 2f64.powi(-(gen as i32));
                let boundary_band =
                    h == 2f64.powi(-(gen as i32)) || h == 2f64.powi(-(gen as i32) - 1);
                if !band && !boundary_band {
                    continue;
                }
                let inside: Vec<u64> = x.iter().map(|c| ((c - lo) / s).floor() as u64).collect();
                if band {
                    hits += 1;
                    if gen == l {
                        assert_eq!(inside, idx);
                    }
                }
            }
            assert_eq!(hits, 1);
        }
    }
}
