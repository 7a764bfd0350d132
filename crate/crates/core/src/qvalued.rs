//! Unordered Q-tuples of vectors and the matching metric 𝒢.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dist_sq, sqrt};

/// Q-points at or below this size are matched by exhaustive permutation.
pub const EXHAUSTIVE_MAX: usize = 6;

/// A multiset of `Q` vectors in `R^n`, stored in lexicographic order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct QPoint {
    atoms: Vec<Vec<f64>>,
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y).unwrap_or(Ordering::Equal) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

impl From<Vec<Vec<f64>>> for QPoint {
    fn from(atoms: Vec<Vec<f64>>) -> Self {
        QPoint::new(atoms)
    }
}

impl From<QPoint> for Vec<Vec<f64>> {
    fn from(q: QPoint) -> Self {
        q.atoms
    }
}

impl QPoint {
    pub fn new(mut atoms: Vec<Vec<f64>>) -> Self {
        atoms.sort_by(|a, b| lex(a, b));
        QPoint { atoms }
    }

    /// `Q⟦0⟧` in `R^n`.
    pub fn zero(q: usize, n: usize) -> Self {
        QPoint {
            atoms: vec![vec![0.0; n]; q],
        }
    }

    pub fn q(&self) -> usize {
        self.atoms.len()
    }

    pub fn dim(&self) -> usize {
        self.atoms.first().map_or(0, Vec::len)
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    /// `|a|² = Σ |a_i|²`
    pub fn norm_sq(&self) -> f64 {
        self.atoms.iter().map(|a| crate::math::norm_sq(a)).sum()
    }

    /// η∘a, the arithmetic mean of the atoms.
    pub fn average(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        for a in &self.atoms {
            crate::math::axpy(&mut mean, 1.0, a);
        }
        let q = self.q().max(1) as f64;
        mean.iter_mut().for_each(|x| *x /= q);
        mean
    }

    /// Every atom shifted by `v`.
    pub fn translate(&self, v: &[f64]) -> QPoint {
        QPoint::new(self.atoms.iter().map(|a| crate::math::add(a, v)).collect())
    }

    /// `a ⊖ η∘a`
    pub fn subtract_average(&self) -> QPoint {
        let mean = self.average();
        self.translate(&crate::math::scale(&mean, -1.0))
    }
}

/// Minimum-cost perfect matching on a square `q × q` row-major cost matrix.
/// Returns `(assignment, cost)` where row `i` is matched to column `assignment[i]`.
pub fn min_cost_assignment(cost: &[f64], q: usize) -> (Vec<usize>, f64) {
    if q == 0 {
        return (Vec::new(), 0.0);
    }
    if q <= EXHAUSTIVE_MAX {
        exhaustive_assignment(cost, q)
    } else {
        hungarian(cost, q)
    }
}

fn exhaustive_assignment(cost: &[f64], q: usize) -> (Vec<usize>, f64) {
    // Heap's algorithm; the first permutation visited with minimal cost wins.
    let mut perm: Vec<usize> = (0..q).collect();
    let eval = |p: &[usize]| {
        p.iter()
            .enumerate()
            .map(|(i, &j)| cost[i * q + j])
            .sum::<f64>()
    };
    let mut best = perm.clone();
    let mut best_cost = eval(&perm);
    let mut c = vec![0usize; q];
    let mut i = 1;
    while i < q {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let v = eval(&perm);
            if v < best_cost {
                best_cost = v;
                best.clone_from(&perm);
            }
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    (best, best_cost)
}

/// Kuhn–Munkres with potentials, O(q³).
fn hungarian(cost: &[f64], q: usize) -> (Vec<usize>, f64) {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; q + 1];
    let mut v = vec![0.0; q + 1];
    let mut p = vec![0usize; q + 1];
    let mut way = vec![0usize; q + 1];
    for i in 1..=q {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; q + 1];
        let mut used = vec![false; q + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=q {
                if !used[j] {
                    let cur = cost[(i0 - 1) * q + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=q {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; q];
    for j in 1..=q {
        assignment[p[j] - 1] = j - 1;
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * q + j])
        .sum();
    (assignment, total)
}

fn check_compatible(a: &QPoint, b: &QPoint) -> Result<()> {
    if a.q() != b.q() {
        return Err(Error::MismatchedQ(a.q(), b.q()));
    }
    if a.q() > 0 && a.dim() != b.dim() {
        return Err(Error::MismatchedDimension {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// Squared matching cost together with the optimal matching.
pub fn q_matching(a: &QPoint, b: &QPoint) -> Result<(Vec<usize>, f64)> {
    check_compatible(a, b)?;
    let q = a.q();
    let mut cost = Vec::with_capacity(q * q);
    for x in a.atoms() {
        for y in b.atoms() {
            cost.push(dist_sq(x, y));
        }
    }
    Ok(min_cost_assignment(&cost, q))
}

/// 𝒢(a, b): square root of the minimal summed squared distance over bijections.
pub fn q_metric(a: &QPoint, b: &QPoint) -> Result<f64> {
    let (_, c) = q_matching(a, b)?;
    Ok(sqrt(c.max(0.0)))
}

pub fn q_average(a: &QPoint) -> Vec<f64> {
    a.average()
}

pub fn q_subtract_average(a: &QPoint) -> QPoint {
    a.subtract_average()
}

/// A linear Q-valued map `x ↦ Σ Q_i ⟦v_i x_m⟧` acting on the half-space coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearQMap {
    pub directions: Vec<(Vec<f64>, usize)>,
}

impl LinearQMap {
    pub fn new(directions: Vec<(Vec<f64>, usize)>) -> Result<Self> {
        for (i, (vi, qi)) in directions.iter().enumerate() {
            if *qi == 0 {
                return Err(Error::InvalidParameter("zero multiplicity".into()));
            }
            for (vj, _) in &directions[..i] {
                if dist_sq(vi, vj) == 0.0 {
                    return Err(Error::InvalidParameter("repeated direction".into()));
                }
            }
        }
        Ok(LinearQMap { directions })
    }

    pub fn q(&self) -> usize {
        self.directions.iter().map(|d| d.1).sum()
    }

    /// Value at a point whose last coordinate is `x_m`.
    pub fn eval(&self, x_m: f64) -> QPoint {
        let mut atoms = Vec::with_capacity(self.q());
        for (v, q) in &self.directions {
            for _ in 0..*q {
                atoms.push(crate::math::scale(v, x_m));
            }
        }
        QPoint::new(atoms)
    }

    /// min separation `|v_i − v_j|` over distinct directions, or 1 when single-valued.
    pub fn alpha(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.directions.len() {
            for j in (i + 1)..self.directions.len() {
                best = best.min(sqrt(dist_sq(&self.directions[i].0, &self.directions[j].0)));
            }
        }
        if best.is_finite() {
            best
        } else {
            1.0
        }
    }

    /// `∫_{B_1^+} |DL|²` per unit volume: `Σ Q_i |v_i|²`.
    pub fn energy_density(&self) -> f64 {
        self.directions
            .iter()
            .map(|(v, q)| *q as f64 * crate::math::norm_sq(v))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_qpoint(rng: &mut ChaCha8Rng, q: usize, n: usize) -> QPoint {
        QPoint::new(
            (0..q)
                .map(|_| (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                .collect(),
        )
    }

    fn brute_force(a: &QPoint, b: &QPoint) -> f64 {
        // independent recursion over all bijections
        fn rec(a: &[Vec<f64>], b: &[Vec<f64>], used: &mut [bool], i: usize) -> f64 {
            if i == a.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..b.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(dist_sq(&a[i], &b[j]) + rec(a, b, used, i + 1));
                    used[j] = false;
                }
            }
            best
        }
        let mut used = vec![false; b.q()];
        sqrt(rec(a.atoms(), b.atoms(), &mut used, 0))
    }

    #[test]
    fn identity_and_permutation_invariance() {
        let a = QPoint::new(vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
        let b = QPoint::new(vec![vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(q_metric(&a, &a).unwrap(), 0.0);
        assert_eq!(q_metric(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_q_is_rejected() {
        let a = QPoint::zero(2, 1);
        let b = QPoint::zero(3, 1);
        assert_eq!(q_metric(&a, &b), Err(Error::MismatchedQ(2, 3)));
    }

    #[test]
    fn solver_matches_brute_force_for_q3() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = random_qpoint(&mut rng, 3, 2);
            let b = random_qpoint(&mut rng, 3, 2);
            assert!((q_metric(&a, &b).unwrap() - brute_force(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn hungarian_agrees_with_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for q in 2..=6 {
            for _ in 0..30 {
                let cost: Vec<f64> = (0..q * q).map(|_| rng.random::<f64>()).collect();
                let (_, e) = exhaustive_assignment(&cost, q);
                let (_, h) = hungarian(&cost, q);
                assert!((e - h).abs() < 1e-12, "q={q}: {e} vs {h}");
            }
        }
        // above the exhaustive limit the public entry point uses Hungarian
        let a = random_qpoint(&mut rng, 8, 3);
        let b = random_qpoint(&mut rng, 8, 3);
        assert!((q_metric(&a, &b).unwrap() - brute_force(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn average_and_centering() {
        let v = vec![0.3, -1.2];
        let a = QPoint::new(vec![v.clone(), crate::math::scale(&v, -1.0)]);
        assert!(crate::math::norm(&a.average()) < 1e-15);
        assert_eq!(a.subtract_average(), a);
        let single = QPoint::new(vec![v.clone()]);
        assert_eq!(single.average(), v);
        let b = QPoint::new(vec![vec![0.0], vec![2.0]]);
        assert_eq!(
            b.subtract_average(),
            QPoint::new(vec![vec![-1.0], vec![1.0]])
        );
    }

    #[test]
    fn mean_minimizes_squared_spread_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_qpoint(&mut rng, 4, 2);
        let spread = |p: &[f64]| a.atoms().iter().map(|x| dist_sq(x, p)).sum::<f64>();
        let mean = a.average();
        let at_mean = spread(&mean);
        for i in -40..=40 {
            for j in -40..=40 {
                let p = [i as f64 / 40.0, j as f64 / 40.0];
                assert!(spread(&p) >= at_mean - 1e-12);
            }
        }
    }

    #[test]
    fn linear_map_alpha() {
        let l = LinearQMap::new(vec![(vec![1.0, 0.0], 2), (vec![0.0, 1.0], 1)]).unwrap();
        assert!((l.alpha() - sqrt(2.0)).abs() < 1e-15);
        assert_eq!(l.q(), 3);
        let single = LinearQMap::new(vec![(vec![1.0], 3)]).unwrap();
        assert_eq!(single.alpha(), 1.0);
    }
}
