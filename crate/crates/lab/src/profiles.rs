//! Non-concentration and monotonicity-remainder profiles.

use openbook_core::excess::l2_excess;
use openbook_core::geometry::OpenBook;
use openbook_core::math;
use openbook_core::measures::DiscreteCurrent;
use openbook_core::Error;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonConcentration {
    pub radius: f64,
    pub sigma: Vec<f64>,
    /// `r^{−(m+2)} ∫_{B_r ∩ B_{σr}(V)} dist(q, C)² d‖T‖`
    pub values: Vec<f64>,
    /// The full `𝐄(T, C, B_r)`.
    pub total: f64,
    /// Least-squares slope of `log value` against `log σ` over positive values.
    pub slope: Option<f64>,
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

pub fn nonconcentration_profile(
    t: &DiscreteCurrent,
    c: &OpenBook,
    p: &[f64],
    r: f64,
    sigma: &[f64],
) -> Result<NonConcentration> {
    let total = l2_excess(t, c, p, r)?;
    let norm = r.powi(-(c.m() as i32 + 2));
    // distance to V and squared distance to C for every sample in the ball
    let mut inside: Vec<(f64, f64)> = t
        .points
        .iter()
        .zip(&t.weights)
        .filter(|(x, _)| math::dist_sq(x, p) < r * r)
        .map(|(x, w)| (c.spine().dist(x), w * c.dist_sq(x)))
        .collect();
    inside.sort_by(|a, b| a.0.total_cmp(&b.0));
    let values = sigma
        .iter()
        .map(|s| {
            inside
                .iter()
                .take_while(|(d, _)| *d < s * r)
                .map(|(_, e)| e)
                .sum::<f64>()
                * norm
        })
        .collect::<Vec<_>>();
    Ok(NonConcentration {
        radius: r,
        sigma: sigma.to_vec(),
        slope: loglog_slope(sigma, &values),
        values,
        total,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Remainder {
    pub radii: Vec<f64>,
    /// `∫_{B_r(p)} |q^⊥|²/|q|^{m+2} d‖T‖` with `q` measured from `p`.
    pub values: Vec<f64>,
    /// Samples within `10⁻⁶ r` of the spine that were skipped, per radius.
    pub excluded: Vec<usize>,
}

pub fn remainder_profile(
    t: &DiscreteCurrent,
    c: &OpenBook,
    p: &[f64],
    radii: &[f64],
) -> Result<Remainder> {
    if t.tangents.is_none() {
        return Err(Error::MissingTangents.into());
    }
    let m = c.m() as i32;
    let mut values = Vec::with_capacity(radii.len());
    let mut excluded = Vec::with_capacity(radii.len());
    for &r in radii {
        let cut = 1e-6 * r;
        let mut sum = 0.0;
        let mut skipped = 0;
        for i in 0..t.len() {
            let x = &t.points[i];
            let v = math::sub(x, p);
            let d2 = math::norm_sq(&v);
            if d2 >= r * r {
                continue;
            }
            if c.spine().dist(x) < cut || d2 == 0.0 {
                skipped += 1;
                continue;
            }
            sum += t.weights[i] * t.perp_sq(i, &v)? / d2.sqrt().powi(m + 2);
        }
        values.push(sum);
        excluded.push(skipped);
    }
    Ok(Remainder {
        radii: radii.to_vec(),
        values,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use openbook_core::measures::{
        sample_graph_over_book, sample_open_book, GraphTerm, SampleLayout, SheetGraph,
    };

    fn c() -> OpenBook {
        OpenBook::planar(2, 2, &[(0.0, 1), (2.0, 1)]).unwrap()
    }

    fn graph(eps: f64, degree: u32) -> DiscreteCurrent {
        let c = c();
        let e4 = math::unit(4, 3);
        let g = SheetGraph::uniform(
            &c,
            vec![
                vec![GraphTerm {
                    coeff: eps,
                    degree,
                    direction: e4.clone(),
                }],
                vec![GraphTerm {
                    coeff: -eps,
                    degree,
                    direction: e4,
                }],
            ],
        );
        sample_graph_over_book(&c, &g, 1.0, 20_000, 3, SampleLayout::Stratified).unwrap()
    }

    #[test]
    fn book_profiles_vanish() {
        let t = sample_open_book(&c(), 1.0, 4000, 1, SampleLayout::Stratified).unwrap();
        let nc = nonconcentration_profile(&t, &c(), &[0.0; 4], 0.9, &[0.1, 0.5, 1.0]).unwrap();
        assert!(nc.values.iter().all(|v| *v < 1e-14), "{:?}", nc.values);
        let rem = remainder_profile(&t, &c(), &[0.0; 4], &[0.25, 0.5, 0.9]).unwrap();
        assert!(rem.values.iter().all(|v| *v < 1e-12), "{:?}", rem.values);
    }

    #[test]
    fn linear_graph_profile_is_monotone_and_bounded() {
        let t = graph(0.05, 1);
        let sigma = [0.05, 0.1, 0.2, 0.4, 0.8, 1.0];
        let nc = nonconcentration_profile(&t, &c(), &[0.0; 4], 0.9, &sigma).unwrap();
        assert!(nc.values.windows(2).all(|w| w[0] <= w[1]));
        assert!(*nc.values.last().unwrap() <= nc.total * (1.0 + 1e-12));
    }

    #[test]
    fn smooth_graph_slope_at_least_one() {
        for degree in [1, 2] {
            let t = graph(0.05, degree);
            let sigma = [0.05, 0.1, 0.2, 0.4];
            let nc = nonconcentration_profile(&t, &c(), &[0.0; 4], 0.9, &sigma).unwrap();
            assert!(nc.slope.unwrap() >= 1.0, "{degree}: {:?}", nc.slope);
        }
    }

    #[test]
    fn remainder_scales_quadratically_and_grows_with_r() {
        let radii = [0.2, 0.4, 0.6, 0.8];
        let a = remainder_profile(&graph(0.02, 2), &c(), &[0.0; 4], &radii).unwrap();
        let b = remainder_profile(&graph(0.04, 2), &c(), &[0.0; 4], &radii).unwrap();
        assert!(a.values.windows(2).all(|w| w[0] <= w[1]));
        let ratio = b.values[3] / a.values[3];
        assert!((ratio - 4.0).abs() < 0.2, "{ratio}");
    }
}
