//! Hölder diagnostic for the multivalued normal map along a flat boundary.

use openbook_core::excess::{fit_open_book, FitOptions};
use openbook_core::geometry::{OpenBook, Spine};
use openbook_core::math;
use openbook_core::measures::DiscreteCurrent;
use openbook_core::qvalued::{q_metric, QPoint};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// `α = log 2 / |log η|`
pub fn decay_exponent(eta: f64) -> f64 {
    std::f64::consts::LN_2 / eta.ln().abs()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalMapPoint {
    pub point: Vec<f64>,
    /// Fitted cone per radius; `None` where the fit failed.
    pub cones: Vec<Option<OpenBook>>,
    /// The normal tuple of the cone at the smallest radius that fitted.
    pub eta: Option<QPoint>,
    pub radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderRow {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    /// `𝒢(η(q_i), η(q_j))`
    pub g: f64,
    /// `𝒢² / |q_i − q_j|^α`
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderTable {
    pub alpha: f64,
    pub radii: Vec<f64>,
    pub points: Vec<NormalMapPoint>,
    pub rows: Vec<HolderRow>,
}

impl HolderTable {
    pub fn max_ratio(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.ratio).reduce(f64::max)
    }
}

/// Fits `η(q)` at every point (which must lie on `spine`) over decreasing `radii` and tabulates
/// every pair whose normal maps have the same total multiplicity.
pub fn normal_map_holder(
    t: &DiscreteCurrent,
    spine: &Spine,
    points: &[Vec<f64>],
    radii: &[f64],
    fit: &FitOptions,
    alpha: f64,
) -> Result<HolderTable> {
    if points.len() < 2 {
        return Err(LabError::Config("need at least two boundary points".into()));
    }
    let mut radii = radii.to_vec();
    radii.sort_by(|a, b| b.total_cmp(a));
    let mut out = Vec::with_capacity(points.len());
    for q in points {
        if spine.dist(q) > 1e-9 {
            return Err(openbook_core::Error::InvalidParameter(
                "boundary point off the spine".into(),
            )
            .into());
        }
        let cones: Vec<Option<OpenBook>> = radii
            .iter()
            .map(|&r| fit_open_book(t, spine, q, r, fit).ok())
            .collect();
        let last = cones.iter().rposition(Option::is_some);
        out.push(NormalMapPoint {
            point: q.clone(),
            eta: last
                .and_then(|k| cones[k].as_ref())
                .map(OpenBook::normal_tuple),
            radius: last.map(|k| radii[k]),
            cones,
        });
    }
    let mut rows = Vec::new();
    for i in 0..out.len() {
        for j in i + 1..out.len() {
            let (Some(a), Some(b)) = (&out[i].eta, &out[j].eta) else {
                continue;
            };
            if a.q() != b.q() {
                continue;
            }
            let distance = math::dist(&out[i].point, &out[j].point);
            let g = q_metric(a, b)?;
            rows.push(HolderRow {
                i,
                j,
                distance,
                g,
                ratio: g * g / distance.powf(alpha),
            });
        }
    }
    Ok(HolderTable {
        alpha,
        radii,
        points: out,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::rotating_book;

    fn spine_points(n: usize, step: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|k| vec![(k as f64 - (n as f64 - 1.0) / 2.0) * step, 0.0, 0.0, 0.0])
            .collect()
    }

    #[test]
    fn exponent_default() {
        assert!((decay_exponent(0.1) - std::f64::consts::LOG10_2).abs() < 1e-12);
        assert!((decay_exponent(0.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cylinder_has_constant_normal_map() {
        let t = rotating_book(2, 2, &[(0.0, 1), (2.0, 1)], 0.0, 2.0, 30_000, 5).unwrap();
        let spine = Spine::standard(2, 2);
        let fit = FitOptions {
            q: Some(2),
            ..Default::default()
        };
        let tab =
            normal_map_holder(&t, &spine, &spine_points(3, 0.4), &[0.8, 0.5], &fit, 0.3).unwrap();
        assert_eq!(tab.rows.len(), 3);
        assert!(tab.rows.iter().all(|r| r.g < 1e-9), "{:?}", tab.rows);
    }

    #[test]
    fn rotating_book_is_lipschitz() {
        let omega = 0.2;
        let t = rotating_book(2, 2, &[(0.0, 1), (2.0, 1)], omega, 2.0, 40_000, 6).unwrap();
        let spine = Spine::standard(2, 2);
        let fit = FitOptions {
            q: Some(2),
            ..Default::default()
        };
        let tab =
            normal_map_holder(&t, &spine, &spine_points(4, 0.3), &[0.8, 0.6], &fit, 1.0).unwrap();
        for r in &tab.rows {
            let expected = 2f64.sqrt() * omega * r.distance;
            assert!(
                (r.g - expected).abs() < 0.1 * expected + 2e-3,
                "{r:?} vs {expected}"
            );
        }
    }
}
