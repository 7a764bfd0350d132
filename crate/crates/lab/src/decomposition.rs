//! Splitting a current into per-sheet pieces along a fitted tangent cone.

use openbook_core::geometry::{book_angle, OpenBook};
use openbook_core::math;
use openbook_core::measures::{pushforward_circular, DiscreteCurrent};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeSample {
    pub index: usize,
    pub point: Vec<f64>,
    pub sheet: usize,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SheetPiece {
    pub sheet: usize,
    pub expected: usize,
    /// Circular-pushforward mass in the half-ball over `ω_m r^m / 2`.
    pub density: f64,
    pub multiplicity: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub pass: bool,
    /// Smallest margin over all off-spine samples in the ball.
    pub margin: f64,
    /// Wedge half-opening `α(C)/3`.
    pub opening: f64,
    pub pieces: Vec<SheetPiece>,
    pub bridges: Vec<BridgeSample>,
    /// Samples within `10⁻⁶ r` of the spine, not assigned.
    pub on_spine: usize,
    #[serde(skip)]
    pub currents: Vec<DiscreteCurrent>,
}

/// Assigns every sample of `B_r(p)` off the spine to the nearest sheet of `c`. A sample's margin
/// is `α(C)/3` minus the angle between `σ(q)` and that sheet's normal; it is a bridge if the
/// margin is not positive.
pub fn decomposition_check(
    t: &DiscreteCurrent,
    c: &OpenBook,
    p: &[f64],
    r: f64,
) -> Result<Decomposition> {
    let opening = book_angle(c).min(std::f64::consts::PI) / 3.0;
    let spine = c.spine();
    let n = c.n_sheets();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut bridges = Vec::new();
    let mut margin = f64::INFINITY;
    let mut on_spine = 0;
    for (k, x) in t.points.iter().enumerate() {
        if math::dist_sq(x, p) >= r * r {
            continue;
        }
        if spine.dist(x) <= 1e-6 * r {
            on_spine += 1;
            continue;
        }
        let s = spine.sigma(x)?;
        let (j, ang) = (0..n)
            .map(|j| (j, math::angle(&s, &c.sheets()[j].normal)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("books have a sheet");
        let mk = opening - ang;
        margin = margin.min(mk);
        if mk <= 0.0 {
            bridges.push(BridgeSample {
                index: k,
                point: x.clone(),
                sheet: j,
                margin: mk,
            });
        }
        members[j].push(k);
    }
    let half = math::unit_ball_volume(c.m()) * r.powi(c.m() as i32) / 2.0;
    let center = spine.circular(p);
    let mut currents = Vec::with_capacity(n);
    let pieces: Vec<SheetPiece> = members
        .iter()
        .enumerate()
        .map(|(j, idx)| {
            let piece = t.select(idx);
            let mass = pushforward_circular(&piece, spine).ball_mass(&center, r).0;
            currents.push(piece);
            let density = mass / half;
            SheetPiece {
                sheet: j,
                expected: c.sheets()[j].multiplicity,
                density,
                multiplicity: density.round().max(0.0) as usize,
                samples: idx.len(),
            }
        })
        .collect();
    let pass = margin > 0.0 && pieces.iter().all(|s| s.multiplicity == s.expected);
    Ok(Decomposition {
        pass,
        margin,
        opening,
        pieces,
        bridges,
        on_spine,
        currents,
    })
}
