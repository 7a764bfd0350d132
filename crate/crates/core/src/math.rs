//! Scalar functions and small dense vector helpers.
//!
//! The crate is `no_std`, so transcendental functions go through `libm`.

use alloc::vec;
use alloc::vec::Vec;

pub use core::f64::consts::PI;

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}
#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}
#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}
#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}
#[inline]
pub fn tan(x: f64) -> f64 {
    libm::tan(x)
}
#[inline]
pub fn acos(x: f64) -> f64 {
    libm::acos(x.clamp(-1.0, 1.0))
}
#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}
#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}
#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}
#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}
#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

/// Integer power by repeated squaring.
pub fn powi(mut x: f64, n: i32) -> f64 {
    let mut e = n.unsigned_abs();
    let mut acc = 1.0;
    while e > 0 {
        if e & 1 == 1 {
            acc *= x;
        }
        x *= x;
        e >>= 1;
    }
    if n < 0 {
        1.0 / acc
    } else {
        acc
    }
}

/// Volume of the unit ball in R^m, `π^{m/2} / Γ(m/2 + 1)`.
pub fn unit_ball_volume(m: usize) -> f64 {
    let half = m as f64 / 2.0;
    powf(PI, half) / libm::tgamma(half + 1.0)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    sqrt(norm_sq(a))
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sqrt(dist_sq(a, b))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `y += s * x`
#[inline]
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn unit(dim: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[k] = 1.0;
    v
}

/// Normalizes in place; returns the original norm.
pub fn normalize(a: &mut [f64]) -> f64 {
    let n = norm(a);
    if n > 0.0 {
        for x in a.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// Angle between two nonzero vectors, in `[0, π]`.
pub fn angle(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    // atan2 form keeps precision for nearly parallel vectors
    let c = dot(a, b) / (na * nb);
    let mut cross = 0.0;
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            let w = a[i] * b[j] - a[j] * b[i];
            cross += w * w;
        }
    }
    atan2(sqrt(cross) / (na * nb), c)
}

/// Modified Gram–Schmidt on row vectors. Returns `None` if the rows are
/// (numerically) linearly dependent.
pub fn orthonormalize(rows: &mut [Vec<f64>]) -> Option<()> {
    for i in 0..rows.len() {
        for j in 0..i {
            let (head, tail) = rows.split_at_mut(i);
            let c = dot(&tail[0], &head[j]);
            axpy(&mut tail[0], -c, &head[j]);
        }
        if normalize(&mut rows[i]) < 1e-13 {
            return None;
        }
    }
    Some(())
}

/// Determinant of a small square matrix stored row-major, by partial pivoting.
pub fn det(mut a: Vec<f64>, n: usize) -> f64 {
    let mut d = 1.0;
    for c in 0..n {
        let mut p = c;
        for r in (c + 1)..n {
            if abs(a[r * n + c]) > abs(a[p * n + c]) {
                p = r;
            }
        }
        if a[p * n + c] == 0.0 {
            return 0.0;
        }
        if p != c {
            for k in 0..n {
                a.swap(p * n + k, c * n + k);
            }
            d = -d;
        }
        let piv = a[c * n + c];
        d *= piv;
        for r in (c + 1)..n {
            let f = a[r * n + c] / piv;
            if f != 0.0 {
                for k in c..n {
                    a[r * n + k] -= f * a[c * n + k];
                }
            }
        }
    }
    d
}

/// Solves the small dense system `a x = b` (row-major), returning `None` if singular.
pub fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for c in 0..n {
        let mut p = c;
        for r in (c + 1)..n {
            if abs(a[r * n + c]) > abs(a[p * n + c]) {
                p = r;
            }
        }
        if abs(a[p * n + c]) < 1e-300 {
            return None;
        }
        if p != c {
            for k in 0..n {
                a.swap(p * n + k, c * n + k);
            }
            b.swap(p, c);
        }
        let piv = a[c * n + c];
        for r in 0..n {
            if r == c {
                continue;
            }
            let f = a[r * n + c] / piv;
            if f != 0.0 {
                for k in c..n {
                    a[r * n + k] -= f * a[c * n + k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i * n + i]).collect())
}

/// `n` log-spaced values from `a` to `b` inclusive.
pub fn log_spaced(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (ln(a), ln(b));
    (0..n)
        .map(|k| exp(la + (lb - la) * k as f64 / (n - 1) as f64))
        .collect()
}
