//! Small dense-vector helpers over `f64` slices.
//!
//! Every routine accumulates left to right so that two call sites computing
//! the same quantity agree bit for bit.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |acc, x| acc + x * x)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| {
        let t = x - y;
        acc + t * t
    })
}

/// `‖a − b‖²_D = Σ D_i (a_i − b_i)²`.
pub fn dist_sq_weighted(a: &[f64], b: &[f64], diag: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    debug_assert_eq!(a.len(), diag.len());
    a.iter()
        .zip(b)
        .zip(diag)
        .fold(0.0, |acc, ((x, y), w)| {
            let t = x - y;
            acc + w * t * t
        })
}

pub fn is_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

#[inline]
pub fn positive_part(v: f64) -> f64 {
    // NaN passes through so divergence is visible downstream.
    if v > 0.0 || v.is_nan() {
        v
    } else {
        0.0
    }
}
