//! Scalar normal-distribution special functions.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Result, WceError};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Below this argument the inverse Mills ratio switches to the continued fraction.
const TAIL_SWITCH: f64 = -6.0;
const CF_DEPTH: usize = 120;

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub fn norm_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * LN_2PI
}

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Tail of the Laplace continued fraction for the Mills ratio,
/// `D_k = s + (k+1) / D_{k+1}`, returned as `(D_0, D_1, D_2)`.
fn mills_fraction(s: f64) -> (f64, f64, f64) {
    let mut d = s;
    for k in (3..=CF_DEPTH).rev() {
        d = s + k as f64 / d;
    }
    let d2 = d;
    let d1 = s + 2.0 / d2;
    let d0 = s + 1.0 / d1;
    (d0, d1, d2)
}

/// `phi(x) / Phi(x)`, stable deep in the left tail.
pub fn inv_mills(x: f64) -> f64 {
    if x < TAIL_SWITCH {
        mills_fraction(-x).0
    } else {
        norm_pdf(x) / norm_cdf(x)
    }
}

/// `log Phi(x)` without underflow in the left tail.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x < TAIL_SWITCH {
        norm_log_pdf(x) - inv_mills(x).ln()
    } else {
        norm_cdf(x).ln()
    }
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// First two raw moments of `N(m, t^2)` truncated to `[0, inf)`.
///
/// Returns `(E v, E v^2)`. For `m/t` below the tail switch both moments come
/// straight from the continued fraction so no cancellation occurs.
pub fn truncnorm_plus_moments(m: f64, t: f64) -> Result<(f64, f64)> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(WceError::Domain(format!("truncated normal scale must be positive, got {t}")));
    }
    if !m.is_finite() {
        return Err(WceError::Domain(format!("truncated normal location must be finite, got {m}")));
    }
    let r = m / t;
    if r < TAIL_SWITCH {
        let (_, d1, d2) = mills_fraction(-r);
        let mean = t / d1;
        let second = 2.0 * t * t / (d1 * d2);
        Ok((mean, second))
    } else {
        let lambda = inv_mills(r);
        let mean = m + t * lambda;
        let second = m * m + t * t + m * t * lambda;
        Ok((mean, second))
    }
}
