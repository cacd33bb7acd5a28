use nalgebra::{DMatrix, DVector};

use crate::distributions::ComponentDensity;
use crate::error::{CollapseKind, Result, WceError};

/// Posterior membership probabilities from the `n x K` matrix of
/// `log mixing weight + log component density`.
///
/// Rows are normalized in the log domain after subtracting the row maximum.
/// A row whose terms are all non-finite gets uniform responsibilities.
pub fn responsibilities_from_log(log_joint: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = log_joint.shape();
    let mut u = DMatrix::zeros(n, k);
    let mut degenerate = 0usize;
    for i in 0..n {
        let row = log_joint.row(i);
        let max = row.iter().cloned().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            degenerate += 1;
            for j in 0..k {
                u[(i, j)] = 1.0 / k as f64;
            }
            continue;
        }
        let mut total = 0.0;
        for j in 0..k {
            let v = row[j];
            let e = if v.is_nan() { 0.0 } else { (v - max).exp() };
            u[(i, j)] = e;
            total += e;
        }
        for j in 0..k {
            u[(i, j)] /= total;
        }
    }
    if degenerate > 0 {
        log::warn!("{degenerate} observation(s) underflowed in every component; assigned uniform responsibilities");
    }
    u
}

/// `log sum_k exp(log_joint[i, k])` per row.
pub fn log_mixture_from_log(log_joint: &DMatrix<f64>) -> Vec<f64> {
    log_joint
        .row_iter()
        .map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return max;
            }
            max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        })
        .collect()
}

/// Index of the largest responsibility per row; ties go to the lowest index.
pub fn map_labels(u: &DMatrix<f64>) -> Vec<usize> {
    u.row_iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// `f(y; theta)^gamma`, evaluated as `exp(gamma * log f)`.
pub fn density_weight<C: ComponentDensity>(y: &DVector<f64>, theta: &C, gamma: f64) -> f64 {
    weight_from_log(theta.log_density(y), gamma)
}

#[inline]
pub(crate) fn weight_from_log(log_f: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        (gamma * log_f).exp()
    }
}

/// `n x K` weight matrix from component log densities.
pub(crate) fn weights_from_log(log_f: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    log_f.map(|v| weight_from_log(v, gamma))
}

/// Mixing update `pi_k ∝ sum_i u_ik w_ik / b_k`.
///
/// A component whose numerator vanishes is reported as collapsed.
pub fn update_mixing(u: &DMatrix<f64>, w: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let (n, k) = u.shape();
    if w.shape() != (n, k) {
        return Err(WceError::DimensionMismatch { expected: k, got: w.ncols() });
    }
    if b.len() != k {
        return Err(WceError::DimensionMismatch { expected: k, got: b.len() });
    }
    let mut num = vec![0.0; k];
    for j in 0..k {
        if !(b[j] > 0.0) {
            return Err(WceError::Domain(format!("bias term B of component {j} must be positive")));
        }
        let s: f64 = (0..n).map(|i| u[(i, j)] * w[(i, j)]).sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(WceError::Collapse(CollapseKind::VanishingWeight { component: j }));
        }
        num[j] = s / b[j];
    }
    let total: f64 = num.iter().sum();
    Ok(num.into_iter().map(|v| v / total).collect())
}
