//! Sandwich covariance of the robust estimator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WceError};
use crate::gmm::GaussianModel;
use crate::moe::ExpertsModel;
use crate::snm::SkewNormalModel;
use crate::wce::{points, regression, Dataset, Family, FitResult, MixtureModel, MixtureParams};

/// Iterate differences smaller than this fall back to central differences.
const MIN_ITERATE_STEP: f64 = 1e-10;
const CENTRAL_STEP: f64 = 1e-5;

/// Asymptotic covariance over the free parameter coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichEstimate {
    /// Coordinate names, in the order of `estimate`, `std_errors` and `cov`.
    pub names: Vec<String>,
    pub estimate: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Row-major `d x d` covariance.
    pub cov: Vec<Vec<f64>>,
    /// Condition number of the estimated Jacobian.
    pub jacobian_condition: f64,
}

impl SandwichEstimate {
    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.names.len();
        DMatrix::from_fn(d, d, |a, b| self.cov[a][b])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|j| self.std_errors[j])
    }
}

/// Per-observation estimating functions (rows) with memberships and latent
/// moments replaced by their conditional expectations at `params`.
pub fn imputed_scores(data: &Dataset, params: &MixtureParams, gamma: f64) -> Result<DMatrix<f64>> {
    params.validate()?;
    match params {
        MixtureParams::Gaussian(m) => GaussianModel::imputed_scores(points(data, Family::Gaussian)?, m, gamma),
        MixtureParams::SkewNormal(m) => SkewNormalModel::imputed_scores(points(data, Family::SkewNormal)?, m, gamma),
        MixtureParams::Experts(m) => ExpertsModel::imputed_scores(regression(data)?, m, gamma),
    }
}

/// Names of the free coordinates used by the score and covariance.
pub fn coordinate_names(params: &MixtureParams) -> Vec<String> {
    match params {
        MixtureParams::Gaussian(m) => GaussianModel::coord_names(m),
        MixtureParams::SkewNormal(m) => SkewNormalModel::coord_names(m),
        MixtureParams::Experts(m) => ExpertsModel::coord_names(m),
    }
}

fn mean_score<M: MixtureModel>(data: &M::Data, params: &M::Params, gamma: f64) -> Result<Vec<f64>> {
    let g = M::imputed_scores(data, params, gamma)?;
    let n = g.nrows() as f64;
    Ok(g.column_iter().map(|c| c.sum() / n).collect())
}

fn mean_score_at<M: MixtureModel>(data: &M::Data, base: &M::Params, coords: &[f64], gamma: f64) -> Result<Vec<f64>> {
    mean_score::<M>(data, &M::with_free_coords(base, coords)?, gamma)
}

/// Jacobian of the mean imputed score. Column `j` uses the difference between
/// the final iterate and the final iterate with coordinate `j` reset to its
/// previous value; tiny or missing differences use central differences.
pub(crate) fn score_jacobian<M: MixtureModel>(
    data: &M::Data,
    params: &M::Params,
    previous: Option<&M::Params>,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    let psi = M::free_coords(params);
    let prev = previous.map(M::free_coords);
    let d = psi.len();
    let base = mean_score::<M>(data, params, gamma)?;
    let mut a = DMatrix::zeros(d, d);
    for j in 0..d {
        let diff = prev.as_ref().map(|p| psi[j] - p[j]).filter(|h| h.abs() >= MIN_ITERATE_STEP);
        let column: Vec<f64> = match diff {
            Some(h) => {
                let mut star = psi.clone();
                star[j] -= h;
                let other = mean_score_at::<M>(data, params, &star, gamma)?;
                base.iter().zip(&other).map(|(a, b)| (a - b) / h).collect()
            }
            None => {
                let step = CENTRAL_STEP * (1.0 + psi[j].abs());
                let mut plus = psi.clone();
                plus[j] += step;
                let mut minus = psi.clone();
                minus[j] -= step;
                let hi = mean_score_at::<M>(data, params, &plus, gamma)?;
                let lo = mean_score_at::<M>(data, params, &minus, gamma)?;
                hi.iter().zip(&lo).map(|(a, b)| (a - b) / (2.0 * step)).collect()
            }
        };
        for (r, v) in column.into_iter().enumerate() {
            a[(r, j)] = v;
        }
    }
    Ok(a)
}

/// Central-difference Jacobian of the mean imputed score.
pub(crate) fn central_jacobian<M: MixtureModel>(data: &M::Data, params: &M::Params, gamma: f64) -> Result<DMatrix<f64>> {
    score_jacobian::<M>(data, params, None, gamma)
}

fn sandwich<M: MixtureModel>(data: &M::Data, params: &M::Params, previous: Option<&M::Params>, gamma: f64) -> Result<SandwichEstimate> {
    let g = M::imputed_scores(data, params, gamma)?;
    let n = g.nrows() as f64;
    let a = score_jacobian::<M>(data, params, previous, gamma)?;
    let sv = a.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !condition.is_finite() || condition > 1e12 {
        return Err(WceError::SingularJacobian { condition });
    }
    let a_inv = a.try_inverse().ok_or(WceError::SingularJacobian { condition })?;
    let m = g.tr_mul(&g) / n;
    let v = &a_inv * m * a_inv.transpose() / n;
    let v = (&v + v.transpose()) * 0.5;
    let d = v.nrows();
    Ok(SandwichEstimate {
        names: M::coord_names(params),
        estimate: M::free_coords(params),
        std_errors: (0..d).map(|j| v[(j, j)].max(0.0).sqrt()).collect(),
        cov: (0..d).map(|r| (0..d).map(|c| v[(r, c)]).collect()).collect(),
        jacobian_condition: condition,
    })
}

fn previous<'a, T>(fit: &'a FitResult, pick: impl Fn(&'a MixtureParams) -> Option<&'a T>) -> Option<&'a T> {
    // a single iteration gives no usable iterate difference
    if fit.iterations < 2 {
        return None;
    }
    fit.previous_params.as_ref().and_then(pick)
}

/// `V = A⁻¹ M A⁻ᵀ / n`, with `A` the numeric Jacobian of the mean imputed
/// score and `M` the mean outer product of the scores, at the fitted values.
pub fn sandwich_covariance(fit: &FitResult, data: &Dataset) -> Result<SandwichEstimate> {
    let gamma = fit.gamma;
    match &fit.params {
        MixtureParams::Gaussian(m) => {
            let prev = previous(fit, |p| match p {
                MixtureParams::Gaussian(q) => Some(q),
                _ => None,
            });
            sandwich::<GaussianModel>(points(data, Family::Gaussian)?, m, prev, gamma)
        }
        MixtureParams::SkewNormal(m) => {
            let prev = previous(fit, |p| match p {
                MixtureParams::SkewNormal(q) => Some(q),
                _ => None,
            });
            sandwich::<SkewNormalModel>(points(data, Family::SkewNormal)?, m, prev, gamma)
        }
        MixtureParams::Experts(m) => {
            let prev = previous(fit, |p| match p {
                MixtureParams::Experts(q) => Some(q),
                _ => None,
            });
            sandwich::<ExpertsModel>(regression(data)?, m, prev, gamma)
        }
    }
}

/// Jacobians of the mean imputed score by iterate differences and by central
/// differences, for comparing the two schemes.
pub fn jacobians(fit: &FitResult, data: &Dataset) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let gamma = fit.gamma;
    match (&fit.params, fit.previous_params.as_ref()) {
        (MixtureParams::Gaussian(m), Some(MixtureParams::Gaussian(p))) => {
            let y = points(data, Family::Gaussian)?;
            Ok((score_jacobian::<GaussianModel>(y, m, Some(p), gamma)?, central_jacobian::<GaussianModel>(y, m, gamma)?))
        }
        (MixtureParams::SkewNormal(m), Some(MixtureParams::SkewNormal(p))) => {
            let y = points(data, Family::SkewNormal)?;
            Ok((score_jacobian::<SkewNormalModel>(y, m, Some(p), gamma)?, central_jacobian::<SkewNormalModel>(y, m, gamma)?))
        }
        (MixtureParams::Experts(m), Some(MixtureParams::Experts(p))) => {
            let r = regression(data)?;
            Ok((score_jacobian::<ExpertsModel>(r, m, Some(p), gamma)?, central_jacobian::<ExpertsModel>(r, m, gamma)?))
        }
        _ => Err(WceError::InvalidParams("fit carries no previous iterate of the same family".into())),
    }
}
