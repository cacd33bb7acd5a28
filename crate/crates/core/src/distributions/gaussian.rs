use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::special::LN_2PI;
use super::spd::{vec_serde, SpdMatrix};
use super::ComponentDensity;
use crate::error::{Result, WceError};

/// Mean and covariance of a multivariate normal component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    #[serde(with = "vec_serde")]
    pub mu: DVector<f64>,
    pub sigma: SpdMatrix,
}

impl GaussianParams {
    pub fn new(mu: DVector<f64>, sigma: SpdMatrix) -> Result<Self> {
        if mu.len() != sigma.dim() {
            return Err(WceError::DimensionMismatch {
                expected: sigma.dim(),
                got: mu.len(),
            });
        }
        Ok(Self { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

fn check_dim(y: &DVector<f64>, p: usize) -> Result<()> {
    if y.len() != p {
        return Err(WceError::DimensionMismatch {
            expected: p,
            got: y.len(),
        });
    }
    Ok(())
}

/// `(y - mu)' Sigma^-1 (y - mu)`.
pub fn mahalanobis_sq(y: &DVector<f64>, g: &GaussianParams) -> Result<f64> {
    check_dim(y, g.dim())?;
    Ok(g.sigma.inv_quad_form(&(y - &g.mu)))
}

/// Log density of `N_p(mu, Sigma)` at `y`.
pub fn mvn_logpdf(y: &DVector<f64>, g: &GaussianParams) -> Result<f64> {
    let d2 = mahalanobis_sq(y, g)?;
    Ok(mvn_logpdf_from_parts(d2, g.sigma.log_det(), g.dim()))
}

#[inline]
pub(crate) fn mvn_logpdf_from_parts(maha_sq: f64, log_det: f64, p: usize) -> f64 {
    -0.5 * (p as f64 * LN_2PI + log_det + maha_sq)
}

impl ComponentDensity for GaussianParams {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn log_density(&self, y: &DVector<f64>) -> f64 {
        mvn_logpdf_from_parts(self.sigma.inv_quad_form(&(y - &self.mu)), self.sigma.log_det(), self.dim())
    }

    fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let p = self.dim();
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mu + self.sigma.lower_mul(&z)
    }
}
