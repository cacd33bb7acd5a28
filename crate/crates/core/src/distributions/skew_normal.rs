use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gaussian::mvn_logpdf_from_parts;
use super::spd::{vec_serde, SpdMatrix};
use super::special::{log_norm_cdf, norm_quantile};
use super::ComponentDensity;
use crate::error::{Result, WceError};

/// Skew-normal component in the stochastic representation
/// `y = mu + psi * v + e`, `v ~ N+(0, 1)`, `e ~ N(0, Sigma)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewNormalParams {
    #[serde(with = "vec_serde")]
    pub mu: DVector<f64>,
    #[serde(with = "vec_serde")]
    pub psi: DVector<f64>,
    pub sigma: SpdMatrix,
}

/// Direct parameterization `(Omega, alpha, omega)` of a skew-normal law.
#[derive(Clone, Debug)]
pub struct SkewNormalDp {
    pub omega_mat: SpdMatrix,
    pub alpha: DVector<f64>,
    pub omega_diag: DVector<f64>,
}

impl SkewNormalParams {
    pub fn new(mu: DVector<f64>, psi: DVector<f64>, sigma: SpdMatrix) -> Result<Self> {
        let p = sigma.dim();
        for len in [mu.len(), psi.len()] {
            if len != p {
                return Err(WceError::DimensionMismatch {
                    expected: p,
                    got: len,
                });
            }
        }
        Ok(Self { mu, psi, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// `Omega = Sigma + psi psi'`, `omega = sqrt(diag Omega)`,
/// `alpha = omega Omega^-1 psi / sqrt(1 - psi' Omega^-1 psi)`.
pub fn sn_dp_transform(s: &SkewNormalParams) -> Result<SkewNormalDp> {
    let omega_mat = SpdMatrix::new(s.sigma.matrix() + &s.psi * s.psi.transpose())?;
    let omega_inv_psi = omega_mat.solve(&s.psi);
    let slack = 1.0 - s.psi.dot(&omega_inv_psi);
    if !(slack > 0.0) {
        return Err(WceError::Parameterization(slack));
    }
    let omega_diag = omega_mat.matrix().diagonal().map(f64::sqrt);
    let alpha = omega_inv_psi.component_mul(&omega_diag) / slack.sqrt();
    Ok(SkewNormalDp {
        omega_mat,
        alpha,
        omega_diag,
    })
}

/// Log density `log 2 + log phi_p(y; mu, Omega) + log Phi(alpha' omega^-1 (y - mu))`.
pub fn skew_normal_logpdf(y: &DVector<f64>, s: &SkewNormalParams) -> Result<f64> {
    if y.len() != s.dim() {
        return Err(WceError::DimensionMismatch {
            expected: s.dim(),
            got: y.len(),
        });
    }
    let dp = sn_dp_transform(s)?;
    Ok(dp.logpdf(y, &s.mu))
}

impl SkewNormalDp {
    pub(crate) fn logpdf(&self, y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        let d = y - mu;
        let p = d.len();
        let maha = self.omega_mat.inv_quad_form(&d);
        let arg: f64 = (0..p).map(|j| self.alpha[j] * d[j] / self.omega_diag[j]).sum();
        std::f64::consts::LN_2 + mvn_logpdf_from_parts(maha, self.omega_mat.log_det(), p) + log_norm_cdf(arg)
    }
}

/// Positive half-normal draw by inverse CDF with the uniform clamped away from 0 and 1.
pub(crate) fn sample_half_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>().clamp(1e-16, 1.0 - 1e-16);
    norm_quantile(0.5 * (1.0 + u))
}

/// A skew-normal component with its direct parameterization cached.
#[derive(Clone, Debug)]
pub struct SkewNormalComponent {
    pub params: SkewNormalParams,
    pub dp: SkewNormalDp,
}

impl SkewNormalComponent {
    pub fn new(params: SkewNormalParams) -> Result<Self> {
        let dp = sn_dp_transform(&params)?;
        Ok(Self { params, dp })
    }
}

impl ComponentDensity for SkewNormalComponent {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn log_density(&self, y: &DVector<f64>) -> f64 {
        self.dp.logpdf(y, &self.params.mu)
    }

    fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let p = self.dim();
        let v = sample_half_normal(rng);
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.params.mu + &self.params.psi * v + self.params.sigma.lower_mul(&z)
    }
}
