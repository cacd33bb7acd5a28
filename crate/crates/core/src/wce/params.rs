use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distributions::{vec_serde, GaussianParams, SkewNormalParams};
use crate::error::{Result, WceError};

const PI_SUM_TOL: f64 = 1e-12;

/// Component family of a mixture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Experts,
    SkewNormal,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Experts => "experts",
            Family::SkewNormal => "skew_normal",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = WceError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gaussian" | "gmm" | "normal" => Ok(Family::Gaussian),
            "experts" | "moe" | "mixture_of_experts" => Ok(Family::Experts),
            "skew_normal" | "snm" | "skewnormal" => Ok(Family::SkewNormal),
            other => Err(WceError::InvalidConfig(format!("unknown model family '{other}'"))),
        }
    }
}

/// Gaussian regression expert with softmax gating vector.
///
/// The last component of a mixture carries an empty `eta`; its gating
/// probability is fixed by the others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertComponent {
    #[serde(with = "vec_serde")]
    pub beta: DVector<f64>,
    pub sigma2: f64,
    #[serde(with = "vec_serde")]
    pub eta: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub pi: Vec<f64>,
    pub components: Vec<GaussianParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertsMixture {
    pub components: Vec<ExpertComponent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewNormalMixture {
    pub pi: Vec<f64>,
    pub components: Vec<SkewNormalParams>,
}

/// Full parameter collection of one mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MixtureParams {
    Gaussian(GaussianMixture),
    Experts(ExpertsMixture),
    SkewNormal(SkewNormalMixture),
}

fn validate_pi(pi: &[f64], k: usize) -> Result<()> {
    if pi.len() != k {
        return Err(WceError::DimensionMismatch {
            expected: k,
            got: pi.len(),
        });
    }
    if pi.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(WceError::InvalidParams("mixing probabilities must be non-negative".into()));
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > PI_SUM_TOL * 10.0 {
        return Err(WceError::InvalidParams(format!("mixing probabilities sum to {total}")));
    }
    Ok(())
}

impl GaussianMixture {
    pub fn new(pi: Vec<f64>, components: Vec<GaussianParams>) -> Result<Self> {
        let m = Self { pi, components };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(WceError::InvalidParams("a mixture needs at least one component".into()));
        }
        validate_pi(&self.pi, self.components.len())?;
        let p = self.components[0].dim();
        for c in &self.components {
            if c.dim() != p {
                return Err(WceError::DimensionMismatch { expected: p, got: c.dim() });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }
}

impl SkewNormalMixture {
    pub fn new(pi: Vec<f64>, components: Vec<SkewNormalParams>) -> Result<Self> {
        let m = Self { pi, components };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(WceError::InvalidParams("a mixture needs at least one component".into()));
        }
        validate_pi(&self.pi, self.components.len())?;
        let p = self.components[0].dim();
        for c in &self.components {
            if c.dim() != p {
                return Err(WceError::DimensionMismatch { expected: p, got: c.dim() });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }
}

impl ExpertsMixture {
    pub fn new(components: Vec<ExpertComponent>) -> Result<Self> {
        let m = Self { components };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.components.len();
        if k == 0 {
            return Err(WceError::InvalidParams("a mixture needs at least one component".into()));
        }
        let q = self.components[0].beta.len();
        for (idx, c) in self.components.iter().enumerate() {
            if c.beta.len() != q {
                return Err(WceError::DimensionMismatch { expected: q, got: c.beta.len() });
            }
            if !(c.sigma2 > 0.0) || !c.sigma2.is_finite() {
                return Err(WceError::InvalidParams(format!("sigma2 of expert {idx} must be positive")));
            }
            let expected = if idx + 1 == k { 0 } else { q };
            if c.eta.len() != expected {
                return Err(WceError::InvalidParams(format!(
                    "gating vector of expert {idx} has length {}, expected {expected}",
                    c.eta.len()
                )));
            }
        }
        Ok(())
    }

    /// Covariate dimension, intercept included.
    pub fn dim(&self) -> usize {
        self.components[0].beta.len()
    }

    /// Gating vectors with the reference component's implied zero vector.
    pub fn etas(&self) -> Vec<DVector<f64>> {
        let q = self.dim();
        self.components
            .iter()
            .map(|c| if c.eta.is_empty() { DVector::zeros(q) } else { c.eta.clone() })
            .collect()
    }
}

impl MixtureParams {
    pub fn family(&self) -> Family {
        match self {
            MixtureParams::Gaussian(_) => Family::Gaussian,
            MixtureParams::Experts(_) => Family::Experts,
            MixtureParams::SkewNormal(_) => Family::SkewNormal,
        }
    }

    pub fn n_components(&self) -> usize {
        match self {
            MixtureParams::Gaussian(m) => m.components.len(),
            MixtureParams::Experts(m) => m.components.len(),
            MixtureParams::SkewNormal(m) => m.components.len(),
        }
    }

    /// Mixing probabilities; `None` for experts, whose gating depends on covariates.
    pub fn pi(&self) -> Option<&[f64]> {
        match self {
            MixtureParams::Gaussian(m) => Some(&m.pi),
            MixtureParams::SkewNormal(m) => Some(&m.pi),
            MixtureParams::Experts(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MixtureParams::Gaussian(m) => m.validate(),
            MixtureParams::Experts(m) => m.validate(),
            MixtureParams::SkewNormal(m) => m.validate(),
        }
    }
}

impl From<GaussianMixture> for MixtureParams {
    fn from(m: GaussianMixture) -> Self {
        MixtureParams::Gaussian(m)
    }
}

impl From<ExpertsMixture> for MixtureParams {
    fn from(m: ExpertsMixture) -> Self {
        MixtureParams::Experts(m)
    }
}

impl From<SkewNormalMixture> for MixtureParams {
    fn from(m: SkewNormalMixture) -> Self {
        MixtureParams::SkewNormal(m)
    }
}

/// Covariates (first column all ones) and scalar responses.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl RegressionData {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(WceError::DimensionMismatch { expected: x.nrows(), got: y.len() });
        }
        if x.ncols() == 0 {
            return Err(WceError::InvalidParams("design needs at least the intercept column".into()));
        }
        if x.column(0).iter().any(|v| *v != 1.0) {
            return Err(WceError::InvalidParams("first design column must be the intercept".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(WceError::InvalidParams("design and response must be finite".into()));
        }
        let gram = x.transpose() * &x;
        if nalgebra::Cholesky::new(gram).is_none() {
            return Err(WceError::InvalidParams("design does not have full column rank".into()));
        }
        Ok(Self { x, y })
    }

    /// Builds a design from raw covariates by prepending the intercept.
    pub fn with_intercept(covariates: &DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let n = covariates.nrows();
        let x = DMatrix::from_fn(n, covariates.ncols() + 1, |i, j| if j == 0 { 1.0 } else { covariates[(i, j - 1)] });
        Self::new(x, y)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }
}

/// Observations handed to a fit.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    /// `n x p` matrix, one observation per row.
    Points(DMatrix<f64>),
    Regression(RegressionData),
}

impl Dataset {
    pub fn n(&self) -> usize {
        match self {
            Dataset::Points(m) => m.nrows(),
            Dataset::Regression(r) => r.n(),
        }
    }
}

/// Tuning of one robust fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Density-power exponent; 0 gives maximum likelihood.
    pub gamma: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub n_starts: usize,
    /// Bound on the pooled covariance eigenvalue ratio, `None` to disable.
    pub eigen_ratio_c: Option<f64>,
    pub seed: u64,
    /// Outlier threshold used for the trimmed BIC that ranks starts.
    pub alpha: f64,
    /// Monte Carlo draws for non-Gaussian outlier scores.
    pub mc_draws: usize,
}

pub const DEFAULT_SEED: u64 = 20_230_101;

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            gamma: 0.2,
            max_iter: 1000,
            tol: 1e-6,
            n_starts: 10,
            eigen_ratio_c: Some(10.0),
            seed: DEFAULT_SEED,
            alpha: 0.01,
            mc_draws: 10_000,
        }
    }
}

impl FitConfig {
    pub fn with_gamma(gamma: f64) -> Self {
        Self { gamma, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(WceError::InvalidConfig(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.tol > 0.0) {
            return Err(WceError::InvalidConfig("tol must be positive".into()));
        }
        if self.max_iter == 0 || self.n_starts == 0 {
            return Err(WceError::InvalidConfig("max_iter and n_starts must be positive".into()));
        }
        if let Some(c) = self.eigen_ratio_c {
            if !(c >= 1.0) {
                return Err(WceError::InvalidConfig(format!("eigen-ratio bound must be >= 1, got {c}")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(WceError::InvalidConfig(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.mc_draws < 1000 {
            return Err(WceError::InvalidConfig("at least 1000 Monte Carlo draws are required".into()));
        }
        Ok(())
    }
}

/// Outcome of a robust fit.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: MixtureParams,
    /// Iterate preceding `params`; used for iterate-difference derivatives.
    pub previous_params: Option<MixtureParams>,
    pub responsibilities: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub outlier_scores: Vec<f64>,
    pub outlier_flags: Vec<bool>,
    pub trimmed_bic: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Maximum relative parameter change per iteration.
    pub objective_trace: Vec<f64>,
    pub gamma: f64,
    pub alpha: f64,
    /// Index of the winning start.
    pub start_index: usize,
    /// Starts abandoned because of component collapse.
    pub failed_starts: usize,
}
