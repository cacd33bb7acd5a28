//! Family-agnostic estimating-equation machinery: responsibilities, density
//! weights, the mixing update and the multi-start driver.

mod driver;
mod estep;
pub mod init;
mod model;
mod params;

pub use estep::{density_weight, log_mixture_from_log, map_labels, responsibilities_from_log, update_mixing};
pub use init::InitStrategy;
pub use model::{LogTerms, MixtureModel};
pub use params::{
    Dataset, ExpertComponent, ExpertsMixture, Family, FitConfig, FitResult, GaussianMixture, MixtureParams,
    RegressionData, SkewNormalMixture, DEFAULT_SEED,
};

pub(crate) use driver::{fit_from as fit_from_generic, fit_multistart};
pub(crate) use estep::weights_from_log;

use nalgebra::DMatrix;

use crate::error::{Result, WceError};
use crate::gmm::GaussianModel;
use crate::moe::ExpertsModel;
use crate::snm::SkewNormalModel;

pub(crate) fn points(data: &Dataset, family: Family) -> Result<&DMatrix<f64>> {
    match data {
        Dataset::Points(m) => Ok(m),
        Dataset::Regression(_) => Err(WceError::InvalidConfig(format!("{family} mixtures need point data, got regression data"))),
    }
}

pub(crate) fn regression(data: &Dataset) -> Result<&RegressionData> {
    match data {
        Dataset::Regression(r) => Ok(r),
        Dataset::Points(_) => Err(WceError::InvalidConfig("mixtures of experts need regression data".into())),
    }
}

/// Model-specific log terms for any parameter family.
pub fn log_terms(data: &Dataset, params: &MixtureParams) -> Result<LogTerms> {
    params.validate()?;
    match params {
        MixtureParams::Gaussian(m) => {
            let y = points(data, Family::Gaussian)?;
            GaussianModel::validate(y, m)?;
            GaussianModel::log_terms(y, m)
        }
        MixtureParams::SkewNormal(m) => {
            let y = points(data, Family::SkewNormal)?;
            SkewNormalModel::validate(y, m)?;
            SkewNormalModel::log_terms(y, m)
        }
        MixtureParams::Experts(m) => {
            let r = regression(data)?;
            ExpertsModel::validate(r, m)?;
            ExpertsModel::log_terms(r, m)
        }
    }
}

/// Posterior membership probabilities `u_ik`, rows summing to one.
pub fn responsibilities(data: &Dataset, params: &MixtureParams) -> Result<DMatrix<f64>> {
    Ok(responsibilities_from_log(&log_terms(data, params)?.log_joint()))
}

/// Log mixture density `log f_M(y_i)` of every observation.
pub fn log_mixture_density(data: &Dataset, params: &MixtureParams) -> Result<Vec<f64>> {
    Ok(log_mixture_from_log(&log_terms(data, params)?.log_joint()))
}

/// Starting values for `k` components, deterministic given `seed`.
///
/// Gaussian starts are eigen-ratio constrained with the default bound.
pub fn initialize(family: Family, data: &Dataset, k: usize, strategy: InitStrategy, seed: u64) -> Result<MixtureParams> {
    initialize_with(family, data, k, strategy, FitConfig::default().eigen_ratio_c, seed)
}

pub(crate) fn initialize_with(
    family: Family,
    data: &Dataset,
    k: usize,
    strategy: InitStrategy,
    eigen_ratio_c: Option<f64>,
    seed: u64,
) -> Result<MixtureParams> {
    if k == 0 {
        return Err(WceError::Initialization("number of components must be positive".into()));
    }
    match family {
        Family::Gaussian => {
            let y = points(data, family)?;
            let part = init::partition(y, k, strategy, seed)?;
            Ok(crate::gmm::init_from_partition(y, &part, eigen_ratio_c)?.into())
        }
        Family::SkewNormal => {
            let y = points(data, family)?;
            let part = init::partition(y, k, strategy, seed)?;
            Ok(crate::snm::init_from_partition(y, &part)?.into())
        }
        Family::Experts => {
            let r = regression(data)?;
            if matches!(strategy, InitStrategy::TrimmedKMeans { .. }) {
                return Err(WceError::InvalidConfig("experts are initialized by random splits".into()));
            }
            Ok(ExpertsModel::initialize(r, k, eigen_ratio_c, seed)?.into())
        }
    }
}

/// Multi-start robust fit of a `k`-component mixture.
pub fn run_eee(family: Family, data: &Dataset, k: usize, config: &FitConfig) -> Result<FitResult> {
    match family {
        Family::Gaussian => fit_multistart::<GaussianModel>(points(data, family)?, k, config),
        Family::SkewNormal => fit_multistart::<SkewNormalModel>(points(data, family)?, k, config),
        Family::Experts => fit_multistart::<ExpertsModel>(regression(data)?, k, config),
    }
}

/// Single fit started from the given parameters.
pub fn fit_from(data: &Dataset, init: MixtureParams, config: &FitConfig) -> Result<FitResult> {
    init.validate()?;
    match init {
        MixtureParams::Gaussian(m) => fit_from_generic::<GaussianModel>(points(data, Family::Gaussian)?, m, config),
        MixtureParams::SkewNormal(m) => fit_from_generic::<SkewNormalModel>(points(data, Family::SkewNormal)?, m, config),
        MixtureParams::Experts(m) => fit_from_generic::<ExpertsModel>(regression(data)?, m, config),
    }
}
