use nalgebra::DMatrix;

use super::params::{Family, MixtureParams};
use crate::error::Result;

/// Log-domain building blocks of one E-step, both `n x K`.
#[derive(Clone, Debug)]
pub struct LogTerms {
    /// `log pi_k`, or `log g(x_i; eta_k)` for experts.
    pub log_mix: DMatrix<f64>,
    /// Unweighted component log densities `log f(y_i; theta_k)`.
    pub log_f: DMatrix<f64>,
}

impl LogTerms {
    pub fn log_joint(&self) -> DMatrix<f64> {
        &self.log_mix + &self.log_f
    }
}

/// Everything the generic estimating-equation driver needs from a family.
pub trait MixtureModel {
    type Params: Clone + Send + Sync + Into<MixtureParams>;
    type Data: Sync + ?Sized;

    const FAMILY: Family;

    fn n_obs(data: &Self::Data) -> usize;
    fn n_components(params: &Self::Params) -> usize;
    fn validate(data: &Self::Data, params: &Self::Params) -> Result<()>;

    fn log_terms(data: &Self::Data, params: &Self::Params) -> Result<LogTerms>;

    /// One estimating-equation sweep given responsibilities computed from `terms`.
    fn ee_step(
        data: &Self::Data,
        u: &DMatrix<f64>,
        terms: &LogTerms,
        params: &Self::Params,
        gamma: f64,
        eigen_ratio_c: Option<f64>,
    ) -> Result<Self::Params>;

    fn initialize(data: &Self::Data, k: usize, eigen_ratio_c: Option<f64>, seed: u64) -> Result<Self::Params>;

    /// Every scalar parameter, used for the convergence test.
    fn coords(params: &Self::Params) -> Vec<f64>;

    /// Free coordinates of the unconstrained chart (first `K-1` mixing
    /// probabilities, lower triangles of scale matrices).
    fn free_coords(params: &Self::Params) -> Vec<f64>;
    fn with_free_coords(params: &Self::Params, coords: &[f64]) -> Result<Self::Params>;
    fn coord_names(params: &Self::Params) -> Vec<String>;

    /// Per-observation estimating functions with latent quantities imputed, `n x d`.
    fn imputed_scores(data: &Self::Data, params: &Self::Params, gamma: f64) -> Result<DMatrix<f64>>;

    /// Outlier probability of each observation under its assigned component.
    fn outlier_scores(
        data: &Self::Data,
        params: &Self::Params,
        labels: &[usize],
        mc_draws: usize,
        seed: u64,
    ) -> Result<Vec<f64>>;

    fn free_param_count(params: &Self::Params) -> usize {
        Self::free_coords(params).len()
    }
}
