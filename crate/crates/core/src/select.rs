//! Outlier detection, trimmed BIC and selection over the number of
//! components and the robustness exponent.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::distributions::{rng_from_seed, rng_stream, sample_rows, ComponentDensity, GaussianParams, SkewNormalComponent, SpdMatrix};
use crate::error::{Result, WceError};
use crate::wce::{log_mixture_density, regression, run_eee, Dataset, Family, FitConfig, FitResult, MixtureParams};

/// Smallest Monte Carlo sample accepted for outlier scores.
pub const MIN_MC_DRAWS: usize = 1000;

/// Outlier scores and the resulting flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub scores: Vec<f64>,
    pub flags: Vec<bool>,
    pub alpha: f64,
    pub mc_draws: usize,
}

/// `P(χ²_p ≥ d2)`: probability that a Gaussian draw has density no larger
/// than a point at squared Mahalanobis distance `d2`.
pub fn gaussian_tail_probability(d2: f64, p: usize) -> f64 {
    if d2 <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(p as f64).expect("positive degrees of freedom").sf(d2)
}

/// Sorted log densities of draws from one component, shared by every
/// observation scored against that component.
#[derive(Clone, Debug)]
pub struct McReference {
    sorted_log_density: Vec<f64>,
}

impl McReference {
    pub fn new<C: ComponentDensity>(component: &C, draws: usize, seed: u64, stream: u64) -> Self {
        let mut rng = rng_stream(seed, stream);
        Self::from_rng(component, draws, &mut rng)
    }

    fn from_rng<C: ComponentDensity, R: rand::Rng + ?Sized>(component: &C, draws: usize, rng: &mut R) -> Self {
        let ys = sample_rows(component, draws, rng);
        let mut sorted_log_density: Vec<f64> = ys.row_iter().map(|r| component.log_density(&r.transpose())).collect();
        sorted_log_density.sort_by(|a, b| a.total_cmp(b));
        Self { sorted_log_density }
    }

    /// Fraction of reference draws whose log density is `<= log_density`.
    pub fn score(&self, log_density: f64) -> f64 {
        let count = self.sorted_log_density.partition_point(|v| *v <= log_density);
        count as f64 / self.sorted_log_density.len() as f64
    }
}

/// Monte Carlo outlier probability of `y` under `theta`: the fraction of
/// `draws` component samples whose density does not exceed `f(y)`.
pub fn outlier_score<C: ComponentDensity>(y: &DVector<f64>, theta: &C, draws: usize, seed: u64) -> Result<f64> {
    if draws < MIN_MC_DRAWS {
        return Err(WceError::InvalidConfig(format!("at least {MIN_MC_DRAWS} Monte Carlo draws are required")));
    }
    if y.len() != theta.dim() {
        return Err(WceError::DimensionMismatch { expected: theta.dim(), got: y.len() });
    }
    let mut rng = rng_from_seed(seed);
    Ok(McReference::from_rng(theta, draws, &mut rng).score(theta.log_density(y)))
}

/// Scores of point observations against Monte Carlo references of their
/// assigned components.
pub(crate) fn mc_scores_by_label<C: ComponentDensity + Sync>(
    components: &[C],
    log_f_assigned: &[f64],
    labels: &[usize],
    draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if draws < MIN_MC_DRAWS {
        return Err(WceError::InvalidConfig(format!("at least {MIN_MC_DRAWS} Monte Carlo draws are required")));
    }
    let mut used = vec![false; components.len()];
    for &l in labels {
        used[l] = true;
    }
    let refs: Vec<Option<McReference>> = components
        .par_iter()
        .enumerate()
        .map(|(k, c)| used[k].then(|| McReference::new(c, draws, seed, k as u64)))
        .collect();
    Ok(labels
        .iter()
        .zip(log_f_assigned)
        .map(|(l, lf)| refs[*l].as_ref().expect("reference built for used labels").score(*lf))
        .collect())
}

/// Scores every observation against its assigned component and flags those
/// with score `<= alpha`.
pub fn detect_outliers(fit: &FitResult, data: &Dataset, alpha: f64, draws: usize, seed: u64) -> Result<OutlierReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(WceError::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if fit.labels.len() != data.n() {
        return Err(WceError::DimensionMismatch { expected: fit.labels.len(), got: data.n() });
    }
    let scores = outlier_scores(&fit.params, data, &fit.labels, draws, seed)?;
    let flags = scores.iter().map(|s| *s <= alpha).collect();
    Ok(OutlierReport { scores, flags, alpha, mc_draws: draws })
}

/// Outlier scores for arbitrary parameters and labels.
pub fn outlier_scores(params: &MixtureParams, data: &Dataset, labels: &[usize], draws: usize, seed: u64) -> Result<Vec<f64>> {
    use crate::wce::MixtureModel;
    params.validate()?;
    let k = params.n_components();
    if let Some(bad) = labels.iter().find(|l| **l >= k) {
        return Err(WceError::InvalidParams(format!("label {bad} out of range for {k} components")));
    }
    match params {
        MixtureParams::Gaussian(m) => {
            crate::gmm::GaussianModel::outlier_scores(crate::wce::points(data, Family::Gaussian)?, m, labels, draws, seed)
        }
        MixtureParams::SkewNormal(m) => {
            crate::snm::SkewNormalModel::outlier_scores(crate::wce::points(data, Family::SkewNormal)?, m, labels, draws, seed)
        }
        MixtureParams::Experts(m) => crate::moe::ExpertsModel::outlier_scores(regression(data)?, m, labels, draws, seed),
    }
}

/// Number of free parameters `|Ψ|`.
pub fn param_count(params: &MixtureParams) -> usize {
    let k = params.n_components();
    match params {
        MixtureParams::Gaussian(m) => {
            let p = m.dim();
            (k - 1) + k * (p + p * (p + 1) / 2)
        }
        MixtureParams::SkewNormal(m) => {
            let p = m.dim();
            (k - 1) + k * (2 * p + p * (p + 1) / 2)
        }
        MixtureParams::Experts(m) => {
            let q = m.dim();
            (k - 1) * q + k * (q + 1)
        }
    }
}

/// `-(2n/|S|) Σ_{i∈S} log f_M(y_i) + |Ψ| log n` over the unflagged set `S`.
pub fn trimmed_bic_from_log_density(log_density: &[f64], flags: &[bool], n_params: usize) -> Result<f64> {
    if log_density.len() != flags.len() {
        return Err(WceError::DimensionMismatch { expected: log_density.len(), got: flags.len() });
    }
    let n = log_density.len() as f64;
    let (sum, count) = log_density
        .iter()
        .zip(flags)
        .filter(|(_, f)| !**f)
        .fold((0.0, 0usize), |(s, c), (l, _)| (s + l, c + 1));
    if count == 0 {
        return Err(WceError::EmptyInlierSet);
    }
    Ok(-2.0 * n / count as f64 * sum + n_params as f64 * n.ln())
}

/// Trimmed BIC of a fit with the given outlier flags.
pub fn trimmed_bic(fit: &FitResult, data: &Dataset, flags: &[bool]) -> Result<f64> {
    let log_density = log_mixture_density(data, &fit.params)?;
    trimmed_bic_from_log_density(&log_density, flags, param_count(&fit.params))
}

/// One cell of the selection grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionCell {
    pub k: usize,
    pub gamma: f64,
    pub trimmed_bic: Option<f64>,
    pub n_outliers: Option<usize>,
    pub error: Option<String>,
}

/// Best `K` for one value of `gamma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaChoice {
    pub gamma: f64,
    pub k: usize,
    pub trimmed_bic: f64,
}

#[derive(Clone, Debug)]
pub struct Selection {
    pub best_k: usize,
    pub best_gamma: f64,
    pub fit: FitResult,
    pub per_gamma: Vec<GammaChoice>,
    pub table: Vec<SelectionCell>,
}

/// Fits every `(K, gamma)` pair and picks the trimmed-BIC minimizer. Cells
/// whose fits fail are kept in the table and skipped by the argmin; ties go to
/// the earlier grid entry.
pub fn select_model(data: &Dataset, family: Family, k_grid: &[usize], gamma_grid: &[f64], config: &FitConfig) -> Result<Selection> {
    if k_grid.is_empty() || gamma_grid.is_empty() {
        return Err(WceError::InvalidConfig("selection grids must be nonempty".into()));
    }
    let mut table = Vec::new();
    let mut per_gamma = Vec::new();
    let mut best: Option<(f64, usize, f64, FitResult)> = None;
    for &gamma in gamma_grid {
        let cfg = FitConfig { gamma, ..config.clone() };
        let mut best_here: Option<(f64, usize)> = None;
        for &k in k_grid {
            match run_eee(family, data, k, &cfg) {
                Ok(fit) => {
                    let tb = fit.trimmed_bic;
                    table.push(SelectionCell {
                        k,
                        gamma,
                        trimmed_bic: Some(tb),
                        n_outliers: Some(fit.outlier_flags.iter().filter(|f| **f).count()),
                        error: None,
                    });
                    if best_here.is_none_or(|(b, _)| tb < b) {
                        best_here = Some((tb, k));
                    }
                    if best.as_ref().is_none_or(|(b, ..)| tb < *b) {
                        best = Some((tb, k, gamma, fit));
                    }
                }
                Err(e) => {
                    log::warn!("fit with K={k}, gamma={gamma} failed: {e}");
                    table.push(SelectionCell {
                        k,
                        gamma,
                        trimmed_bic: None,
                        n_outliers: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        if let Some((tb, k)) = best_here {
            per_gamma.push(GammaChoice { gamma, k, trimmed_bic: tb });
        }
    }
    match best {
        Some((_, best_k, best_gamma, fit)) => Ok(Selection {
            best_k,
            best_gamma,
            fit,
            per_gamma,
            table,
        }),
        None => Err(WceError::FitFailed {
            attempts: table.len(),
            last: table.last().and_then(|c| c.error.clone()).unwrap_or_default(),
        }),
    }
}

/// Scores of regression residuals against `N(0, σ_k²)` references.
pub(crate) fn residual_scores(residuals: &[f64], sigma2: &[f64], labels: &[usize], draws: usize, seed: u64) -> Result<Vec<f64>> {
    let comps: Vec<GaussianParams> = sigma2
        .iter()
        .map(|s| GaussianParams::new(DVector::zeros(1), SpdMatrix::from_rows(&[vec![*s]]).expect("positive variance")))
        .collect::<Result<_>>()?;
    let log_f: Vec<f64> = residuals
        .iter()
        .zip(labels)
        .map(|(r, l)| comps[*l].log_density(&DVector::from_element(1, *r)))
        .collect();
    mc_scores_by_label(&comps, &log_f, labels, draws, seed)
}

/// Scores for skew-normal components.
pub(crate) fn skew_normal_scores(components: &[SkewNormalComponent], log_f_assigned: &[f64], labels: &[usize], draws: usize, seed: u64) -> Result<Vec<f64>> {
    mc_scores_by_label(components, log_f_assigned, labels, draws, seed)
}
