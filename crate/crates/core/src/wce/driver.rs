use rayon::prelude::*;

use super::estep::{log_mixture_from_log, map_labels, responsibilities_from_log};
use super::model::MixtureModel;
use super::params::{FitConfig, FitResult};
use crate::error::{Result, WceError};
use crate::select::trimmed_bic_from_log_density;

/// Attempts per start before it is abandoned.
const ATTEMPTS_PER_START: usize = 3;

#[derive(Clone, Debug)]
pub(crate) struct RunOutcome<P> {
    pub params: P,
    pub previous: Option<P>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// Largest `|new - old| / (1 + |new|)` over all coordinates.
pub(crate) fn max_relative_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(a, b)| (b - a).abs() / (1.0 + b.abs()))
        .fold(0.0, |acc, v| if v.is_nan() { f64::INFINITY } else { acc.max(v) })
}

/// Iterates E- and EE-steps from `init` until the relative change drops below `tol`.
pub(crate) fn iterate<M: MixtureModel>(data: &M::Data, init: M::Params, cfg: &FitConfig) -> Result<RunOutcome<M::Params>> {
    let mut params = init;
    let mut previous = None;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut old_coords = M::coords(&params);
    for it in 1..=cfg.max_iter {
        let terms = M::log_terms(data, &params)?;
        let u = responsibilities_from_log(&terms.log_joint());
        let next = M::ee_step(data, &u, &terms, &params, cfg.gamma, cfg.eigen_ratio_c)?;
        let new_coords = M::coords(&next);
        let change = max_relative_change(&old_coords, &new_coords);
        trace.push(change);
        previous = Some(std::mem::replace(&mut params, next));
        old_coords = new_coords;
        iterations = it;
        if !change.is_finite() {
            return Err(WceError::Domain("parameter update produced non-finite values".into()));
        }
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(RunOutcome {
        params,
        previous,
        iterations,
        converged,
        trace,
    })
}

/// E-step, classification, outlier detection and trimmed BIC at the final iterate.
pub(crate) fn finalize<M: MixtureModel>(
    data: &M::Data,
    run: RunOutcome<M::Params>,
    cfg: &FitConfig,
    start_index: usize,
    failed_starts: usize,
) -> Result<FitResult> {
    let terms = M::log_terms(data, &run.params)?;
    let log_joint = terms.log_joint();
    let responsibilities = responsibilities_from_log(&log_joint);
    let labels = map_labels(&responsibilities);
    let outlier_scores = M::outlier_scores(data, &run.params, &labels, cfg.mc_draws, cfg.seed)?;
    let outlier_flags: Vec<bool> = outlier_scores.iter().map(|s| *s <= cfg.alpha).collect();
    let log_density = log_mixture_from_log(&log_joint);
    let trimmed_bic = trimmed_bic_from_log_density(&log_density, &outlier_flags, M::free_param_count(&run.params))?;
    Ok(FitResult {
        params: run.params.into(),
        previous_params: run.previous.map(Into::into),
        responsibilities,
        labels,
        outlier_scores,
        outlier_flags,
        trimmed_bic,
        iterations: run.iterations,
        converged: run.converged,
        objective_trace: run.trace,
        gamma: cfg.gamma,
        alpha: cfg.alpha,
        start_index,
        failed_starts,
    })
}

/// Single run from given starting values.
pub(crate) fn fit_from<M: MixtureModel>(data: &M::Data, init: M::Params, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    M::validate(data, &init)?;
    let run = iterate::<M>(data, init, cfg)?;
    finalize::<M>(data, run, cfg, 0, 0)
}

fn start_seed(base: u64, start: usize, attempt: usize, n_starts: usize) -> u64 {
    base.wrapping_add(start as u64).wrapping_add((attempt * n_starts) as u64)
}

struct StartOutcome {
    start: usize,
    failures: usize,
    result: std::result::Result<FitResult, String>,
}

fn run_start<M: MixtureModel>(data: &M::Data, k: usize, cfg: &FitConfig, start: usize) -> StartOutcome {
    let mut failures = 0;
    let mut last = String::new();
    for attempt in 0..ATTEMPTS_PER_START {
        let seed = start_seed(cfg.seed, start, attempt, cfg.n_starts);
        let outcome = M::initialize(data, k, cfg.eigen_ratio_c, seed)
            .and_then(|init| iterate::<M>(data, init, cfg))
            .and_then(|run| finalize::<M>(data, run, cfg, start, 0));
        match outcome {
            Ok(fit) => {
                return StartOutcome {
                    start,
                    failures,
                    result: Ok(fit),
                }
            }
            Err(e) => {
                log::debug!("start {start} attempt {attempt} failed: {e}");
                failures += 1;
                last = e.to_string();
            }
        }
    }
    StartOutcome {
        start,
        failures,
        result: Err(last),
    }
}

/// Multi-start fit; the converged run with the smallest trimmed BIC wins,
/// ties broken by the lowest start index.
pub(crate) fn fit_multistart<M: MixtureModel>(data: &M::Data, k: usize, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if k == 0 {
        return Err(WceError::InvalidConfig("number of components must be positive".into()));
    }
    let outcomes: Vec<StartOutcome> = (0..cfg.n_starts)
        .into_par_iter()
        .map(|s| run_start::<M>(data, k, cfg, s))
        .collect();
    let failed: usize = outcomes.iter().map(|o| o.failures).sum();
    let mut best: Option<FitResult> = None;
    let mut last_error = String::new();
    for prefer_converged in [true, false] {
        for o in &outcomes {
            match &o.result {
                Ok(fit) if fit.converged || !prefer_converged => {
                    let better = match &best {
                        None => true,
                        Some(b) => fit.trimmed_bic < b.trimmed_bic,
                    };
                    if better {
                        best = Some(fit.clone());
                    }
                }
                Ok(_) => {}
                Err(msg) => last_error = msg.clone(),
            }
        }
        if best.is_some() {
            break;
        }
    }
    match best {
        Some(mut fit) => {
            fit.failed_starts = failed;
            debug_assert!(outcomes.iter().any(|o| o.start == fit.start_index));
            Ok(fit)
        }
        None => Err(WceError::FitFailed {
            attempts: failed,
            last: last_error,
        }),
    }
}
