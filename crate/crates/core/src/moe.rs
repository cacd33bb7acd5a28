//! Mixtures of Gaussian regression experts with softmax gating.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::distributions::special::LN_2PI;
use crate::error::{CollapseKind, Result, WceError};
use crate::wce::init::{huber_regression, random_split};
use crate::wce::{
    responsibilities_from_log, weights_from_log, ExpertComponent, ExpertsMixture, Family, LogTerms, MixtureModel, RegressionData,
};

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_MAX_HALVINGS: usize = 20;
const NEWTON_TOL: f64 = 1e-8;
const NEWTON_ACCEPT_TOL: f64 = 1e-6;
const MIN_VARIANCE: f64 = 1e-10;
const MIN_SHARE: f64 = 1e-6;

/// Log of the softmax gating probabilities for covariate row `x`.
fn log_gating(x: &[f64], etas: &[DVector<f64>]) -> Vec<f64> {
    let scores: Vec<f64> = etas
        .iter()
        .map(|e| if e.is_empty() { 0.0 } else { e.iter().zip(x).map(|(a, b)| a * b).sum() })
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.into_iter().map(|s| s - lse).collect()
}

/// Softmax gating probabilities; an empty gating vector counts as zero.
pub fn gating_probs(x_row: &DVector<f64>, etas: &[DVector<f64>]) -> Vec<f64> {
    log_gating(x_row.as_slice(), etas).into_iter().map(f64::exp).collect()
}

/// `(B, C₂)` of a Gaussian regression expert with variance `sigma2`; neither
/// depends on the covariates.
pub fn moe_bias_terms(sigma2: f64, gamma: f64) -> (f64, f64) {
    if gamma == 0.0 {
        return (1.0, 0.0);
    }
    let b = (-0.5 * gamma * (LN_2PI + sigma2.ln()) - 0.5 * (1.0 + gamma).ln()).exp();
    let c2 = -0.5 * gamma * b / ((1.0 + gamma) * sigma2);
    (b, c2)
}

/// `γ (1+γ)^{-3/2} (2πσ²)^{-γ/2}`, the correction in the variance denominator.
fn variance_correction(sigma2: f64, gamma: f64) -> f64 {
    let (b, _) = moe_bias_terms(sigma2, gamma);
    gamma * b / (1.0 + gamma)
}

fn expert_log_density(r: f64, sigma2: f64) -> f64 {
    -0.5 * (LN_2PI + sigma2.ln() + r * r / sigma2)
}

/// `n x K` component log densities `log φ(y_i; x_iᵀβ_k, σ_k²)`.
pub fn expert_log_densities(data: &RegressionData, params: &ExpertsMixture) -> DMatrix<f64> {
    let n = data.n();
    let k = params.components.len();
    let mut out = DMatrix::zeros(n, k);
    for (j, c) in params.components.iter().enumerate() {
        let fitted = &data.x * &c.beta;
        for i in 0..n {
            out[(i, j)] = expert_log_density(data.y[i] - fitted[i], c.sigma2);
        }
    }
    out
}

/// `n x K` gating log probabilities.
pub fn gating_log_matrix(data: &RegressionData, etas: &[DVector<f64>]) -> DMatrix<f64> {
    let n = data.n();
    let k = etas.len();
    let mut out = DMatrix::zeros(n, k);
    let mut row = vec![0.0; data.q()];
    for i in 0..n {
        for (a, v) in row.iter_mut().enumerate() {
            *v = data.x[(i, a)];
        }
        for (j, l) in log_gating(&row, etas).into_iter().enumerate() {
            out[(i, j)] = l;
        }
    }
    out
}

/// Weighted least-squares coefficient and variance updates with weights
/// `u_ik w_ik`; gating vectors are carried over unchanged.
pub(crate) fn moe_regression_update(
    data: &RegressionData,
    u: &DMatrix<f64>,
    w: &DMatrix<f64>,
    params: &ExpertsMixture,
    gamma: f64,
) -> Result<ExpertsMixture> {
    let (n, q) = (data.n(), data.q());
    let mut components = Vec::with_capacity(params.components.len());
    for (k, comp) in params.components.iter().enumerate() {
        let su: f64 = u.column(k).sum();
        if su < MIN_SHARE * n as f64 {
            return Err(WceError::Collapse(CollapseKind::VanishingWeight { component: k }));
        }
        let uw = DVector::from_fn(n, |i, _| u[(i, k)] * w[(i, k)]);
        let suw = uw.sum();
        let xw = DMatrix::from_fn(q, n, |a, i| data.x[(i, a)] * uw[i]);
        let gram = &xw * &data.x;
        let rhs = &xw * &data.y;
        let beta = Cholesky::new(gram)
            .ok_or(WceError::Collapse(CollapseKind::SingularDesign { component: k }))?
            .solve(&rhs);
        let resid = &data.y - &data.x * &beta;
        let num: f64 = (0..n).map(|i| uw[i] * resid[i] * resid[i]).sum();
        let denom = suw - variance_correction(comp.sigma2, gamma) * su;
        if !(denom > 0.0) {
            return Err(WceError::Collapse(CollapseKind::NonPositiveDenominator { component: k }));
        }
        let sigma2 = num / denom;
        if !(sigma2 >= MIN_VARIANCE) {
            return Err(WceError::Collapse(CollapseKind::DegenerateScale { component: k }));
        }
        components.push(ExpertComponent {
            beta,
            sigma2,
            eta: comp.eta.clone(),
        });
    }
    Ok(ExpertsMixture { components })
}

/// Coefficient and variance updates of every expert.
pub fn moe_ee_update(data: &RegressionData, u: &DMatrix<f64>, params: &ExpertsMixture, gamma: f64) -> Result<ExpertsMixture> {
    ExpertsModel::validate(data, params)?;
    let w = weights_from_log(&expert_log_densities(data, params), gamma);
    moe_regression_update(data, u, &w, params, gamma)
}

fn gating_objective(a: &DMatrix<f64>, log_g: &DMatrix<f64>) -> f64 {
    a.iter().zip(log_g.iter()).map(|(w, l)| if *w == 0.0 { 0.0 } else { w * l }).sum()
}

fn full_etas(flat: &DVector<f64>, k: usize, q: usize) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = (0..k - 1).map(|j| flat.rows(j * q, q).into_owned()).collect();
    out.push(DVector::zeros(0));
    out
}

/// Gradient of the weighted multinomial log likelihood in the free gating
/// coordinates, plus the negative Hessian.
fn gating_derivatives(data: &RegressionData, a: &DMatrix<f64>, log_g: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, q) = (data.n(), data.q());
    let k = a.ncols();
    let d = (k - 1) * q;
    let mut grad = DVector::zeros(d);
    let mut neg_hess = DMatrix::zeros(d, d);
    for i in 0..n {
        let total: f64 = a.row(i).sum();
        let g: Vec<f64> = (0..k).map(|j| log_g[(i, j)].exp()).collect();
        let x = data.x.row(i);
        for j in 0..k - 1 {
            let coef = a[(i, j)] - total * g[j];
            for s in 0..q {
                grad[j * q + s] += coef * x[s];
            }
            for l in 0..k - 1 {
                let h = total * g[j] * (if j == l { 1.0 } else { 0.0 } - g[l]);
                if h == 0.0 {
                    continue;
                }
                for s in 0..q {
                    for t in 0..q {
                        neg_hess[(j * q + s, l * q + t)] += h * x[s] * x[t];
                    }
                }
            }
        }
    }
    (grad, neg_hess)
}

/// Maximizes `Σ_i Σ_k a_ik log g(x_i; η_k)` with `a_ik = u_ik w_ik / b_k` by
/// Newton steps with step halving, warm-started at `etas_init`.
pub fn moe_gating_update(
    data: &RegressionData,
    u: &DMatrix<f64>,
    w: &DMatrix<f64>,
    b_terms: &[f64],
    etas_init: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let k = etas_init.len();
    if u.shape() != (data.n(), k) || w.shape() != u.shape() || b_terms.len() != k {
        return Err(WceError::DimensionMismatch { expected: k, got: u.ncols() });
    }
    let a = DMatrix::from_fn(data.n(), k, |i, j| u[(i, j)] * w[(i, j)] / b_terms[j]);
    if a.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(WceError::Domain("gating weights must be finite and non-negative".into()));
    }
    maximize_gating(data, &a, etas_init)
}

pub(crate) fn maximize_gating(data: &RegressionData, a: &DMatrix<f64>, etas_init: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let (n, q) = (data.n(), data.q());
    let k = etas_init.len();
    if k == 1 {
        return Ok(vec![DVector::zeros(0)]);
    }
    let mut flat = DVector::zeros((k - 1) * q);
    for j in 0..k - 1 {
        if etas_init[j].len() != q {
            return Err(WceError::DimensionMismatch { expected: q, got: etas_init[j].len() });
        }
        flat.rows_mut(j * q, q).copy_from(&etas_init[j]);
    }
    let scale = n as f64;
    let mut log_g = gating_log_matrix(data, &full_etas(&flat, k, q));
    let mut obj = gating_objective(a, &log_g);
    for _ in 0..NEWTON_MAX_ITER {
        let (grad, mut neg_hess) = gating_derivatives(data, a, &log_g);
        let gnorm = grad.amax();
        if gnorm < NEWTON_TOL * scale {
            return Ok(full_etas(&flat, k, q));
        }
        let chol = match Cholesky::new(neg_hess.clone()) {
            Some(c) => c,
            None => {
                let ridge = 1e-8 * (1.0 + neg_hess.diagonal().amax());
                for d in 0..neg_hess.nrows() {
                    neg_hess[(d, d)] += ridge;
                }
                Cholesky::new(neg_hess).ok_or(WceError::NewtonNonConvergence(0))?
            }
        };
        let step = chol.solve(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=NEWTON_MAX_HALVINGS {
            let cand = &flat + &step * t;
            let cand_log_g = gating_log_matrix(data, &full_etas(&cand, k, q));
            let cand_obj = gating_objective(a, &cand_log_g);
            if cand_obj.is_finite() && cand_obj >= obj {
                flat = cand;
                log_g = cand_log_g;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if gnorm < NEWTON_ACCEPT_TOL * scale {
                return Ok(full_etas(&flat, k, q));
            }
            return Err(WceError::NewtonNonConvergence(NEWTON_MAX_ITER));
        }
    }
    let (grad, _) = gating_derivatives(data, a, &log_g);
    if grad.amax() < NEWTON_ACCEPT_TOL * scale {
        Ok(full_etas(&flat, k, q))
    } else {
        Err(WceError::NewtonNonConvergence(NEWTON_MAX_ITER))
    }
}

/// Gating weights `u_ik w_ik / B_k` with `w` and `B` evaluated at `params`.
fn gating_targets(data: &RegressionData, u: &DMatrix<f64>, params: &ExpertsMixture, gamma: f64) -> DMatrix<f64> {
    let log_f = expert_log_densities(data, params);
    let w = weights_from_log(&log_f, gamma);
    let b: Vec<f64> = params.components.iter().map(|c| moe_bias_terms(c.sigma2, gamma).0).collect();
    DMatrix::from_fn(data.n(), b.len(), |i, j| u[(i, j)] * w[(i, j)] / b[j])
}

/// Mixture-of-experts family marker.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExpertsModel;

impl MixtureModel for ExpertsModel {
    type Params = ExpertsMixture;
    type Data = RegressionData;

    const FAMILY: Family = Family::Experts;

    fn n_obs(data: &Self::Data) -> usize {
        data.n()
    }

    fn n_components(params: &Self::Params) -> usize {
        params.components.len()
    }

    fn validate(data: &Self::Data, params: &Self::Params) -> Result<()> {
        params.validate()?;
        if params.dim() != data.q() {
            return Err(WceError::DimensionMismatch { expected: data.q(), got: params.dim() });
        }
        Ok(())
    }

    fn log_terms(data: &Self::Data, params: &Self::Params) -> Result<LogTerms> {
        let etas: Vec<DVector<f64>> = params.components.iter().map(|c| c.eta.clone()).collect();
        Ok(LogTerms {
            log_mix: gating_log_matrix(data, &etas),
            log_f: expert_log_densities(data, params),
        })
    }

    fn ee_step(
        data: &Self::Data,
        u: &DMatrix<f64>,
        terms: &LogTerms,
        params: &Self::Params,
        gamma: f64,
        _eigen_ratio_c: Option<f64>,
    ) -> Result<Self::Params> {
        let w = weights_from_log(&terms.log_f, gamma);
        let mut next = moe_regression_update(data, u, &w, params, gamma)?;
        let a = gating_targets(data, u, &next, gamma);
        let etas_init = params.etas();
        let etas = maximize_gating(data, &a, &etas_init).map_err(|e| match e {
            WceError::NewtonNonConvergence(_) => WceError::Collapse(CollapseKind::GatingNonConvergence),
            other => other,
        })?;
        for (c, eta) in next.components.iter_mut().zip(etas) {
            c.eta = eta;
        }
        Ok(next)
    }

    fn initialize(data: &Self::Data, k: usize, _eigen_ratio_c: Option<f64>, seed: u64) -> Result<Self::Params> {
        let (n, q) = (data.n(), data.q());
        if k == 0 {
            return Err(WceError::Initialization("number of components must be positive".into()));
        }
        if n <= k * q {
            return Err(WceError::Initialization(format!("need more than K*q = {} observations, got {n}", k * q)));
        }
        let part = random_split(n, k, seed);
        let mut components = Vec::with_capacity(k);
        for j in 0..k {
            let rows = part.members(j);
            let x = data.x.select_rows(&rows);
            let y = DVector::from_iterator(rows.len(), rows.iter().map(|i| data.y[*i]));
            let (beta, sigma2) = huber_regression(&x, &y)?;
            if !(sigma2 > MIN_VARIANCE) {
                return Err(WceError::Initialization(format!("group {j} has zero residual scale")));
            }
            let eta = if j + 1 == k { DVector::zeros(0) } else { DVector::zeros(q) };
            components.push(ExpertComponent { beta, sigma2, eta });
        }
        ExpertsMixture::new(components)
    }

    fn coords(params: &Self::Params) -> Vec<f64> {
        Self::free_coords(params)
    }

    fn free_coords(params: &Self::Params) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &params.components {
            out.extend(c.eta.iter());
        }
        for c in &params.components {
            out.extend(c.beta.iter());
            out.push(c.sigma2);
        }
        out
    }

    fn with_free_coords(params: &Self::Params, coords: &[f64]) -> Result<Self::Params> {
        let k = params.components.len();
        let q = params.dim();
        let expected = (k - 1) * q + k * (q + 1);
        if coords.len() != expected {
            return Err(WceError::DimensionMismatch { expected, got: coords.len() });
        }
        let mut pos = 0;
        let mut etas = Vec::with_capacity(k);
        for j in 0..k {
            if j + 1 == k {
                etas.push(DVector::zeros(0));
            } else {
                etas.push(DVector::from_column_slice(&coords[pos..pos + q]));
                pos += q;
            }
        }
        let mut components = Vec::with_capacity(k);
        for eta in etas {
            let beta = DVector::from_column_slice(&coords[pos..pos + q]);
            let sigma2 = coords[pos + q];
            pos += q + 1;
            if !(sigma2 > 0.0) {
                return Err(WceError::InvalidParams("expert variance must be positive".into()));
            }
            components.push(ExpertComponent { beta, sigma2, eta });
        }
        Ok(ExpertsMixture { components })
    }

    fn coord_names(params: &Self::Params) -> Vec<String> {
        let k = params.components.len();
        let q = params.dim();
        let mut out = Vec::new();
        for j in 0..k - 1 {
            out.extend((0..q).map(|a| format!("eta[{j}][{a}]")));
        }
        for j in 0..k {
            out.extend((0..q).map(|a| format!("beta[{j}][{a}]")));
            out.push(format!("sigma2[{j}]"));
        }
        out
    }

    fn imputed_scores(data: &Self::Data, params: &Self::Params, gamma: f64) -> Result<DMatrix<f64>> {
        let (n, q) = (data.n(), data.q());
        let k_total = params.components.len();
        let terms = Self::log_terms(data, params)?;
        let u = responsibilities_from_log(&terms.log_joint());
        let w = weights_from_log(&terms.log_f, gamma);
        let a = gating_targets(data, &u, params, gamma);
        let d = (k_total - 1) * q + k_total * (q + 1);
        let mut g = DMatrix::zeros(n, d);
        for i in 0..n {
            let total: f64 = a.row(i).sum();
            let x = data.x.row(i);
            for j in 0..k_total - 1 {
                let coef = a[(i, j)] - total * terms.log_mix[(i, j)].exp();
                for s in 0..q {
                    g[(i, j * q + s)] = coef * x[s];
                }
            }
            let mut pos = (k_total - 1) * q;
            for (j, c) in params.components.iter().enumerate() {
                let r = data.y[i] - (x * &c.beta)[0];
                let uw = u[(i, j)] * w[(i, j)];
                for s in 0..q {
                    g[(i, pos + s)] = uw * r * x[s];
                }
                g[(i, pos + q)] = uw * (r * r - c.sigma2) + u[(i, j)] * variance_correction(c.sigma2, gamma) * c.sigma2;
                pos += q + 1;
            }
        }
        Ok(g)
    }

    fn outlier_scores(
        data: &Self::Data,
        params: &Self::Params,
        labels: &[usize],
        mc_draws: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let fitted: Vec<DVector<f64>> = params.components.iter().map(|c| &data.x * &c.beta).collect();
        let residuals: Vec<f64> = labels.iter().enumerate().map(|(i, l)| data.y[i] - fitted[*l][i]).collect();
        let sigma2: Vec<f64> = params.components.iter().map(|c| c.sigma2).collect();
        crate::select::residual_scores(&residuals, &sigma2, labels, mc_draws, seed)
    }
}
