//! Gaussian mixtures: closed-form bias terms, weighted moment updates and
//! the eigen-ratio constraint.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::distributions::special::LN_2PI;
use crate::distributions::{mvn_logpdf_from_parts, GaussianParams, SpdMatrix};
use crate::error::{CollapseKind, Result, WceError};
use crate::wce::init::{self, diagonal_variance, sample_moments, usable_covariance, InitStrategy, Partition};
use crate::wce::{update_mixing, weights_from_log, Family, GaussianMixture, LogTerms, MixtureModel};

/// Smallest admissible mixing probability before a start is abandoned.
pub(crate) const MIN_PI: f64 = 1e-6;
/// Smallest admissible covariance eigenvalue before the constraint.
pub(crate) const MIN_EIGENVALUE: f64 = 1e-10;
const GRID_POINTS: usize = 200;

/// Bias-correction constants of one Gaussian component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussBiasTerms {
    /// `B = ∫ f^{1+γ}`.
    pub b: f64,
    /// `g = γ B / (1 + γ)`, the correction in the covariance denominator.
    pub g: f64,
    /// Multiplier of `Σ⁻¹` in the covariance part of `C`.
    pub c2_scale: f64,
}

/// Bias terms from `log |Σ|`.
pub fn gaussian_bias_from_log_det(log_det: f64, gamma: f64, p: usize) -> GaussBiasTerms {
    if gamma == 0.0 {
        return GaussBiasTerms { b: 1.0, g: 0.0, c2_scale: 0.0 };
    }
    let pf = p as f64;
    let log_b = -0.5 * gamma * log_det - 0.5 * pf * gamma * LN_2PI - 0.5 * pf * (1.0 + gamma).ln();
    let b = log_b.exp();
    let g = gamma * b / (1.0 + gamma);
    GaussBiasTerms { b, g, c2_scale: -0.5 * g }
}

pub fn gaussian_bias_terms(sigma: &SpdMatrix, gamma: f64, p: usize) -> Result<GaussBiasTerms> {
    if sigma.dim() != p {
        return Err(WceError::DimensionMismatch { expected: p, got: sigma.dim() });
    }
    if !(gamma >= 0.0) {
        return Err(WceError::Domain(format!("gamma must be >= 0, got {gamma}")));
    }
    Ok(gaussian_bias_from_log_det(sigma.log_det(), gamma, p))
}

fn clip(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

/// Common lower clip level `m` for eigenvalues, chosen on a log grid to
/// minimize the weighted squared log distortion. `None` when the pooled
/// ratio already satisfies the bound.
fn clip_level(eigs: &[DVector<f64>], weights: &[f64], c: f64) -> Option<f64> {
    let lo = eigs.iter().flat_map(|e| e.iter()).cloned().fold(f64::INFINITY, f64::min);
    let hi = eigs.iter().flat_map(|e| e.iter()).cloned().fold(0.0, f64::max);
    if hi <= c * lo {
        return None;
    }
    let (a, b) = ((lo / c).ln(), hi.ln());
    let logs: Vec<Vec<f64>> = eigs.iter().map(|e| e.iter().map(|v| v.ln()).collect()).collect();
    let lc = c.ln();
    let mut best = (f64::INFINITY, a);
    for s in 0..GRID_POINTS {
        let lm = a + (b - a) * s as f64 / (GRID_POINTS - 1) as f64;
        let cost: f64 = logs
            .iter()
            .zip(weights)
            .map(|(ls, w)| w * ls.iter().map(|l| (l - clip(*l, lm, lm + lc)).powi(2)).sum::<f64>())
            .sum();
        if cost < best.0 {
            best = (cost, lm);
        }
    }
    Some(best.1.exp())
}

/// Eigen-ratio constraint on symmetric matrices with positive spectra;
/// `weights` scale each component's share of the distortion.
pub(crate) fn constrain_symmetric(mats: &[DMatrix<f64>], weights: &[f64], c: f64) -> Vec<DMatrix<f64>> {
    let decomps: Vec<SymmetricEigen<f64, nalgebra::Dyn>> = mats.iter().map(|m| SymmetricEigen::new(m.clone())).collect();
    let eigs: Vec<DVector<f64>> = decomps.iter().map(|d| d.eigenvalues.clone()).collect();
    let Some(m) = clip_level(&eigs, weights, c) else {
        return mats.to_vec();
    };
    decomps
        .into_iter()
        .map(|d| {
            let vals = d.eigenvalues.map(|v| clip(v, m, c * m));
            let v = &d.eigenvectors;
            let out = v * DMatrix::from_diagonal(&vals) * v.transpose();
            (&out + out.transpose()) * 0.5
        })
        .collect()
}

/// Eigen-ratio constraint with equal component weights.
pub fn eigen_ratio_constrain(sigmas: &[SpdMatrix], c: f64) -> Result<Vec<SpdMatrix>> {
    eigen_ratio_constrain_weighted(sigmas, &vec![1.0; sigmas.len()], c)
}

/// Eigen-ratio constraint where component `k` contributes with weight `weights[k]`.
pub fn eigen_ratio_constrain_weighted(sigmas: &[SpdMatrix], weights: &[f64], c: f64) -> Result<Vec<SpdMatrix>> {
    if !(c >= 1.0) {
        return Err(WceError::InvalidConfig(format!("eigen-ratio bound must be >= 1, got {c}")));
    }
    if weights.len() != sigmas.len() {
        return Err(WceError::DimensionMismatch { expected: sigmas.len(), got: weights.len() });
    }
    let mats: Vec<DMatrix<f64>> = sigmas.iter().map(|s| s.matrix().clone()).collect();
    let eigs: Vec<DVector<f64>> = sigmas.iter().map(|s| s.eigen().0).collect();
    if clip_level(&eigs, weights, c).is_none() {
        return Ok(sigmas.to_vec());
    }
    constrain_symmetric(&mats, weights, c).into_iter().map(SpdMatrix::new).collect()
}

fn weighted_sums(u: &DMatrix<f64>, w: &DMatrix<f64>, k: usize) -> (DVector<f64>, f64, f64) {
    let n = u.nrows();
    let mut uw = DVector::zeros(n);
    let mut su = 0.0;
    for i in 0..n {
        uw[i] = u[(i, k)] * w[(i, k)];
        su += u[(i, k)];
    }
    let suw = uw.sum();
    (uw, suw, su)
}

/// Mixing, mean and raw covariance updates with weights `w`, before the
/// eigen-ratio constraint. Returns `(pi, mus, covariances, n_k)`.
#[allow(clippy::type_complexity)]
pub(crate) fn gmm_raw_update(
    data: &DMatrix<f64>,
    u: &DMatrix<f64>,
    w: &DMatrix<f64>,
    params: &GaussianMixture,
    gamma: f64,
) -> Result<(Vec<f64>, Vec<DVector<f64>>, Vec<DMatrix<f64>>, Vec<f64>)> {
    let (n, p) = data.shape();
    let k_total = params.components.len();
    let bias: Vec<GaussBiasTerms> = params
        .components
        .iter()
        .map(|c| gaussian_bias_from_log_det(c.sigma.log_det(), gamma, p))
        .collect();
    let b: Vec<f64> = bias.iter().map(|t| t.b).collect();
    let pi = update_mixing(u, w, &b)?;
    let mut mus = Vec::with_capacity(k_total);
    let mut covs = Vec::with_capacity(k_total);
    let mut counts = Vec::with_capacity(k_total);
    for k in 0..k_total {
        if pi[k] < MIN_PI {
            return Err(WceError::Collapse(CollapseKind::VanishingWeight { component: k }));
        }
        let (uw, suw, su) = weighted_sums(u, w, k);
        let mu = data.tr_mul(&uw) / suw;
        let mut s = DMatrix::zeros(p, p);
        for i in 0..n {
            if uw[i] == 0.0 {
                continue;
            }
            let r = data.row(i).transpose() - &mu;
            s.ger(uw[i], &r, &r, 1.0);
        }
        let denom = suw - bias[k].g * su;
        if !(denom > 0.0) {
            return Err(WceError::Collapse(CollapseKind::NonPositiveDenominator { component: k }));
        }
        s /= denom;
        let s = (&s + s.transpose()) * 0.5;
        mus.push(mu);
        covs.push(s);
        counts.push(su);
    }
    Ok((pi, mus, covs, counts))
}

/// Checks spectra, applies the constraint and factorizes.
pub(crate) fn finish_covariances(covs: Vec<DMatrix<f64>>, counts: &[f64], c: Option<f64>) -> Result<Vec<SpdMatrix>> {
    for (k, s) in covs.iter().enumerate() {
        let min = SymmetricEigen::new(s.clone()).eigenvalues.min();
        if !(min >= MIN_EIGENVALUE) {
            return Err(WceError::Collapse(CollapseKind::DegenerateScale { component: k }));
        }
    }
    let covs = match c {
        Some(c) => constrain_symmetric(&covs, counts, c),
        None => covs,
    };
    covs.into_iter()
        .enumerate()
        .map(|(k, s)| SpdMatrix::new(s).map_err(|_| WceError::Collapse(CollapseKind::DegenerateScale { component: k })))
        .collect()
}

/// Weighted estimating-equation update given component log densities.
pub(crate) fn gmm_ee_from_log(
    data: &DMatrix<f64>,
    u: &DMatrix<f64>,
    log_f: &DMatrix<f64>,
    params: &GaussianMixture,
    gamma: f64,
    c: Option<f64>,
) -> Result<GaussianMixture> {
    let w = weights_from_log(log_f, gamma);
    let (pi, mus, covs, counts) = gmm_raw_update(data, u, &w, params, gamma)?;
    let sigmas = finish_covariances(covs, &counts, c)?;
    let components = mus
        .into_iter()
        .zip(sigmas)
        .map(|(mu, sigma)| GaussianParams { mu, sigma })
        .collect();
    Ok(GaussianMixture { pi, components })
}

/// One estimating-equation sweep for a Gaussian mixture.
pub fn gmm_ee_update(
    data: &DMatrix<f64>,
    u: &DMatrix<f64>,
    params: &GaussianMixture,
    gamma: f64,
    c: Option<f64>,
) -> Result<GaussianMixture> {
    GaussianModel::validate(data, params)?;
    if u.shape() != (data.nrows(), params.components.len()) {
        return Err(WceError::DimensionMismatch { expected: params.components.len(), got: u.ncols() });
    }
    let log_f = component_log_densities(data, params);
    gmm_ee_from_log(data, u, &log_f, params, gamma, c)
}

/// `n x K` matrix of `log φ(y_i; μ_k, Σ_k)`.
pub fn component_log_densities(data: &DMatrix<f64>, params: &GaussianMixture) -> DMatrix<f64> {
    let (n, p) = data.shape();
    let k = params.components.len();
    let mut out = DMatrix::zeros(n, k);
    for (j, c) in params.components.iter().enumerate() {
        let log_det = c.sigma.log_det();
        for i in 0..n {
            let r = data.row(i).transpose() - &c.mu;
            out[(i, j)] = mvn_logpdf_from_parts(c.sigma.inv_quad_form(&r), log_det, p);
        }
    }
    out
}

/// Starting values from a hard partition: per-cluster moments, mixing
/// proportions from cluster sizes, then the eigen-ratio constraint.
pub(crate) fn init_from_partition(data: &DMatrix<f64>, part: &Partition, c: Option<f64>) -> Result<GaussianMixture> {
    let fallback = diagonal_variance(data);
    let mut counts = Vec::with_capacity(part.k);
    let mut components = Vec::with_capacity(part.k);
    for k in 0..part.k {
        let rows = part.members(k);
        if rows.is_empty() {
            return Err(WceError::Initialization(format!("cluster {k} is empty")));
        }
        let (mu, cov) = sample_moments(data, &rows);
        let sigma = if rows.len() > data.ncols() { usable_covariance(cov, &fallback) } else { usable_covariance(fallback.clone(), &fallback) };
        counts.push(rows.len() as f64);
        components.push(GaussianParams { mu, sigma });
    }
    let total: f64 = counts.iter().sum();
    let pi = counts.iter().map(|c| c / total).collect();
    if let Some(c) = c {
        let sigmas: Vec<SpdMatrix> = components.iter().map(|g| g.sigma.clone()).collect();
        let constrained = eigen_ratio_constrain_weighted(&sigmas, &counts, c)?;
        for (g, s) in components.iter_mut().zip(constrained) {
            g.sigma = s;
        }
    }
    GaussianMixture::new(pi, components)
}

pub(crate) fn lower_triangle(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    let p = m.nrows();
    (0..p).flat_map(move |a| (0..=a).map(move |b| m[(a, b)]))
}

pub(crate) fn from_lower_triangle(vals: &[f64], p: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    let mut idx = 0;
    for a in 0..p {
        for b in 0..=a {
            m[(a, b)] = vals[idx];
            m[(b, a)] = vals[idx];
            idx += 1;
        }
    }
    m
}

pub(crate) fn split_pi(coords: &[f64], k: usize) -> Vec<f64> {
    let mut pi: Vec<f64> = coords[..k - 1].to_vec();
    pi.push(1.0 - pi.iter().sum::<f64>());
    pi
}

/// Gaussian-mixture family marker.
#[derive(Clone, Copy, Debug, Default)]
pub struct GaussianModel;

impl MixtureModel for GaussianModel {
    type Params = GaussianMixture;
    type Data = DMatrix<f64>;

    const FAMILY: Family = Family::Gaussian;

    fn n_obs(data: &Self::Data) -> usize {
        data.nrows()
    }

    fn n_components(params: &Self::Params) -> usize {
        params.components.len()
    }

    fn validate(data: &Self::Data, params: &Self::Params) -> Result<()> {
        params.validate()?;
        if data.ncols() != params.dim() {
            return Err(WceError::DimensionMismatch { expected: params.dim(), got: data.ncols() });
        }
        Ok(())
    }

    fn log_terms(data: &Self::Data, params: &Self::Params) -> Result<LogTerms> {
        let log_f = component_log_densities(data, params);
        let log_mix = DMatrix::from_fn(data.nrows(), params.pi.len(), |_, k| params.pi[k].ln());
        Ok(LogTerms { log_mix, log_f })
    }

    fn ee_step(
        data: &Self::Data,
        u: &DMatrix<f64>,
        terms: &LogTerms,
        params: &Self::Params,
        gamma: f64,
        eigen_ratio_c: Option<f64>,
    ) -> Result<Self::Params> {
        gmm_ee_from_log(data, u, &terms.log_f, params, gamma, eigen_ratio_c)
    }

    fn initialize(data: &Self::Data, k: usize, eigen_ratio_c: Option<f64>, seed: u64) -> Result<Self::Params> {
        let part = init::partition(data, k, InitStrategy::Auto, seed)?;
        init_from_partition(data, &part, eigen_ratio_c)
    }

    fn coords(params: &Self::Params) -> Vec<f64> {
        let mut out = params.pi.clone();
        for c in &params.components {
            out.extend(c.mu.iter());
            out.extend(lower_triangle(c.sigma.matrix()));
        }
        out
    }

    fn free_coords(params: &Self::Params) -> Vec<f64> {
        let k = params.pi.len();
        let mut out = params.pi[..k - 1].to_vec();
        for c in &params.components {
            out.extend(c.mu.iter());
            out.extend(lower_triangle(c.sigma.matrix()));
        }
        out
    }

    fn with_free_coords(params: &Self::Params, coords: &[f64]) -> Result<Self::Params> {
        let k = params.pi.len();
        let p = params.dim();
        let tri = p * (p + 1) / 2;
        if coords.len() != k - 1 + k * (p + tri) {
            return Err(WceError::DimensionMismatch { expected: k - 1 + k * (p + tri), got: coords.len() });
        }
        let pi = split_pi(coords, k);
        let mut pos = k - 1;
        let mut components = Vec::with_capacity(k);
        for _ in 0..k {
            let mu = DVector::from_column_slice(&coords[pos..pos + p]);
            pos += p;
            let sigma = SpdMatrix::new(from_lower_triangle(&coords[pos..pos + tri], p))?;
            pos += tri;
            components.push(GaussianParams { mu, sigma });
        }
        Ok(GaussianMixture { pi, components })
    }

    fn coord_names(params: &Self::Params) -> Vec<String> {
        let k = params.pi.len();
        let p = params.dim();
        let mut out: Vec<String> = (0..k - 1).map(|j| format!("pi[{j}]")).collect();
        for j in 0..k {
            out.extend((0..p).map(|a| format!("mu[{j}][{a}]")));
            out.extend((0..p).flat_map(|a| (0..=a).map(move |b| format!("sigma[{j}][{a},{b}]"))));
        }
        out
    }

    fn imputed_scores(data: &Self::Data, params: &Self::Params, gamma: f64) -> Result<DMatrix<f64>> {
        let (n, p) = data.shape();
        let k_total = params.pi.len();
        let terms = Self::log_terms(data, params)?;
        let u = crate::wce::responsibilities_from_log(&terms.log_joint());
        let w = weights_from_log(&terms.log_f, gamma);
        let bias: Vec<GaussBiasTerms> = params
            .components
            .iter()
            .map(|c| gaussian_bias_from_log_det(c.sigma.log_det(), gamma, p))
            .collect();
        let tri = p * (p + 1) / 2;
        let d = k_total - 1 + k_total * (p + tri);
        let mut g = DMatrix::zeros(n, d);
        let last = k_total - 1;
        for i in 0..n {
            let mix_last = u[(i, last)] * w[(i, last)] / (params.pi[last] * bias[last].b);
            for k in 0..last {
                g[(i, k)] = u[(i, k)] * w[(i, k)] / (params.pi[k] * bias[k].b) - mix_last;
            }
            let mut pos = last;
            for (k, comp) in params.components.iter().enumerate() {
                let r = data.row(i).transpose() - &comp.mu;
                let uw = u[(i, k)] * w[(i, k)];
                for a in 0..p {
                    g[(i, pos + a)] = uw * r[a];
                }
                pos += p;
                let s = comp.sigma.matrix();
                for a in 0..p {
                    for b in 0..=a {
                        g[(i, pos)] = uw * (r[a] * r[b] - s[(a, b)]) + u[(i, k)] * bias[k].g * s[(a, b)];
                        pos += 1;
                    }
                }
            }
        }
        Ok(g)
    }

    fn outlier_scores(
        data: &Self::Data,
        params: &Self::Params,
        labels: &[usize],
        _mc_draws: usize,
        _seed: u64,
    ) -> Result<Vec<f64>> {
        let p = data.ncols();
        Ok((0..data.nrows())
            .map(|i| {
                let c = &params.components[labels[i]];
                let r = data.row(i).transpose() - &c.mu;
                crate::select::gaussian_tail_probability(c.sigma.inv_quad_form(&r), p)
            })
            .collect())
    }
}
