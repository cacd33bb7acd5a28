//! Skew-normal mixtures fitted through the half-normal latent representation.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::distributions::special::{log_norm_cdf, LN_2PI};
use crate::distributions::{truncnorm_plus_moments, SkewNormalComponent, SkewNormalParams, SpdMatrix};
use crate::error::{CollapseKind, Result, WceError};
use crate::gmm::{finish_covariances, from_lower_triangle, gaussian_bias_from_log_det, lower_triangle, split_pi, MIN_PI};
use crate::wce::init::{self, diagonal_variance, marginal_skewness, sample_moments, usable_covariance, InitStrategy, Partition};
use crate::wce::{responsibilities_from_log, update_mixing, Family, LogTerms, MixtureModel, SkewNormalMixture};

/// Conditional quantities of the latent half-normal variable for one
/// observation and component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnLatentStats {
    pub delta: f64,
    pub tau2: f64,
    pub t2: f64,
    pub m: f64,
    /// Conditional expectation of the density weight.
    pub u_big: f64,
    pub v0: f64,
    pub v1: f64,
    pub v2: f64,
}

/// Quantities of one component reused across observations.
struct ComponentCache {
    sinv_psi: DVector<f64>,
    a: f64,
    log_det: f64,
}

impl ComponentCache {
    fn new(s: &SkewNormalParams) -> Self {
        let sinv_psi = s.sigma.solve(&s.psi);
        let a = s.psi.dot(&sinv_psi);
        Self { sinv_psi, a, log_det: s.sigma.log_det() }
    }
}

fn latent_from_parts(b: f64, d: f64, cache: &ComponentCache, p: usize, gamma: f64) -> Result<SnLatentStats> {
    let a = cache.a;
    let tau2 = 1.0 / (a + 1.0);
    let delta = tau2 * b;
    let t2 = 1.0 / ((1.0 + gamma) * a + 1.0);
    let m = t2 * (1.0 + gamma) * b;
    let u_big = if gamma == 0.0 {
        1.0
    } else {
        let (tau, t) = (tau2.sqrt(), t2.sqrt());
        let log_u = -0.5 * gamma * cache.log_det - 0.5 * gamma * p as f64 * LN_2PI + log_norm_cdf(m / t) - log_norm_cdf(delta / tau)
            + 0.5 * (t2 / tau2).ln()
            - 0.5 * gamma * d
            - delta * delta / (2.0 * tau2)
            + m * m / (2.0 * t2);
        log_u.exp()
    };
    let (e1, e2) = truncnorm_plus_moments(m, t2.sqrt())?;
    Ok(SnLatentStats {
        delta,
        tau2,
        t2,
        m,
        u_big,
        v0: u_big,
        v1: u_big * e1,
        v2: u_big * e2,
    })
}

/// Latent expectations `E[w v^j | y]`, `j = 0, 1, 2`, under the conditional
/// half-normal posterior of `v`, with `w` the `gamma` power of the
/// conditional Gaussian density of `y` given `v`.
pub fn snm_latent_expectations(y: &DVector<f64>, s: &SkewNormalParams, gamma: f64) -> Result<SnLatentStats> {
    if y.len() != s.dim() {
        return Err(WceError::DimensionMismatch { expected: s.dim(), got: y.len() });
    }
    if !(gamma >= 0.0) {
        return Err(WceError::Domain(format!("gamma must be >= 0, got {gamma}")));
    }
    let cache = ComponentCache::new(s);
    let r = y - &s.mu;
    latent_from_parts(cache.sinv_psi.dot(&r), s.sigma.inv_quad_form(&r), &cache, s.dim(), gamma)
}

/// `V⁰`, `V¹`, `V²` for every observation and component, each `n x K`.
#[derive(Clone, Debug)]
pub struct LatentMoments {
    pub v0: DMatrix<f64>,
    pub v1: DMatrix<f64>,
    pub v2: DMatrix<f64>,
}

pub fn latent_moments(data: &DMatrix<f64>, params: &SkewNormalMixture, gamma: f64) -> Result<LatentMoments> {
    let (n, p) = data.shape();
    let k = params.components.len();
    let mut out = LatentMoments {
        v0: DMatrix::zeros(n, k),
        v1: DMatrix::zeros(n, k),
        v2: DMatrix::zeros(n, k),
    };
    for (j, s) in params.components.iter().enumerate() {
        let cache = ComponentCache::new(s);
        for i in 0..n {
            let r = data.row(i).transpose() - &s.mu;
            let st = latent_from_parts(cache.sinv_psi.dot(&r), s.sigma.inv_quad_form(&r), &cache, p, gamma)?;
            out.v0[(i, j)] = st.v0;
            out.v1[(i, j)] = st.v1;
            out.v2[(i, j)] = st.v2;
        }
    }
    Ok(out)
}

fn ee_with_moments(
    data: &DMatrix<f64>,
    u: &DMatrix<f64>,
    lm: &LatentMoments,
    params: &SkewNormalMixture,
    gamma: f64,
    c: Option<f64>,
) -> Result<SkewNormalMixture> {
    let (n, p) = data.shape();
    let k_total = params.components.len();
    let bias: Vec<_> = params
        .components
        .iter()
        .map(|s| gaussian_bias_from_log_det(s.sigma.log_det(), gamma, p))
        .collect();
    let b: Vec<f64> = bias.iter().map(|t| t.b).collect();
    let pi = update_mixing(u, &lm.v0, &b)?;
    let mut locs = Vec::with_capacity(k_total);
    let mut covs = Vec::with_capacity(k_total);
    let mut counts = Vec::with_capacity(k_total);
    for (k, comp) in params.components.iter().enumerate() {
        if pi[k] < MIN_PI {
            return Err(WceError::Collapse(CollapseKind::VanishingWeight { component: k }));
        }
        let mut s0 = 0.0;
        let mut s2 = 0.0;
        let mut su = 0.0;
        let mut mu_num = DVector::zeros(p);
        let mut v1_sum = 0.0;
        for i in 0..n {
            let uik = u[(i, k)];
            su += uik;
            s0 += uik * lm.v0[(i, k)];
            s2 += uik * lm.v2[(i, k)];
            v1_sum += uik * lm.v1[(i, k)];
            for a in 0..p {
                mu_num[a] += uik * lm.v0[(i, k)] * data[(i, a)];
            }
        }
        if !(s0 > 0.0) || !(s2 > 0.0) {
            return Err(WceError::Collapse(CollapseKind::VanishingWeight { component: k }));
        }
        let mu = (mu_num - &comp.psi * v1_sum) / s0;
        let mut psi_num = DVector::zeros(p);
        for i in 0..n {
            let w1 = u[(i, k)] * lm.v1[(i, k)];
            for a in 0..p {
                psi_num[a] += w1 * (data[(i, a)] - mu[a]);
            }
        }
        let psi = psi_num / s2;
        let mut s = DMatrix::zeros(p, p);
        for i in 0..n {
            let uik = u[(i, k)];
            if uik == 0.0 {
                continue;
            }
            let r = data.row(i).transpose() - &mu;
            s.ger(uik * lm.v0[(i, k)], &r, &r, 1.0);
            s.ger(-uik * lm.v1[(i, k)], &psi, &r, 1.0);
            s.ger(-uik * lm.v1[(i, k)], &r, &psi, 1.0);
            s.ger(uik * lm.v2[(i, k)], &psi, &psi, 1.0);
        }
        let denom = s0 - bias[k].g * su;
        if !(denom > 0.0) {
            return Err(WceError::Collapse(CollapseKind::NonPositiveDenominator { component: k }));
        }
        s /= denom;
        covs.push((&s + s.transpose()) * 0.5);
        locs.push((mu, psi));
        counts.push(su);
    }
    let sigmas = finish_covariances(covs, &counts, c)?;
    let components = locs
        .into_iter()
        .zip(sigmas)
        .map(|((mu, psi), sigma)| SkewNormalParams { mu, psi, sigma })
        .collect();
    Ok(SkewNormalMixture { pi, components })
}

/// One estimating-equation sweep for a skew-normal mixture: mixing
/// proportions, locations, then skewness and scale using the new locations.
pub fn snm_ee_update(
    data: &DMatrix<f64>,
    u: &DMatrix<f64>,
    params: &SkewNormalMixture,
    gamma: f64,
    c: Option<f64>,
) -> Result<SkewNormalMixture> {
    SkewNormalModel::validate(data, params)?;
    if u.shape() != (data.nrows(), params.components.len()) {
        return Err(WceError::DimensionMismatch { expected: params.components.len(), got: u.ncols() });
    }
    let lm = latent_moments(data, params, gamma)?;
    ee_with_moments(data, u, &lm, params, gamma, c)
}

fn components(params: &SkewNormalMixture) -> Result<Vec<SkewNormalComponent>> {
    params.components.iter().cloned().map(SkewNormalComponent::new).collect()
}

/// `n x K` skew-normal log densities.
pub fn component_log_densities(data: &DMatrix<f64>, params: &SkewNormalMixture) -> Result<DMatrix<f64>> {
    let comps = components(params)?;
    let n = data.nrows();
    let mut out = DMatrix::zeros(n, comps.len());
    for (j, c) in comps.iter().enumerate() {
        for i in 0..n {
            out[(i, j)] = c.dp.logpdf(&data.row(i).transpose(), &c.params.mu);
        }
    }
    Ok(out)
}

/// Starting values: cluster means as locations, marginal skewness as
/// skewness vectors, identity scales and equal mixing proportions.
const TAIL_RECOVERY_LEVEL: f64 = 0.999;

pub(crate) fn init_from_partition(data: &DMatrix<f64>, part: &Partition) -> Result<SkewNormalMixture> {
    let p = data.ncols();
    let fallback = diagonal_variance(data);
    let mut centers = Vec::with_capacity(part.k);
    for k in 0..part.k {
        let rows = part.members(k);
        if rows.len() < 2 {
            return Err(WceError::Initialization(format!("cluster {k} has fewer than two members")));
        }
        let (mean, cov) = sample_moments(data, &rows);
        centers.push((mean, usable_covariance(cov, &fallback)));
    }
    // Trimming cuts the long tail of a skewed cluster, so trimmed points close
    // enough to a cluster rejoin it before the skewness is computed.
    let cutoff = 2.0 * ChiSquared::new(p as f64).expect("positive degrees of freedom").inverse_cdf(TAIL_RECOVERY_LEVEL);
    let mut rows: Vec<Vec<usize>> = (0..part.k).map(|k| part.members(k)).collect();
    for i in (0..data.nrows()).filter(|&i| part.labels[i].is_none()) {
        let row = data.row(i).transpose();
        let (k, d2) = centers
            .iter()
            .map(|(mean, cov)| cov.inv_quad_form(&(&row - mean)))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one cluster");
        if d2 < cutoff {
            rows[k].push(i);
        }
    }
    let comps = centers
        .into_iter()
        .zip(&rows)
        .map(|((mu, _), rows)| SkewNormalParams {
            mu,
            psi: marginal_skewness(data, rows),
            sigma: SpdMatrix::identity(p),
        })
        .collect();
    SkewNormalMixture::new(vec![1.0 / part.k as f64; part.k], comps)
}

/// Skew-normal mixture family marker.
#[derive(Clone, Copy, Debug, Default)]
pub struct SkewNormalModel;

impl MixtureModel for SkewNormalModel {
    type Params = SkewNormalMixture;
    type Data = DMatrix<f64>;

    const FAMILY: Family = Family::SkewNormal;

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
        let log_f = component_log_densities(data, params)?;
        let log_mix = DMatrix::from_fn(data.nrows(), params.pi.len(), |_, k| params.pi[k].ln());
        Ok(LogTerms { log_mix, log_f })
    }

    fn ee_step(
        data: &Self::Data,
        u: &DMatrix<f64>,
        _terms: &LogTerms,
        params: &Self::Params,
        gamma: f64,
        eigen_ratio_c: Option<f64>,
    ) -> Result<Self::Params> {
        let lm = latent_moments(data, params, gamma)?;
        ee_with_moments(data, u, &lm, params, gamma, eigen_ratio_c)
    }

    fn initialize(data: &Self::Data, k: usize, _eigen_ratio_c: Option<f64>, seed: u64) -> Result<Self::Params> {
        let part = init::partition(data, k, InitStrategy::Auto, seed)?;
        init_from_partition(data, &part)
    }

    fn coords(params: &Self::Params) -> Vec<f64> {
        let mut out = params.pi.clone();
        for c in &params.components {
            out.extend(c.mu.iter());
            out.extend(c.psi.iter());
            out.extend(lower_triangle(c.sigma.matrix()));
        }
        out
    }

    fn free_coords(params: &Self::Params) -> Vec<f64> {
        let mut out = Self::coords(params);
        out.remove(params.pi.len() - 1);
        out
    }

    fn with_free_coords(params: &Self::Params, coords: &[f64]) -> Result<Self::Params> {
        let k = params.pi.len();
        let p = params.dim();
        let tri = p * (p + 1) / 2;
        let expected = k - 1 + k * (2 * p + tri);
        if coords.len() != expected {
            return Err(WceError::DimensionMismatch { expected, got: coords.len() });
        }
        let pi = split_pi(coords, k);
        let mut pos = k - 1;
        let mut comps = Vec::with_capacity(k);
        for _ in 0..k {
            let mu = DVector::from_column_slice(&coords[pos..pos + p]);
            let psi = DVector::from_column_slice(&coords[pos + p..pos + 2 * p]);
            pos += 2 * p;
            let sigma = SpdMatrix::new(from_lower_triangle(&coords[pos..pos + tri], p))?;
            pos += tri;
            comps.push(SkewNormalParams { mu, psi, sigma });
        }
        Ok(SkewNormalMixture { pi, components: comps })
    }

    fn coord_names(params: &Self::Params) -> Vec<String> {
        let k = params.pi.len();
        let p = params.dim();
        let mut out: Vec<String> = (0..k - 1).map(|j| format!("pi[{j}]")).collect();
        for j in 0..k {
            out.extend((0..p).map(|a| format!("mu[{j}][{a}]")));
            out.extend((0..p).map(|a| format!("psi[{j}][{a}]")));
            out.extend((0..p).flat_map(|a| (0..=a).map(move |b| format!("sigma[{j}][{a},{b}]"))));
        }
        out
    }

    fn imputed_scores(data: &Self::Data, params: &Self::Params, gamma: f64) -> Result<DMatrix<f64>> {
        let (n, p) = data.shape();
        let k_total = params.pi.len();
        let terms = Self::log_terms(data, params)?;
        let u = responsibilities_from_log(&terms.log_joint());
        let lm = latent_moments(data, params, gamma)?;
        let bias: Vec<_> = params
            .components
            .iter()
            .map(|s| gaussian_bias_from_log_det(s.sigma.log_det(), gamma, p))
            .collect();
        let tri = p * (p + 1) / 2;
        let d = k_total - 1 + k_total * (2 * p + tri);
        let last = k_total - 1;
        let mut g = DMatrix::zeros(n, d);
        for i in 0..n {
            let mix_last = u[(i, last)] * lm.v0[(i, last)] / (params.pi[last] * bias[last].b);
            for k in 0..last {
                g[(i, k)] = u[(i, k)] * lm.v0[(i, k)] / (params.pi[k] * bias[k].b) - mix_last;
            }
            let mut pos = last;
            for (k, comp) in params.components.iter().enumerate() {
                let uik = u[(i, k)];
                let (v0, v1, v2) = (lm.v0[(i, k)], lm.v1[(i, k)], lm.v2[(i, k)]);
                let r = data.row(i).transpose() - &comp.mu;
                for a in 0..p {
                    g[(i, pos + a)] = uik * (v0 * r[a] - v1 * comp.psi[a]);
                    g[(i, pos + p + a)] = uik * (v1 * r[a] - v2 * comp.psi[a]);
                }
                pos += 2 * p;
                let s = comp.sigma.matrix();
                let psi = &comp.psi;
                for a in 0..p {
                    for b in 0..=a {
                        let eta = v0 * r[a] * r[b] - v1 * (psi[a] * r[b] + r[a] * psi[b]) + v2 * psi[a] * psi[b];
                        g[(i, pos)] = uik * (eta - v0 * s[(a, b)] + bias[k].g * s[(a, b)]);
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
        mc_draws: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let comps = components(params)?;
        let log_f: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| comps[*l].dp.logpdf(&data.row(i).transpose(), &comps[*l].params.mu))
            .collect();
        crate::select::skew_normal_scores(&comps, &log_f, labels, mc_draws, seed)
    }
}
