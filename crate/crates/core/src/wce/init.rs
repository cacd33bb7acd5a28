//! Starting values: trimmed k-means++ clustering and Huber regression.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::distributions::{rng_from_seed, SpdMatrix, WceRng};
use crate::error::{Result, WceError};

/// Fraction of points ignored by the trimmed clustering.
pub const DEFAULT_TRIM: f64 = 0.1;
const LLOYD_ITERS: usize = 30;

/// How starting values are produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitStrategy {
    /// Trimmed k-means++ for point data, random split for regression data.
    Auto,
    TrimmedKMeans { trim: f64 },
    RandomSplit,
}

/// Hard partition with trimmed points marked `None`.
#[derive(Clone, Debug)]
pub struct Partition {
    pub labels: Vec<Option<usize>>,
    pub k: usize,
}

impl Partition {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| (*l == Some(cluster)).then_some(i))
            .collect()
    }
}

pub(crate) fn check_point_data(data: &DMatrix<f64>, k: usize) -> Result<()> {
    let (n, p) = data.shape();
    if p == 0 || n == 0 {
        return Err(WceError::Initialization("empty data".into()));
    }
    if n <= k * p {
        return Err(WceError::Initialization(format!("need more than K*p = {} observations, got {n}", k * p)));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(WceError::Initialization("data contain non-finite values".into()));
    }
    for j in 0..p {
        let col = data.column(j);
        let first = col[0];
        if col.iter().all(|v| *v == first) {
            return Err(WceError::Initialization(format!("column {j} is constant")));
        }
    }
    Ok(())
}

fn sq_dist(data: &DMatrix<f64>, i: usize, c: &DVector<f64>) -> f64 {
    (0..c.len()).map(|j| (data[(i, j)] - c[j]).powi(2)).sum()
}

fn row(data: &DMatrix<f64>, i: usize) -> DVector<f64> {
    data.row(i).transpose()
}

/// Value below which a fraction `q` of `values` falls.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let idx = ((v.len() as f64 - 1.0) * q).round() as usize;
    v[idx.min(v.len() - 1)]
}

/// k-means++ seeding restricted to points whose squared distance to the
/// current centers is below the `1 - trim` quantile.
fn seed_centers(data: &DMatrix<f64>, k: usize, trim: f64, rng: &mut WceRng) -> Vec<DVector<f64>> {
    let n = data.nrows();
    let mut centers = vec![row(data, rng.random_range(0..n))];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data, i, &centers[0])).collect();
    while centers.len() < k {
        let cut = quantile(&d2, 1.0 - trim);
        let weights: Vec<f64> = d2.iter().map(|d| if *d <= cut { *d } else { 0.0 }).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in weights.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                chosen = i;
                if target < *w {
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = row(data, pick);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data, i, &c));
        }
        centers.push(c);
    }
    centers
}

/// Trimmed k-means: Lloyd iterations in which the `trim` fraction of points
/// farthest from their center is left out of the center update.
pub fn trimmed_kmeans(data: &DMatrix<f64>, k: usize, trim: f64, seed: u64) -> Result<Partition> {
    if !(0.0..0.5).contains(&trim) {
        return Err(WceError::InvalidConfig(format!("trim fraction must be in [0, 0.5), got {trim}")));
    }
    check_point_data(data, k)?;
    let (n, p) = data.shape();
    let mut rng = rng_from_seed(seed);
    let mut centers = seed_centers(data, k, trim, &mut rng);
    let keep = n - ((trim * n as f64).floor() as usize);
    let mut labels = vec![None; n];
    for _ in 0..LLOYD_ITERS {
        let mut assign: Vec<(usize, f64)> = (0..n)
            .map(|i| {
                let mut best = (0, f64::INFINITY);
                for (c, center) in centers.iter().enumerate() {
                    let d = sq_dist(data, i, center);
                    if d < best.1 {
                        best = (c, d);
                    }
                }
                best
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| assign[*a].1.total_cmp(&assign[*b].1).then(a.cmp(b)));
        let mut new_labels = vec![None; n];
        for &i in order.iter().take(keep) {
            new_labels[i] = Some(assign[i].0);
        }
        let mut sums = vec![DVector::zeros(p); k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            if let Some(c) = new_labels[i] {
                for j in 0..p {
                    sums[c][j] += data[(i, j)];
                }
                counts[c] += 1;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = &sums[c] / counts[c] as f64;
            } else {
                // empty cluster: move it to the farthest retained point
                let far = *order[..keep]
                    .iter()
                    .max_by(|a, b| assign[**a].1.total_cmp(&assign[**b].1))
                    .expect("keep > 0");
                centers[c] = row(data, far);
                assign[far].1 = 0.0;
            }
        }
        let done = new_labels == labels;
        labels = new_labels;
        if done {
            break;
        }
    }
    Ok(Partition { labels, k })
}

/// Partition of point data according to `strategy`.
pub fn partition(data: &DMatrix<f64>, k: usize, strategy: InitStrategy, seed: u64) -> Result<Partition> {
    match strategy {
        InitStrategy::Auto => trimmed_kmeans(data, k, DEFAULT_TRIM, seed),
        InitStrategy::TrimmedKMeans { trim } => trimmed_kmeans(data, k, trim, seed),
        InitStrategy::RandomSplit => {
            check_point_data(data, k)?;
            Ok(random_split(data.nrows(), k, seed))
        }
    }
}

/// Uniformly random partition into `k` groups of near-equal size.
pub fn random_split(n: usize, k: usize, seed: u64) -> Partition {
    let mut rng = rng_from_seed(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut labels = vec![None; n];
    for (pos, i) in idx.into_iter().enumerate() {
        labels[i] = Some(pos % k);
    }
    Partition { labels, k }
}

/// Mean and divisor-`n` covariance of the selected rows.
pub fn sample_moments(data: &DMatrix<f64>, rows: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let p = data.ncols();
    let m = rows.len().max(1) as f64;
    let mut mean = DVector::zeros(p);
    for &i in rows {
        for j in 0..p {
            mean[j] += data[(i, j)];
        }
    }
    mean /= m;
    let mut cov = DMatrix::zeros(p, p);
    for &i in rows {
        let d = row(data, i) - &mean;
        cov += &d * d.transpose();
    }
    cov /= m;
    (mean, cov)
}

/// Covariance made usable as a starting value: falls back to the pooled
/// diagonal when the cluster is too small or singular.
pub(crate) fn usable_covariance(cov: DMatrix<f64>, fallback: &DMatrix<f64>) -> SpdMatrix {
    match SpdMatrix::new(cov) {
        Ok(s) if s.min_eigenvalue() > 1e-8 * fallback.trace() / fallback.nrows() as f64 => s,
        _ => SpdMatrix::new(fallback.clone()).expect("fallback covariance is SPD"),
    }
}

/// Diagonal matrix of the column variances.
pub(crate) fn diagonal_variance(data: &DMatrix<f64>) -> DMatrix<f64> {
    let all: Vec<usize> = (0..data.nrows()).collect();
    let (_, cov) = sample_moments(data, &all);
    DMatrix::from_diagonal(&cov.diagonal())
}

/// Marginal sample skewness `m3 / m2^{3/2}` of each column over `rows`.
pub fn marginal_skewness(data: &DMatrix<f64>, rows: &[usize]) -> DVector<f64> {
    let p = data.ncols();
    let m = rows.len().max(1) as f64;
    DVector::from_fn(p, |j, _| {
        let mean = rows.iter().map(|&i| data[(i, j)]).sum::<f64>() / m;
        let m2 = rows.iter().map(|&i| (data[(i, j)] - mean).powi(2)).sum::<f64>() / m;
        let m3 = rows.iter().map(|&i| (data[(i, j)] - mean).powi(3)).sum::<f64>() / m;
        if m2 > 0.0 {
            m3 / m2.powf(1.5)
        } else {
            0.0
        }
    })
}

/// Huber M-estimate of a linear regression by iteratively reweighted least
/// squares, scale from the normalized MAD. Returns `(beta, sigma2)`.
pub fn huber_regression(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    const HUBER_K: f64 = 1.345;
    let (n, q) = x.shape();
    if n <= q {
        return Err(WceError::Initialization(format!("{n} observations cannot fit {q} coefficients")));
    }
    let mut w = DVector::from_element(n, 1.0);
    let mut beta = DVector::zeros(q);
    let mut scale = 1.0;
    for _ in 0..50 {
        let xtw = DMatrix::from_fn(q, n, |a, i| x[(i, a)] * w[i]);
        let gram = &xtw * x;
        let rhs = &xtw * y;
        let chol = nalgebra::Cholesky::new(gram)
            .ok_or_else(|| WceError::Initialization("singular design in robust regression".into()))?;
        let next = chol.solve(&rhs);
        let resid = y - x * &next;
        let mut abs: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
        abs.sort_by(|a, b| a.total_cmp(b));
        let mad = abs[n / 2] / 0.674_489_750_196_081_7;
        scale = if mad > 0.0 { mad } else { (resid.norm_squared() / n as f64).sqrt().max(1e-8) };
        for i in 0..n {
            let z = resid[i].abs() / scale;
            w[i] = if z <= HUBER_K { 1.0 } else { HUBER_K / z };
        }
        let delta = (&next - &beta).amax();
        beta = next;
        if delta < 1e-10 * (1.0 + beta.amax()) {
            break;
        }
    }
    Ok((beta, scale * scale))
}
