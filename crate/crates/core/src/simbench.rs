//! Simulation scenarios, accuracy metrics and a replication harness.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    rng_from_seed, rng_stream, ComponentDensity, GaussianParams, SkewNormalComponent, SkewNormalParams, SpdMatrix, WceRng,
};
use crate::error::{Result, WceError};
use crate::wce::{log_mixture_density, run_eee, Dataset, Family, FitConfig, FitResult, GaussianMixture, MixtureParams, SkewNormalMixture};

/// Proposals allowed per outlier before the contamination region is declared infeasible.
pub const MAX_OUTLIER_PROPOSALS: usize = 1_000_000;
/// Default number of uniform points for the integrated squared error.
pub const DEFAULT_MC_POINTS: usize = 3000;

/// Data-generating configuration of one simulation setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub family: Family,
    /// Cluster separation.
    pub xi: f64,
    /// Fraction of uniformly scattered outliers.
    pub omega: f64,
    pub p: usize,
    pub n: usize,
    pub true_params: MixtureParams,
    pub seed: u64,
}

fn padded(head: &[f64], p: usize) -> DVector<f64> {
    DVector::from_fn(p, |j, _| head.get(j).copied().unwrap_or(0.0))
}

fn block_with_identity(head: [[f64; 2]; 2], p: usize) -> Result<SpdMatrix> {
    let mut m = DMatrix::identity(p, p);
    for a in 0..2 {
        for b in 0..2 {
            m[(a, b)] = head[a][b];
        }
    }
    SpdMatrix::new(m)
}

fn check_common(omega: f64, p: usize, n: usize) -> Result<()> {
    if !(0.0..1.0).contains(&omega) {
        return Err(WceError::InvalidConfig(format!("omega must lie in [0, 1), got {omega}")));
    }
    if n == 0 {
        return Err(WceError::InvalidConfig("n must be positive".into()));
    }
    if p < 2 {
        return Err(WceError::InvalidConfig(format!("the benchmark scenarios need p >= 2, got {p}")));
    }
    Ok(())
}

impl Scenario {
    /// Three Gaussian clusters centred at `(-ξ,-ξ)`, `(ξ,-ξ)`, `(ξ,ξ)` in the
    /// first two coordinates with mixing proportions `(0.3, 0.3, 0.4)`.
    pub fn gaussian(xi: f64, omega: f64, p: usize, n: usize, seed: u64) -> Result<Self> {
        check_common(omega, p, n)?;
        let mus = [[-xi, -xi], [xi, -xi], [xi, xi]];
        let sigmas = [[[2.0, 0.3], [0.3, 1.0]], [[1.0, -0.3], [-0.3, 1.0]], [[1.0, 0.3], [0.3, 2.0]]];
        let components = mus
            .iter()
            .zip(sigmas)
            .map(|(m, s)| GaussianParams::new(padded(m, p), block_with_identity(s, p)?))
            .collect::<Result<Vec<_>>>()?;
        let true_params = GaussianMixture::new(vec![0.3, 0.3, 0.4], components)?.into();
        Ok(Self { family: Family::Gaussian, xi, omega, p, n, true_params, seed })
    }

    /// Two mirrored skew-normal clusters with locations `±(ξ,ξ)`, skewness
    /// `±(2,2)` and mixing proportions `(0.4, 0.6)`.
    pub fn skew_normal(xi: f64, omega: f64, p: usize, n: usize, seed: u64) -> Result<Self> {
        check_common(omega, p, n)?;
        let sigma = block_with_identity([[1.0, 0.3], [0.3, 1.0]], p)?;
        let components = vec![
            SkewNormalParams::new(padded(&[xi, xi], p), padded(&[2.0, 2.0], p), sigma.clone())?,
            SkewNormalParams::new(padded(&[-xi, -xi], p), padded(&[-2.0, -2.0], p), sigma)?,
        ];
        let true_params = SkewNormalMixture::new(vec![0.4, 0.6], components)?.into();
        Ok(Self { family: Family::SkewNormal, xi, omega, p, n, true_params, seed })
    }

    /// Scenario with caller-supplied true parameters.
    pub fn custom(true_params: MixtureParams, omega: f64, n: usize, seed: u64) -> Result<Self> {
        true_params.validate()?;
        let p = match &true_params {
            MixtureParams::Gaussian(m) => m.dim(),
            MixtureParams::SkewNormal(m) => m.dim(),
            MixtureParams::Experts(_) => {
                return Err(WceError::InvalidConfig("simulation supports gaussian and skew-normal mixtures".into()))
            }
        };
        if !(0.0..1.0).contains(&omega) || n == 0 {
            return Err(WceError::InvalidConfig("need omega in [0, 1) and n > 0".into()));
        }
        Ok(Self { family: true_params.family(), xi: f64::NAN, omega, p, n, true_params, seed })
    }

    /// Same setting with another seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Number of outliers, `ωn` rounded to the nearest integer.
    pub fn n_outliers(&self) -> usize {
        (self.omega * self.n as f64).round() as usize
    }
}

/// A generated data set with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SimData {
    pub data: DMatrix<f64>,
    /// Generating component of each inlier; `None` for outliers.
    pub labels: Vec<Option<usize>>,
    pub outliers: Vec<bool>,
}

impl SimData {
    pub fn dataset(&self) -> Dataset {
        Dataset::Points(self.data.clone())
    }
}

/// Half-widths of the outlier box `(-10,10) x (-5,5) x (-3,3)^{p-2}`.
fn outlier_box(p: usize) -> Vec<f64> {
    (0..p)
        .map(|j| match j {
            0 => 10.0,
            1 => 5.0,
            _ => 3.0,
        })
        .collect()
}

/// Uniform draws from the box, rejected while some component is within
/// squared Mahalanobis distance `5p` of the point.
fn draw_outliers(count: usize, p: usize, shapes: &[GaussianParams], rng: &mut WceRng) -> Result<Vec<DVector<f64>>> {
    let half = outlier_box(p);
    let cut = 5.0 * p as f64;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut found = None;
        for _ in 0..MAX_OUTLIER_PROPOSALS {
            let x = DVector::from_fn(p, |j, _| rng.random_range(-half[j]..half[j]));
            let min = shapes
                .iter()
                .map(|g| g.sigma.inv_quad_form(&(&x - &g.mu)))
                .fold(f64::INFINITY, f64::min);
            if min > cut {
                found = Some(x);
                break;
            }
        }
        out.push(found.ok_or(WceError::InfeasibleOutlierRegion(MAX_OUTLIER_PROPOSALS))?);
    }
    Ok(out)
}

fn assemble<C: ComponentDensity>(
    scn: &Scenario,
    pi: &[f64],
    comps: &[C],
    shapes: &[GaussianParams],
) -> Result<SimData> {
    let mut rng = rng_from_seed(scn.seed);
    let n_out = scn.n_outliers();
    let n_in = scn.n - n_out;
    let picker = WeightedIndex::new(pi).map_err(|e| WceError::InvalidParams(e.to_string()))?;
    let mut data = DMatrix::zeros(scn.n, scn.p);
    let mut labels = Vec::with_capacity(scn.n);
    for i in 0..n_in {
        let k = picker.sample(&mut rng);
        data.set_row(i, &comps[k].sample_one(&mut rng).transpose());
        labels.push(Some(k));
    }
    for (j, x) in draw_outliers(n_out, scn.p, shapes, &mut rng)?.into_iter().enumerate() {
        data.set_row(n_in + j, &x.transpose());
        labels.push(None);
    }
    let outliers = labels.iter().map(Option::is_none).collect();
    Ok(SimData { data, labels, outliers })
}

/// Draws a contaminated Gaussian-mixture sample.
pub fn gen_gaussian_data(scn: &Scenario) -> Result<SimData> {
    let MixtureParams::Gaussian(m) = &scn.true_params else {
        return Err(WceError::InvalidConfig("scenario is not a Gaussian mixture".into()));
    };
    assemble(scn, &m.pi, &m.components, &m.components)
}

/// Draws a contaminated skew-normal-mixture sample. Outliers keep squared
/// Mahalanobis distance above `5p` with respect to each component's location
/// and marginal covariance `Σ + ψψᵀ`.
pub fn gen_skewnormal_data(scn: &Scenario) -> Result<SimData> {
    let MixtureParams::SkewNormal(m) = &scn.true_params else {
        return Err(WceError::InvalidConfig("scenario is not a skew-normal mixture".into()));
    };
    let comps = m
        .components
        .iter()
        .cloned()
        .map(SkewNormalComponent::new)
        .collect::<Result<Vec<_>>>()?;
    let shapes = comps
        .iter()
        .map(|c| GaussianParams::new(c.params.mu.clone(), c.params.sigma.clone()))
        .collect::<Result<Vec<_>>>()?;
    assemble(scn, &m.pi, &comps, &shapes)
}

pub fn generate(scn: &Scenario) -> Result<SimData> {
    match scn.family {
        Family::Gaussian => gen_gaussian_data(scn),
        Family::SkewNormal => gen_skewnormal_data(scn),
        Family::Experts => Err(WceError::InvalidConfig("simulation supports gaussian and skew-normal mixtures".into())),
    }
}

/// Minimum-cost assignment of rows to columns of a square cost matrix
/// (Hungarian algorithm); entry `r` of the result is the column given to row `r`.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square cost matrix");
    // potentials formulation with 1-based sentinels
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let cur = cost[(r0 - 1, col - 1)] - u[r0] - v[col];
                if cur < minv[col] {
                    minv[col] = cur;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for col in 1..=n {
        if owner[col] > 0 {
            assignment[owner[col] - 1] = col - 1;
        }
    }
    assignment
}

/// Accuracy of one fit against the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub mse_mu: f64,
    pub mse_sigma: f64,
    pub mse_pi: f64,
    pub mse_psi: Option<f64>,
    pub mise: f64,
    pub mce: f64,
    pub fdr: f64,
    /// Undefined when the sample has no outliers.
    pub pw: Option<f64>,
}

struct Flat<'a> {
    pi: &'a [f64],
    mu: Vec<&'a DVector<f64>>,
    sigma: Vec<&'a DMatrix<f64>>,
    psi: Option<Vec<&'a DVector<f64>>>,
}

fn flatten(params: &MixtureParams) -> Result<Flat<'_>> {
    match params {
        MixtureParams::Gaussian(m) => Ok(Flat {
            pi: &m.pi,
            mu: m.components.iter().map(|c| &c.mu).collect(),
            sigma: m.components.iter().map(|c| c.sigma.matrix()).collect(),
            psi: None,
        }),
        MixtureParams::SkewNormal(m) => Ok(Flat {
            pi: &m.pi,
            mu: m.components.iter().map(|c| &c.mu).collect(),
            sigma: m.components.iter().map(|c| c.sigma.matrix()).collect(),
            psi: Some(m.components.iter().map(|c| &c.psi).collect()),
        }),
        MixtureParams::Experts(_) => Err(WceError::InvalidConfig("metrics support gaussian and skew-normal mixtures".into())),
    }
}

/// Uniform points on `[-6,6]^2 x [-3,3]^{p-2}` and the region's volume.
fn mise_points(p: usize, count: usize, seed: u64) -> (DMatrix<f64>, f64) {
    let half: Vec<f64> = (0..p).map(|j| if j < 2 { 6.0 } else { 3.0 }).collect();
    let volume: f64 = half.iter().map(|h| 2.0 * h).product();
    let mut rng = rng_stream(seed, u64::MAX);
    let pts = DMatrix::from_fn(count, p, |_, j| rng.random_range(-half[j]..half[j]));
    (pts, volume)
}

/// Matches fitted components to true ones by `‖μ̂ − μ‖`; entry `j` is the
/// true component paired with fitted component `j`.
pub fn match_components(fitted: &MixtureParams, truth: &MixtureParams) -> Result<Vec<usize>> {
    let (f, t) = (flatten(fitted)?, flatten(truth)?);
    if f.mu.len() != t.mu.len() {
        return Err(WceError::ComponentMismatch { fitted: f.mu.len(), truth: t.mu.len() });
    }
    let k = f.mu.len();
    let cost = DMatrix::from_fn(k, k, |a, b| (f.mu[a] - t.mu[b]).norm());
    Ok(min_cost_assignment(&cost))
}

/// Parameter errors after label matching, integrated squared density error,
/// misclassification over true inliers, and outlier FDR / power.
pub fn compute_metrics(fit: &FitResult, truth: &MixtureParams, sim: &SimData, mc_points: usize, seed: u64) -> Result<MetricRecord> {
    if fit.params.family() != truth.family() {
        return Err(WceError::InvalidConfig("fitted and true families differ".into()));
    }
    let n = sim.data.nrows();
    if fit.labels.len() != n || fit.outlier_flags.len() != n {
        return Err(WceError::DimensionMismatch { expected: n, got: fit.labels.len() });
    }
    let matching = match_components(&fit.params, truth)?;
    let (f, t) = (flatten(&fit.params)?, flatten(truth)?);
    let mut mse_mu = 0.0;
    let mut mse_sigma = 0.0;
    let mut mse_pi = 0.0;
    let mut mse_psi = t.psi.as_ref().map(|_| 0.0);
    for (j, &k) in matching.iter().enumerate() {
        mse_mu += (f.mu[j] - t.mu[k]).norm_squared();
        mse_sigma += (f.sigma[j] - t.sigma[k]).norm_squared();
        mse_pi += (f.pi[j] - t.pi[k]).powi(2);
        if let (Some(acc), Some(fp), Some(tp)) = (mse_psi.as_mut(), f.psi.as_ref(), t.psi.as_ref()) {
            *acc += (fp[j] - tp[k]).norm_squared();
        }
    }
    let (pts, volume) = mise_points(sim.data.ncols(), mc_points, seed);
    let grid = Dataset::Points(pts);
    let lf = log_mixture_density(&grid, &fit.params)?;
    let lt = log_mixture_density(&grid, truth)?;
    let mise = volume * lf.iter().zip(&lt).map(|(a, b)| (a.exp() - b.exp()).powi(2)).sum::<f64>() / mc_points.max(1) as f64;
    let mut inliers = 0usize;
    let mut wrong = 0usize;
    for (i, truth_label) in sim.labels.iter().enumerate() {
        if let Some(k) = truth_label {
            inliers += 1;
            if matching[fit.labels[i]] != *k {
                wrong += 1;
            }
        }
    }
    let mce = if inliers == 0 { 0.0 } else { wrong as f64 / inliers as f64 };
    let flagged = fit.outlier_flags.iter().filter(|f| **f).count();
    let false_flags = fit.outlier_flags.iter().zip(&sim.outliers).filter(|(f, o)| **f && !**o).count();
    let hits = fit.outlier_flags.iter().zip(&sim.outliers).filter(|(f, o)| **f && **o).count();
    let n_out = sim.outliers.iter().filter(|o| **o).count();
    Ok(MetricRecord {
        mse_mu,
        mse_sigma,
        mse_pi,
        mse_psi,
        mise,
        mce,
        fdr: if flagged == 0 { 0.0 } else { false_flags as f64 / flagged as f64 },
        pw: (n_out > 0).then(|| hits as f64 / n_out as f64),
    })
}

/// A method compared in a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub name: String,
    pub family: Family,
    pub k: usize,
    pub config: FitConfig,
}

impl MethodConfig {
    pub fn new(name: impl Into<String>, family: Family, k: usize, config: FitConfig) -> Self {
        Self { name: name.into(), family, k, config }
    }
}

/// Outcome of one method on one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub method: String,
    pub metrics: Option<MetricRecord>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

/// Mean and Monte Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let se = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, se, count: values.len() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub successes: usize,
    pub failures: usize,
    pub mse_mu: Option<MeanSe>,
    pub mse_sigma: Option<MeanSe>,
    pub mse_pi: Option<MeanSe>,
    pub mse_psi: Option<MeanSe>,
    pub mise: Option<MeanSe>,
    pub mce: Option<MeanSe>,
    pub fdr: Option<MeanSe>,
    pub pw: Option<MeanSe>,
}

impl MethodSummary {
    fn from_records(method: &str, records: &[&ReplicationRecord]) -> Self {
        let ok: Vec<&MetricRecord> = records.iter().filter_map(|r| r.metrics.as_ref()).collect();
        let col = |f: &dyn Fn(&MetricRecord) -> Option<f64>| MeanSe::of(&ok.iter().filter_map(|m| f(m)).collect::<Vec<_>>());
        Self {
            method: method.to_string(),
            successes: ok.len(),
            failures: records.len() - ok.len(),
            mse_mu: col(&|m| Some(m.mse_mu)),
            mse_sigma: col(&|m| Some(m.mse_sigma)),
            mse_pi: col(&|m| Some(m.mse_pi)),
            mse_psi: col(&|m| m.mse_psi),
            mise: col(&|m| Some(m.mise)),
            mce: col(&|m| Some(m.mce)),
            fdr: col(&|m| Some(m.fdr)),
            pw: col(&|m| m.pw),
        }
    }
}

/// All replication records of a study plus per-method summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub scenario: Scenario,
    pub n_reps: usize,
    pub records: Vec<ReplicationRecord>,
    pub summaries: Vec<MethodSummary>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    replication: usize,
    seed: u64,
    method: &'a str,
    status: &'a str,
    mse_mu: Option<f64>,
    mse_sigma: Option<f64>,
    mse_pi: Option<f64>,
    mse_psi: Option<f64>,
    mise: Option<f64>,
    mce: Option<f64>,
    fdr: Option<f64>,
    pw: Option<f64>,
    iterations: Option<usize>,
    converged: Option<bool>,
    error: Option<&'a str>,
}

impl StudyReport {
    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// One CSV row per replication and method.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            let m = r.metrics.as_ref();
            w.serialize(CsvRow {
                replication: r.replication,
                seed: r.seed,
                method: &r.method,
                status: if m.is_some() { "ok" } else { "failed" },
                mse_mu: m.map(|m| m.mse_mu),
                mse_sigma: m.map(|m| m.mse_sigma),
                mse_pi: m.map(|m| m.mse_pi),
                mse_psi: m.and_then(|m| m.mse_psi),
                mise: m.map(|m| m.mise),
                mce: m.map(|m| m.mce),
                fdr: m.map(|m| m.fdr),
                pw: m.and_then(|m| m.pw),
                iterations: r.iterations,
                converged: r.converged,
                error: r.error.as_deref(),
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Scenario, replication count and per-method summaries as JSON.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "scenario": self.scenario,
            "n_reps": self.n_reps,
            "methods": self.summaries,
        })
    }
}

/// Callback receiving every successful fit of a study with its method and data.
pub type FitObserver<'a> = dyn Fn(&MethodConfig, &SimData, &FitResult) + Sync + 'a;

fn run_replication(
    scn: &Scenario,
    methods: &[MethodConfig],
    rep: usize,
    mc_points: usize,
    observer: Option<&FitObserver<'_>>,
) -> Vec<ReplicationRecord> {
    let seed = scn.seed.wrapping_add(rep as u64);
    let failed = |method: &str, e: String| ReplicationRecord {
        replication: rep,
        seed,
        method: method.to_string(),
        metrics: None,
        iterations: None,
        converged: None,
        error: Some(e),
    };
    let sim = match generate(&scn.with_seed(seed)) {
        Ok(s) => s,
        Err(e) => return methods.iter().map(|m| failed(&m.name, e.to_string())).collect(),
    };
    let data = sim.dataset();
    methods
        .iter()
        .map(|m| {
            let cfg = FitConfig { seed, ..m.config.clone() };
            let outcome = run_eee(m.family, &data, m.k, &cfg)
                .and_then(|fit| compute_metrics(&fit, &scn.true_params, &sim, mc_points, seed).map(|met| (fit, met)));
            match outcome {
                Ok((fit, metrics)) => {
                    if let Some(obs) = observer {
                        obs(m, &sim, &fit);
                    }
                    ReplicationRecord {
                        replication: rep,
                        seed,
                        method: m.name.clone(),
                        metrics: Some(metrics),
                        iterations: Some(fit.iterations),
                        converged: Some(fit.converged),
                        error: None,
                    }
                }
                Err(e) => failed(&m.name, e.to_string()),
            }
        })
        .collect()
}

/// Runs `n_reps` replications with seeds `scn.seed + r` on a pool of
/// `parallelism` threads. Results do not depend on `parallelism`.
pub fn run_study(scn: &Scenario, methods: &[MethodConfig], n_reps: usize, parallelism: usize) -> Result<StudyReport> {
    run_study_with_points(scn, methods, n_reps, parallelism, DEFAULT_MC_POINTS)
}

pub fn run_study_with_points(
    scn: &Scenario,
    methods: &[MethodConfig],
    n_reps: usize,
    parallelism: usize,
    mc_points: usize,
) -> Result<StudyReport> {
    run_study_observed(scn, methods, n_reps, parallelism, mc_points, None)
}

/// [`run_study_with_points`] that also hands every successful fit to `observer`,
/// possibly from several threads at once.
pub fn run_study_observed(
    scn: &Scenario,
    methods: &[MethodConfig],
    n_reps: usize,
    parallelism: usize,
    mc_points: usize,
    observer: Option<&FitObserver<'_>>,
) -> Result<StudyReport> {
    if n_reps == 0 {
        return Err(WceError::InvalidConfig("n_reps must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(WceError::InvalidConfig("at least one method is required".into()));
    }
    let mut names: Vec<&str> = methods.iter().map(|m| m.name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != methods.len() {
        return Err(WceError::InvalidConfig("method names must be unique".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| WceError::InvalidConfig(e.to_string()))?;
    let per_rep: Vec<Vec<ReplicationRecord>> =
        pool.install(|| (0..n_reps).into_par_iter().map(|r| run_replication(scn, methods, r, mc_points, observer)).collect());
    let records: Vec<ReplicationRecord> = per_rep.into_iter().flatten().collect();
    let summaries = methods
        .iter()
        .map(|m| {
            let rs: Vec<&ReplicationRecord> = records.iter().filter(|r| r.method == m.name).collect();
            MethodSummary::from_records(&m.name, &rs)
        })
        .collect();
    for r in records.iter().filter(|r| r.error.is_some()) {
        log::warn!("replication {} ({}) failed: {}", r.replication, r.method, r.error.as_deref().unwrap_or(""));
    }
    Ok(StudyReport { scenario: scn.clone(), n_reps, records, summaries })
}
