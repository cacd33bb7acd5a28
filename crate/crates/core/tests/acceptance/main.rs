//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Set `WCE_ACCEPTANCE=1,3,7` to run a subset.

mod oracle;
mod props;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use wce::distributions::{GaussianParams, SkewNormalParams, SpdMatrix};
use wce::gmm::gaussian_bias_terms;
use wce::inference::sandwich_covariance;
use wce::moe::moe_bias_terms;
use wce::select::select_model;
use wce::simbench::{generate, match_components, run_study_observed, MethodConfig, Scenario, StudyReport, DEFAULT_MC_POINTS};
use wce::snm::snm_latent_expectations;
use wce::wce::{
    fit_from, initialize, run_eee, Dataset, ExpertsMixture, Family, FitConfig, FitResult, GaussianMixture, InitStrategy,
    MixtureParams, RegressionData, SkewNormalMixture, DEFAULT_SEED,
};

use oracle::{Mvn, LN_2PI};
use props::PropertyLog;

struct Outcome {
    pass: bool,
    detail: String,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_vec(r: &mut ChaCha8Rng, p: usize) -> DVector<f64> {
    DVector::from_fn(p, |_, _| r.sample(StandardNormal))
}

fn spd(rows: &[&[f64]]) -> DMatrix<f64> {
    let p = rows.len();
    DMatrix::from_fn(p, p, |a, b| rows[a][b])
}

fn threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Largest `|mean| / se` over the columns of `draws`.
fn max_z(draws: &DMatrix<f64>) -> f64 {
    let n = draws.nrows() as f64;
    draws
        .column_iter()
        .map(|c| {
            let mean = c.sum() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            mean.abs() / (var / n).sqrt()
        })
        .fold(0.0, f64::max)
}

fn lower(m: &DMatrix<f64>) -> Vec<f64> {
    let p = m.nrows();
    (0..p).flat_map(|a| (0..=a).map(move |b| (a, b))).map(|(a, b)| m[(a, b)]).collect()
}

// ------------------------------------------------------------- criterion 1

fn tight(gamma: f64) -> FitConfig {
    FitConfig { gamma, tol: 1e-13, max_iter: 50_000, eigen_ratio_c: None, n_starts: 1, ..FitConfig::default() }
}

fn gmm_data(n: usize, seed: u64) -> DMatrix<f64> {
    let truth = GaussianMixture::new(
        vec![0.4, 0.6],
        vec![
            GaussianParams::new(DVector::from_vec(vec![0.0, 0.0]), SpdMatrix::new(spd(&[&[1.0, 0.3], &[0.3, 0.8]])).unwrap()).unwrap(),
            GaussianParams::new(DVector::from_vec(vec![3.0, 2.0]), SpdMatrix::new(spd(&[&[1.2, -0.4], &[-0.4, 1.0]])).unwrap()).unwrap(),
        ],
    )
    .unwrap();
    generate(&Scenario::custom(truth.into(), 0.0, n, seed).unwrap()).unwrap().data
}

fn snm_truth() -> SkewNormalMixture {
    SkewNormalMixture::new(
        vec![0.4, 0.6],
        vec![
            SkewNormalParams::new(
                DVector::from_vec(vec![2.0, 2.0]),
                DVector::from_vec(vec![1.5, 1.0]),
                SpdMatrix::new(spd(&[&[1.0, 0.3], &[0.3, 1.0]])).unwrap(),
            )
            .unwrap(),
            SkewNormalParams::new(
                DVector::from_vec(vec![-2.0, -1.0]),
                DVector::from_vec(vec![-1.0, 1.5]),
                SpdMatrix::new(spd(&[&[0.8, -0.2], &[-0.2, 1.2]])).unwrap(),
            )
            .unwrap(),
        ],
    )
    .unwrap()
}

struct MoeTruth {
    beta: [[f64; 2]; 2],
    sigma2: [f64; 2],
    eta: [f64; 2],
}

const MOE_TRUTH: MoeTruth = MoeTruth { beta: [[1.0, 2.0], [-1.0, -1.5]], sigma2: [0.3, 0.5], eta: [0.3, 0.8] };

fn moe_data(n: usize, seed: u64) -> RegressionData {
    let mut r = rng(seed);
    let mut x = DMatrix::zeros(n, 2);
    let mut y = DVector::zeros(n);
    let eta = [DVector::from_vec(MOE_TRUTH.eta.to_vec())];
    for i in 0..n {
        let xi = DVector::from_vec(vec![1.0, r.random_range(-2.0..2.0)]);
        let g = oracle::gating(&xi, &eta);
        let k = usize::from(r.random::<f64>() >= g[0]);
        let mean = MOE_TRUTH.beta[k][0] + MOE_TRUTH.beta[k][1] * xi[1];
        let e: f64 = r.sample(StandardNormal);
        x.set_row(i, &xi.transpose());
        y[i] = mean + MOE_TRUTH.sigma2[k].sqrt() * e;
    }
    RegressionData::new(x, y).unwrap()
}

fn criterion_1(log: &PropertyLog) -> Outcome {
    let seed = DEFAULT_SEED;
    let mut diffs = Vec::new();
    let mut lib_time = Duration::ZERO;

    // Gaussian
    let y = gmm_data(200, seed);
    let data = Dataset::Points(y.clone());
    let t = Instant::now();
    let init = initialize(Family::Gaussian, &data, 2, InitStrategy::Auto, seed).unwrap();
    lib_time += t.elapsed();
    let MixtureParams::Gaussian(g0) = &init else { unreachable!() };
    let oracle_init = oracle::Gmm {
        pi: g0.pi.clone(),
        mu: g0.components.iter().map(|c| c.mu.clone()).collect(),
        sigma: g0.components.iter().map(|c| c.sigma.matrix().clone()).collect(),
    };
    let t = Instant::now();
    let fit = fit_from(&data, init, &tight(0.0)).unwrap();
    lib_time += t.elapsed();
    log.check("criterion 1 gaussian", &fit, &data, None);
    let (em, _) = oracle::gmm_em(&y, oracle_init, 1e-13, 50_000);
    let MixtureParams::Gaussian(g) = &fit.params else { unreachable!() };
    let lib = oracle::Gmm {
        pi: g.pi.clone(),
        mu: g.components.iter().map(|c| c.mu.clone()).collect(),
        sigma: g.components.iter().map(|c| c.sigma.matrix().clone()).collect(),
    };
    diffs.push(("gaussian", max_diff(&lib.flat(), &em.flat()), fit.converged));

    // Experts
    let reg = moe_data(200, seed);
    let data = Dataset::Regression(reg.clone());
    let t = Instant::now();
    let init = initialize(Family::Experts, &data, 2, InitStrategy::Auto, seed).unwrap();
    lib_time += t.elapsed();
    let MixtureParams::Experts(e0) = &init else { unreachable!() };
    let to_oracle = |m: &ExpertsMixture| oracle::Moe {
        beta: m.components.iter().map(|c| c.beta.clone()).collect(),
        sigma2: m.components.iter().map(|c| c.sigma2).collect(),
        eta: m.components.iter().filter(|c| !c.eta.is_empty()).map(|c| c.eta.clone()).collect(),
    };
    let oracle_init = to_oracle(e0);
    let t = Instant::now();
    let fit = fit_from(&data, init, &tight(0.0)).unwrap();
    lib_time += t.elapsed();
    log.check("criterion 1 experts", &fit, &data, None);
    let (em, _) = oracle::moe_em(&reg.x, &reg.y, oracle_init, 1e-13, 50_000);
    let MixtureParams::Experts(e) = &fit.params else { unreachable!() };
    diffs.push(("experts", max_diff(&to_oracle(e).flat(), &em.flat()), fit.converged));

    // Skew normal
    let y = generate(&Scenario::custom(snm_truth().into(), 0.0, 200, seed).unwrap()).unwrap().data;
    let data = Dataset::Points(y.clone());
    let t = Instant::now();
    let init = initialize(Family::SkewNormal, &data, 2, InitStrategy::Auto, seed).unwrap();
    lib_time += t.elapsed();
    let to_oracle = |m: &SkewNormalMixture| oracle::Snm {
        pi: m.pi.clone(),
        mu: m.components.iter().map(|c| c.mu.clone()).collect(),
        psi: m.components.iter().map(|c| c.psi.clone()).collect(),
        sigma: m.components.iter().map(|c| c.sigma.matrix().clone()).collect(),
    };
    let MixtureParams::SkewNormal(s0) = &init else { unreachable!() };
    let oracle_init = to_oracle(s0);
    let t = Instant::now();
    let fit = fit_from(&data, init, &tight(0.0)).unwrap();
    lib_time += t.elapsed();
    log.check("criterion 1 skew-normal", &fit, &data, None);
    let (em, _) = oracle::snm_em(&y, oracle_init, 1e-13, 50_000);
    let MixtureParams::SkewNormal(s) = &fit.params else { unreachable!() };
    diffs.push(("skew-normal", max_diff(&to_oracle(s).flat(), &em.flat()), fit.converged));

    let pass = diffs.iter().all(|(_, d, conv)| *d < 1e-6 && *conv) && lib_time < Duration::from_secs(5);
    let detail = diffs.iter().map(|(n, d, _)| format!("{n} {d:.1e}")).collect::<Vec<_>>().join(", ");
    Outcome { pass, detail: format!("max |WCE(0) - EM| {detail} (limit 1e-6); library fits {:.2} s (limit 5 s)", lib_time.as_secs_f64()) }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ------------------------------------------------------------- criterion 2

const SCORE_DRAWS: usize = 100_000;

/// Complete-data Gaussian mixture scores with `z` drawn alongside `y`.
fn gaussian_scores(gamma: f64, seed: u64) -> DMatrix<f64> {
    let pi = [0.4, 0.6];
    let comps = [
        Mvn::new(DVector::from_vec(vec![0.0, 0.0]), &spd(&[&[1.0, 0.3], &[0.3, 0.8]])),
        Mvn::new(DVector::from_vec(vec![3.0, 1.0]), &spd(&[&[1.5, -0.4], &[-0.4, 1.0]])),
    ];
    let sigmas: Vec<SpdMatrix> = [spd(&[&[1.0, 0.3], &[0.3, 0.8]]), spd(&[&[1.5, -0.4], &[-0.4, 1.0]])]
        .into_iter()
        .map(|m| SpdMatrix::new(m).unwrap())
        .collect();
    let bias: Vec<_> = sigmas.iter().map(|s| gaussian_bias_terms(s, gamma, 2).unwrap()).collect();
    let inv: Vec<DMatrix<f64>> = comps.iter().map(Mvn::inverse).collect();
    let d = 1 + 2 * (2 + 3);
    let mut r = rng(seed);
    let mut out = DMatrix::zeros(SCORE_DRAWS, d);
    for i in 0..SCORE_DRAWS {
        let k = usize::from(r.random::<f64>() >= pi[0]);
        let y = &comps[k].mu + comps[k].l() * normal_vec(&mut r, 2);
        let w = (gamma * comps[k].logpdf(&y)).exp();
        let sign = if k == 0 { 1.0 } else { -1.0 };
        out[(i, 0)] = sign * w / (pi[k] * bias[k].b);
        let res = &y - &comps[k].mu;
        let base = 1 + k * 5;
        let score_mu = &inv[k] * &res * w;
        let score_sigma = (-&inv[k] + &inv[k] * &res * res.transpose() * &inv[k]) * (0.5 * w) - &inv[k] * bias[k].c2_scale;
        for a in 0..2 {
            out[(i, base + a)] = score_mu[a];
        }
        for (j, v) in lower(&score_sigma).into_iter().enumerate() {
            out[(i, base + 2 + j)] = v;
        }
    }
    out
}

fn experts_scores(gamma: f64, seed: u64) -> DMatrix<f64> {
    let eta = [DVector::from_vec(MOE_TRUTH.eta.to_vec())];
    let bias: Vec<(f64, f64)> = MOE_TRUTH.sigma2.iter().map(|s| moe_bias_terms(*s, gamma)).collect();
    let d = 2 + 2 * 3;
    let mut r = rng(seed);
    let mut out = DMatrix::zeros(SCORE_DRAWS, d);
    for i in 0..SCORE_DRAWS {
        let x = DVector::from_vec(vec![1.0, r.random_range(-2.0..2.0)]);
        let g = oracle::gating(&x, &eta);
        let k = usize::from(r.random::<f64>() >= g[0]);
        let s2 = MOE_TRUTH.sigma2[k];
        let e: f64 = r.sample(StandardNormal);
        let res = s2.sqrt() * e;
        let w = (gamma * (-0.5 * (LN_2PI + s2.ln() + res * res / s2))).exp();
        let indicator = if k == 0 { 1.0 } else { 0.0 };
        for a in 0..2 {
            out[(i, a)] = w / bias[k].0 * x[a] * (indicator - g[0]);
        }
        let base = 2 + k * 3;
        for a in 0..2 {
            out[(i, base + a)] = w * res * x[a] / s2;
        }
        out[(i, base + 2)] = w * (-0.5 / s2 + res * res / (2.0 * s2 * s2)) - bias[k].1;
    }
    out
}

/// Complete-data skew-normal scores given `(z, v)`; the weight is the power
/// of the conditional Gaussian density of `y` given `v`.
fn skew_normal_scores(gamma: f64, seed: u64) -> DMatrix<f64> {
    let truth = snm_truth();
    let p = 2;
    let comps: Vec<Mvn> = truth.components.iter().map(|c| Mvn::new(DVector::zeros(p), c.sigma.matrix())).collect();
    let bias: Vec<_> = truth.components.iter().map(|c| gaussian_bias_terms(&c.sigma, gamma, p).unwrap()).collect();
    let d = 1 + 2 * (2 * p + 3);
    let mut r = rng(seed);
    let mut out = DMatrix::zeros(SCORE_DRAWS, d);
    for i in 0..SCORE_DRAWS {
        let k = usize::from(r.random::<f64>() >= truth.pi[0]);
        let c = &truth.components[k];
        let z: f64 = r.sample(StandardNormal);
        let v = z.abs();
        let eps = comps[k].l() * normal_vec(&mut r, p);
        let y = &c.mu + &c.psi * v + &eps;
        let res = &y - &c.mu - &c.psi * v;
        let w = (gamma * (comps[k].log_norm_const() - 0.5 * comps[k].quad(&res))).exp();
        let sign = if k == 0 { 1.0 } else { -1.0 };
        out[(i, 0)] = sign * w / (truth.pi[k] * bias[k].b);
        let base = 1 + k * (2 * p + 3);
        for a in 0..p {
            out[(i, base + a)] = w * res[a];
            out[(i, base + p + a)] = v * w * res[a];
        }
        let s = c.sigma.matrix();
        let m = (s - &res * res.transpose()) * w - s * bias[k].g;
        for (j, val) in lower(&m).into_iter().enumerate() {
            out[(i, base + 2 * p + j)] = val;
        }
    }
    out
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst: Vec<String> = Vec::new();
    let mut pass = true;
    for (gi, gamma) in [0.2, 0.5].into_iter().enumerate() {
        let seed = DEFAULT_SEED + 100 * gi as u64;
        for (name, draws) in [
            ("gaussian", gaussian_scores(gamma, seed)),
            ("experts", experts_scores(gamma, seed + 1)),
            ("skew-normal", skew_normal_scores(gamma, seed + 2)),
        ] {
            let z = max_z(&draws);
            pass &= z <= 3.0;
            worst.push(format!("{name}@{gamma} {z:.2}"));
        }
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(30);
    Outcome {
        pass,
        detail: format!("max |mean|/SE over coordinates: {} (limit 3); {:.1} s (limit 30 s)", worst.join(", "), elapsed.as_secs_f64()),
    }
}

// ------------------------------------------------------------- criterion 3

/// `E[h(|Z|²)]` for `Z ~ N(0, I_p)` by quadrature over the radius.
fn radial_expectation(p: usize, h: impl Fn(f64) -> f64) -> f64 {
    let pf = p as f64;
    let log_c = -(0.5 * pf - 1.0) * std::f64::consts::LN_2 - ln_gamma(0.5 * pf);
    oracle::simpson(
        |s| {
            if s == 0.0 && p > 1 {
                return 0.0;
            }
            (log_c + (pf - 1.0) * s.ln() - 0.5 * s * s).exp() * h(s * s)
        },
        0.0,
        40.0,
        40_000,
    )
}

fn random_spd(p: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let a = DMatrix::from_fn(p, p, |_, _| 0.6 * r.sample::<f64, _>(StandardNormal));
    &a * a.transpose() + DMatrix::identity(p, p) * 0.5
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut note = |rel: f64, what: String| {
        if rel > worst {
            worst = rel;
            worst_at = what;
        }
    };
    for p in [1usize, 2, 5] {
        let sigma = random_spd(p, DEFAULT_SEED + p as u64);
        let det = sigma.determinant();
        let spd_sigma = SpdMatrix::new(sigma.clone()).unwrap();
        for gamma in [0.2, 0.3, 0.5] {
            let t = gaussian_bias_terms(&spd_sigma, gamma, p).unwrap();
            // f(y)^γ = (2π)^{-pγ/2} |Σ|^{-γ/2} exp(-γ d²/2) with d² ~ χ²_p under f.
            let scale = (2.0 * std::f64::consts::PI).powf(-(p as f64) * gamma / 2.0) * det.powf(-gamma / 2.0);
            let b = scale * radial_expectation(p, |t2| (-gamma * t2 / 2.0).exp());
            // Σ-equation bias: E[w (Σ - rr')] = g Σ, traced against Σ⁻¹.
            let g = scale * radial_expectation(p, |t2| (-gamma * t2 / 2.0).exp() * (p as f64 - t2)) / p as f64;
            // C for Σ: E[w ∇_Σ log f] = c Σ⁻¹, traced against Σ.
            let c2 = scale * radial_expectation(p, |t2| (-gamma * t2 / 2.0).exp() * (t2 - p as f64) / 2.0) / p as f64;
            note(((t.b - b) / b).abs(), format!("B p={p} γ={gamma}"));
            note(((t.g - g) / g).abs(), format!("g p={p} γ={gamma}"));
            note(((t.c2_scale - c2) / c2).abs(), format!("C2 p={p} γ={gamma}"));
        }
    }
    for sigma2 in [0.5, 1.0, 3.0] {
        for gamma in [0.2, 0.3, 0.5] {
            let (b, c2) = moe_bias_terms(sigma2, gamma);
            let sd = sigma2.sqrt();
            let dens = |r: f64| (-0.5 * (LN_2PI + sigma2.ln() + r * r / sigma2)).exp();
            let qb = oracle::simpson(|r| dens(r).powf(1.0 + gamma), -15.0 * sd, 15.0 * sd, 20_000);
            let qc = oracle::simpson(
                |r| dens(r).powf(1.0 + gamma) * (-0.5 / sigma2 + r * r / (2.0 * sigma2 * sigma2)),
                -15.0 * sd,
                15.0 * sd,
                20_000,
            );
            note(((b - qb) / qb).abs(), format!("experts B σ²={sigma2} γ={gamma}"));
            note(((c2 - qc) / qc).abs(), format!("experts C2 σ²={sigma2} γ={gamma}"));
        }
    }
    Outcome { pass: worst < 0.01, detail: format!("max relative error {worst:.2e} at {worst_at} (limit 1e-2)") }
}

// ------------------------------------------------- study-based criteria

fn observed_study(log: &PropertyLog, scn: &Scenario, methods: &[MethodConfig], reps: usize) -> StudyReport {
    let observer = |m: &MethodConfig, sim: &wce::simbench::SimData, fit: &FitResult| {
        log.check(&format!("{} seed {}", m.name, sim_seed(sim)), fit, &sim.dataset(), m.config.eigen_ratio_c);
    };
    run_study_observed(scn, methods, reps, threads(), DEFAULT_MC_POINTS, Some(&observer)).expect("study runs")
}

fn sim_seed(sim: &wce::simbench::SimData) -> String {
    format!("n={}", sim.data.nrows())
}

fn mean_of(report: &StudyReport, method: &str, pick: impl Fn(&wce::simbench::MethodSummary) -> Option<wce::simbench::MeanSe>) -> f64 {
    report.summary(method).and_then(pick).map_or(f64::NAN, |m| m.mean)
}

fn failures(report: &StudyReport) -> usize {
    report.summaries.iter().map(|s| s.failures).sum()
}

fn criterion_4(log: &PropertyLog) -> Outcome {
    let start = Instant::now();
    let scn = Scenario::gaussian(2.0, 0.06, 2, 500, DEFAULT_SEED).unwrap();
    let methods = [
        MethodConfig::new("em", Family::Gaussian, 3, FitConfig::with_gamma(0.0)),
        MethodConfig::new("wce", Family::Gaussian, 3, FitConfig::with_gamma(0.3)),
    ];
    let rep = observed_study(log, &scn, &methods, 100);
    let em = 100.0 * mean_of(&rep, "em", |s| s.mse_mu);
    let wce = 100.0 * mean_of(&rep, "wce", |s| s.mse_mu);
    let mce = mean_of(&rep, "wce", |s| s.mce);
    let elapsed = start.elapsed();
    let pass = em > 100.0 && wce < 20.0 && mce < 0.07 && elapsed < Duration::from_secs(600) && failures(&rep) == 0;
    Outcome {
        pass,
        detail: format!(
            "MSE(mu)x100 EM {em:.2} (need > 100), WCE(0.3) {wce:.2} (need < 20); WCE MCE {:.2}% (need < 7%); failed fits {}; {:.0} s (limit 600 s)",
            100.0 * mce,
            failures(&rep),
            elapsed.as_secs_f64()
        ),
    }
}

fn criterion_5(log: &PropertyLog) -> Outcome {
    let scn = Scenario::gaussian(3.0, 0.06, 2, 500, DEFAULT_SEED + 5_000).unwrap();
    let methods = [MethodConfig::new("wce", Family::Gaussian, 3, FitConfig::with_gamma(0.3))];
    let rep = observed_study(log, &scn, &methods, 100);
    let pw = mean_of(&rep, "wce", |s| s.pw);
    let fdr = mean_of(&rep, "wce", |s| s.fdr);
    Outcome {
        pass: pw > 0.8 && fdr < 0.25 && failures(&rep) == 0,
        detail: format!("power {:.1}% (need > 80%), FDR {:.1}% (need < 25%); failed fits {}", 100.0 * pw, 100.0 * fdr, failures(&rep)),
    }
}

fn criterion_6(log: &PropertyLog) -> Outcome {
    let reps = 30;
    let base = Scenario::gaussian(3.0, 0.0, 2, 500, DEFAULT_SEED + 6_000).unwrap();
    let cfg = FitConfig::with_gamma(0.2);
    let mut hits = 0;
    let mut picked = Vec::new();
    for r in 0..reps {
        let seed = base.seed + r as u64;
        let sim = generate(&base.with_seed(seed)).unwrap();
        let data = sim.dataset();
        let sel = select_model(&data, Family::Gaussian, &[2, 3, 4, 5, 6], &[0.2], &FitConfig { seed, ..cfg.clone() }).unwrap();
        log.check(&format!("criterion 6 rep {r}"), &sel.fit, &data, cfg.eigen_ratio_c);
        hits += usize::from(sel.best_k == 3);
        picked.push(sel.best_k);
    }
    let needed = (0.85 * reps as f64).ceil() as usize;
    Outcome { pass: hits >= needed, detail: format!("K=3 chosen in {hits}/{reps} (need >= {needed}); choices {picked:?}") }
}

// ------------------------------------------------------------- criterion 7

const LATENT_DRAWS: usize = 1_000_000;


fn criterion_7() -> Outcome {
    let mut r = rng(DEFAULT_SEED + 7);
    let mut mc = rng(DEFAULT_SEED + 70);
    let mut max_z: f64 = 0.0;
    let mut u_exact = true;
    for case in 0..20 {
        let p = 1 + case % 3;
        let mu = normal_vec(&mut r, p);
        let psi = normal_vec(&mut r, p) * 1.5;
        let a = DMatrix::from_fn(p, p, |_, _| 0.5 * r.sample::<f64, _>(StandardNormal));
        let sigma = &a * a.transpose() + DMatrix::identity(p, p) * 0.5;
        let gamma = r.random_range(0.1..0.8);
        let mvn = Mvn::new(DVector::zeros(p), &sigma);
        let v0: f64 = r.sample::<f64, _>(StandardNormal).abs();
        let y = &mu + &psi * v0 + mvn.l() * normal_vec(&mut r, p);
        let params = SkewNormalParams::new(mu.clone(), psi.clone(), SpdMatrix::new(sigma.clone()).unwrap()).unwrap();
        let lib = snm_latent_expectations(&y, &params, gamma).unwrap();
        u_exact &= snm_latent_expectations(&y, &params, 0.0).unwrap().u_big == 1.0;

        // Conditional posterior of v given y: N+(δ, τ²).
        let sinv = sigma.clone().try_inverse().unwrap();
        let a_ = psi.dot(&(&sinv * &psi));
        let tau2 = 1.0 / (a_ + 1.0);
        let delta = tau2 * psi.dot(&(&sinv * (&y - &mu)));
        let tau = tau2.sqrt();
        let q0 = (oracle::log_cdf(delta / tau)).exp();
        let mut sums = [[0.0f64; 2]; 3];
        for _ in 0..LATENT_DRAWS {
            let u: f64 = 1.0 - mc.random::<f64>();
            let v = (delta - tau * oracle::inv_cdf(q0 * u)).max(0.0);
            let res = &y - &mu - &psi * v;
            let w = (gamma * (mvn.log_norm_const() - 0.5 * mvn.quad(&res))).exp();
            for (j, s) in sums.iter_mut().enumerate() {
                let val = w * v.powi(j as i32);
                s[0] += val;
                s[1] += val * val;
            }
        }
        let n = LATENT_DRAWS as f64;
        for (j, lib_v) in [lib.v0, lib.v1, lib.v2].into_iter().enumerate() {
            let mean = sums[j][0] / n;
            let var = (sums[j][1] / n - mean * mean) * n / (n - 1.0);
            let z = (lib_v - mean).abs() / (var / n).sqrt();
            max_z = max_z.max(z);
        }
    }
    Outcome {
        pass: max_z <= 3.0 && u_exact,
        detail: format!("max |analytic - MC|/SE over 20 cases x 3 moments {max_z:.2} (limit 3); gamma=0 gives U=1 exactly: {u_exact}"),
    }
}

// ------------------------------------------------------------- criterion 8

fn criterion_8(log: &PropertyLog) -> Outcome {
    let start = Instant::now();
    let scn = Scenario::skew_normal(2.0, 0.09, 2, 500, DEFAULT_SEED + 8_000).unwrap();
    let methods = [
        MethodConfig::new("em", Family::SkewNormal, 2, FitConfig::with_gamma(0.0)),
        MethodConfig::new("wce", Family::SkewNormal, 2, FitConfig::with_gamma(0.2)),
    ];
    let rep = observed_study(log, &scn, &methods, 50);
    let em = mean_of(&rep, "em", |s| s.mse_sigma);
    let wce = mean_of(&rep, "wce", |s| s.mse_sigma);
    let ratio = em / wce;
    Outcome {
        pass: ratio >= 5.0 && failures(&rep) == 0,
        detail: format!(
            "MSE(Sigma) EM {em:.3}, WCE(0.2) {wce:.3}, ratio {ratio:.2} (need >= 5); failed fits {}; {:.0} s",
            failures(&rep),
            start.elapsed().as_secs_f64()
        ),
    }
}

// ------------------------------------------------------------- criterion 9

fn criterion_9(log: &PropertyLog) -> Outcome {
    // Single Gaussian, maximum likelihood.
    let n = 2000;
    let mut r = rng(DEFAULT_SEED + 9);
    let y = DMatrix::from_fn(n, 1, |_, _| 1.0 + 2.0 * r.sample::<f64, _>(StandardNormal));
    let data = Dataset::Points(y);
    let fit = run_eee(Family::Gaussian, &data, 1, &FitConfig::with_gamma(0.0)).unwrap();
    log.check("criterion 9 single gaussian", &fit, &data, FitConfig::default().eigen_ratio_c);
    let se = sandwich_covariance(&fit, &data).unwrap();
    let MixtureParams::Gaussian(g) = &fit.params else { unreachable!() };
    let fisher = (g.components[0].sigma.matrix()[(0, 0)] / n as f64).sqrt();
    let ratio = se.std_error("mu[0][0]").unwrap() / fisher;

    // Coverage for a two-component mixture.
    let truth: MixtureParams = GaussianMixture::new(
        vec![0.4, 0.6],
        vec![
            GaussianParams::new(DVector::from_element(1, -2.0), SpdMatrix::new(DMatrix::from_element(1, 1, 1.0)).unwrap()).unwrap(),
            GaussianParams::new(DVector::from_element(1, 2.0), SpdMatrix::new(DMatrix::from_element(1, 1, 1.5)).unwrap()).unwrap(),
        ],
    )
    .unwrap()
    .into();
    let MixtureParams::Gaussian(tg) = &truth else { unreachable!() };
    let scn = Scenario::custom(truth.clone(), 0.0, 500, DEFAULT_SEED + 9_000).unwrap();
    let mut covered = [0usize; 2];
    let mut errors = 0;
    for rep in 0..100 {
        let seed = scn.seed + rep;
        let sim = generate(&scn.with_seed(seed)).unwrap();
        let data = sim.dataset();
        let cfg = FitConfig { seed, ..FitConfig::with_gamma(0.2) };
        let Ok(fit) = run_eee(Family::Gaussian, &data, 2, &cfg) else {
            errors += 1;
            continue;
        };
        log.check(&format!("criterion 9 rep {rep}"), &fit, &data, cfg.eigen_ratio_c);
        let Ok(est) = sandwich_covariance(&fit, &data) else {
            errors += 1;
            continue;
        };
        let matching = match_components(&fit.params, &truth).unwrap();
        let MixtureParams::Gaussian(fg) = &fit.params else { unreachable!() };
        for (j, &k) in matching.iter().enumerate() {
            let s = est.std_error(&format!("mu[{j}][0]")).unwrap();
            if (fg.components[j].mu[0] - tg.components[k].mu[0]).abs() <= 1.959_964 * s {
                covered[k] += 1;
            }
        }
    }
    let pass = (ratio - 1.0).abs() < 0.15 && covered.iter().all(|c| *c >= 88) && errors == 0;
    Outcome {
        pass,
        detail: format!(
            "SE(mu)/(sigma/sqrt n) = {ratio:.3} (need within 15%); 95% coverage mu1 {}/100, mu2 {}/100 (need >= 88); failures {errors}",
            covered[0], covered[1]
        ),
    }
}

// ------------------------------------------------------------------ main

fn selected() -> Option<Vec<usize>> {
    std::env::var("WCE_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
}

fn main() {
    // `cargo test -- --list` and filters come through as arguments; only run
    // when invoked plainly or with an exact-match filter on this target.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let only = selected();
    let wanted = |c: usize| only.as_ref().is_none_or(|v| v.contains(&c));
    let log = PropertyLog::default();
    let names = [
        "gamma=0 equivalence with classical EM",
        "unbiased weighted complete estimating equations",
        "analytic bias terms versus numeric integration",
        "robustness pattern, Gaussian study",
        "outlier detection power and FDR",
        "trimmed BIC model selection",
        "skew-normal latent moments versus Monte Carlo",
        "robustness pattern, skew-normal study",
        "sandwich standard errors and coverage",
        "property suites across acceptance fits",
    ];
    let mut failed = Vec::new();
    for (idx, name) in names.iter().enumerate() {
        let c = idx + 1;
        if !wanted(c) {
            println!("criterion {c:>2} SKIP {name}");
            continue;
        }
        let start = Instant::now();
        let out = match c {
            1 => criterion_1(&log),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(&log),
            5 => criterion_5(&log),
            6 => criterion_6(&log),
            7 => criterion_7(),
            8 => criterion_8(&log),
            9 => criterion_9(&log),
            10 => Outcome {
                pass: log.fits() > 0 && log.violations() == 0,
                detail: format!("{} fits checked: {}", log.fits(), log.summary()),
            },
            _ => unreachable!(),
        };
        let tag = if out.pass { "PASS" } else { "FAIL" };
        println!("criterion {c:>2} {tag} {name}: {} [{:.1} s]", out.detail, start.elapsed().as_secs_f64());
        if !out.pass {
            failed.push(c);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
