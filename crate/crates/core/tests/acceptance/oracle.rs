//! Reference implementations written independently of the library: densities,
//! truncated-normal moments and classical (unweighted) EM for the three
//! mixture families.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use statrs::function::erf::erfc;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Multivariate normal with a cached factorization.
pub struct Mvn {
    pub mu: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl Mvn {
    pub fn new(mu: DVector<f64>, sigma: &DMatrix<f64>) -> Self {
        let chol = Cholesky::new(sigma.clone()).expect("covariance must be positive definite");
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Self { mu, chol, log_det }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `(y - m)' Σ⁻¹ (y - m)` for an arbitrary centre `m`.
    pub fn quad(&self, r: &DVector<f64>) -> f64 {
        let z = self.chol.l().solve_lower_triangular(r).expect("triangular solve");
        z.norm_squared()
    }

    pub fn log_norm_const(&self) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det)
    }

    pub fn logpdf(&self, y: &DVector<f64>) -> f64 {
        self.log_norm_const() - 0.5 * self.quad(&(y - &self.mu))
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

pub fn std_normal() -> Normal {
    Normal::standard()
}

/// `log Φ(x)` through the complementary error function, accurate in the left tail.
pub fn log_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
}

pub fn inv_cdf(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// `φ(a) / Φ(a)`.
pub fn mills(a: f64) -> f64 {
    (std_normal().ln_pdf(a) - log_cdf(a)).exp()
}

/// First two raw moments of `N(m, t²)` truncated to `(0, ∞)`.
pub fn half_moments(m: f64, t: f64) -> (f64, f64) {
    let lam = mills(m / t);
    (m + t * lam, m * m + t * t + m * t * lam)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn posterior(log_joint: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = log_joint.shape();
    let mut u = DMatrix::zeros(n, k);
    for i in 0..n {
        let row: Vec<f64> = (0..k).map(|j| log_joint[(i, j)]).collect();
        let lse = log_sum_exp(&row);
        for j in 0..k {
            u[(i, j)] = (row[j] - lse).exp();
        }
    }
    u
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- Gaussian

#[derive(Clone, Debug)]
pub struct Gmm {
    pub pi: Vec<f64>,
    pub mu: Vec<DVector<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
}

impl Gmm {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.pi.clone();
        for (m, s) in self.mu.iter().zip(&self.sigma) {
            out.extend(m.iter());
            out.extend(s.iter());
        }
        out
    }

    fn step(&self, y: &DMatrix<f64>) -> Gmm {
        let (n, p) = y.shape();
        let k = self.pi.len();
        let comps: Vec<Mvn> = (0..k).map(|j| Mvn::new(self.mu[j].clone(), &self.sigma[j])).collect();
        let lj = DMatrix::from_fn(n, k, |i, j| self.pi[j].ln() + comps[j].logpdf(&y.row(i).transpose()));
        let u = posterior(&lj);
        let mut next = Gmm { pi: vec![], mu: vec![], sigma: vec![] };
        for j in 0..k {
            let nk: f64 = u.column(j).sum();
            let mut mu = DVector::zeros(p);
            for i in 0..n {
                mu += y.row(i).transpose() * u[(i, j)];
            }
            mu /= nk;
            let mut s = DMatrix::zeros(p, p);
            for i in 0..n {
                let r = y.row(i).transpose() - &mu;
                s += &r * r.transpose() * u[(i, j)];
            }
            next.pi.push(nk / n as f64);
            next.mu.push(mu);
            next.sigma.push(s / nk);
        }
        next
    }
}

/// Classical EM iterated until the largest coordinate change is below `tol`.
pub fn gmm_em(y: &DMatrix<f64>, init: Gmm, tol: f64, max_iter: usize) -> (Gmm, usize) {
    let mut cur = init;
    for it in 1..=max_iter {
        let next = cur.step(y);
        let change = max_abs_diff(&cur.flat(), &next.flat());
        cur = next;
        if change < tol {
            return (cur, it);
        }
    }
    (cur, max_iter)
}

// --------------------------------------------------------------- experts

#[derive(Clone, Debug)]
pub struct Moe {
    pub beta: Vec<DVector<f64>>,
    pub sigma2: Vec<f64>,
    /// Gating vectors of the first `K - 1` components; the last is zero.
    pub eta: Vec<DVector<f64>>,
}

impl Moe {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for e in &self.eta {
            out.extend(e.iter());
        }
        for (b, s) in self.beta.iter().zip(&self.sigma2) {
            out.extend(b.iter());
            out.push(*s);
        }
        out
    }
}

/// Softmax gating probabilities with a zero score for the last component.
pub fn gating(x: &DVector<f64>, eta: &[DVector<f64>]) -> Vec<f64> {
    let mut scores: Vec<f64> = eta.iter().map(|e| e.dot(x)).collect();
    scores.push(0.0);
    let lse = log_sum_exp(&scores);
    scores.into_iter().map(|s| (s - lse).exp()).collect()
}

fn gating_objective(x: &DMatrix<f64>, u: &DMatrix<f64>, eta: &[DVector<f64>]) -> f64 {
    (0..x.nrows())
        .map(|i| {
            let g = gating(&x.row(i).transpose(), eta);
            (0..g.len()).map(|j| u[(i, j)] * g[j].ln()).sum::<f64>()
        })
        .sum()
}

/// Multinomial logistic regression with fractional targets `u` by Newton's method.
pub fn fit_gating(x: &DMatrix<f64>, u: &DMatrix<f64>, start: &[DVector<f64>], tol: f64) -> Vec<DVector<f64>> {
    let (n, q) = x.shape();
    let k = u.ncols();
    let d = (k - 1) * q;
    let mut eta = start.to_vec();
    for _ in 0..200 {
        let mut grad = DVector::zeros(d);
        let mut hess = DMatrix::zeros(d, d);
        for i in 0..n {
            let xi = x.row(i).transpose();
            let g = gating(&xi, &eta);
            let xx = &xi * xi.transpose();
            for a in 0..k - 1 {
                grad.rows_mut(a * q, q).axpy(u[(i, a)] - g[a], &xi, 1.0);
                for b in 0..k - 1 {
                    let c = g[a] * (if a == b { 1.0 } else { 0.0 } - g[b]);
                    let mut block = hess.view_mut((a * q, b * q), (q, q));
                    block += &xx * c;
                }
            }
        }
        if grad.amax() < tol {
            break;
        }
        let step = Cholesky::new(hess).expect("gating Hessian").solve(&grad);
        let base = gating_objective(x, u, &eta);
        let mut t = 1.0;
        loop {
            let cand: Vec<DVector<f64>> = (0..k - 1).map(|a| &eta[a] + step.rows(a * q, q) * t).collect();
            if gating_objective(x, u, &cand) >= base || t < 1e-8 {
                eta = cand;
                break;
            }
            t *= 0.5;
        }
    }
    eta
}

impl Moe {
    fn step(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Moe {
        let (n, q) = x.shape();
        let k = self.beta.len();
        let lj = DMatrix::from_fn(n, k, |i, j| {
            let xi = x.row(i).transpose();
            let g = gating(&xi, &self.eta);
            let r = y[i] - xi.dot(&self.beta[j]);
            g[j].ln() - 0.5 * (LN_2PI + self.sigma2[j].ln() + r * r / self.sigma2[j])
        });
        let u = posterior(&lj);
        let mut beta = Vec::with_capacity(k);
        let mut sigma2 = Vec::with_capacity(k);
        for j in 0..k {
            let mut gram = DMatrix::zeros(q, q);
            let mut rhs = DVector::zeros(q);
            for i in 0..n {
                let xi = x.row(i).transpose();
                gram += &xi * xi.transpose() * u[(i, j)];
                rhs += xi * (u[(i, j)] * y[i]);
            }
            let b = Cholesky::new(gram).expect("weighted design").solve(&rhs);
            let nk: f64 = u.column(j).sum();
            let ss: f64 = (0..n).map(|i| u[(i, j)] * (y[i] - x.row(i).transpose().dot(&b)).powi(2)).sum();
            beta.push(b);
            sigma2.push(ss / nk);
        }
        let eta = fit_gating(x, &u, &self.eta, 1e-12 * n as f64);
        Moe { beta, sigma2, eta }
    }
}

pub fn moe_em(x: &DMatrix<f64>, y: &DVector<f64>, init: Moe, tol: f64, max_iter: usize) -> (Moe, usize) {
    let mut cur = init;
    for it in 1..=max_iter {
        let next = cur.step(x, y);
        let change = max_abs_diff(&cur.flat(), &next.flat());
        cur = next;
        if change < tol {
            return (cur, it);
        }
    }
    (cur, max_iter)
}

// ----------------------------------------------------------- skew normal

#[derive(Clone, Debug)]
pub struct Snm {
    pub pi: Vec<f64>,
    pub mu: Vec<DVector<f64>>,
    pub psi: Vec<DVector<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
}

/// Skew-normal log density through `Ω = Σ + ψψ'`:
/// `log 2 + log φ(y; μ, Ω) + log Φ(ψ'Ω⁻¹(y-μ) / sqrt(1 - ψ'Ω⁻¹ψ))`.
pub fn sn_logpdf(y: &DVector<f64>, mu: &DVector<f64>, psi: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    let omega = sigma + psi * psi.transpose();
    let oinv = omega.clone().try_inverse().expect("Omega invertible");
    let r = y - mu;
    let slack = 1.0 - psi.dot(&(&oinv * psi));
    let arg = psi.dot(&(&oinv * &r)) / slack.sqrt();
    std::f64::consts::LN_2 + Mvn::new(mu.clone(), &omega).logpdf(y) + log_cdf(arg)
}

impl Snm {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.pi.clone();
        for j in 0..self.pi.len() {
            out.extend(self.mu[j].iter());
            out.extend(self.psi[j].iter());
            out.extend(self.sigma[j].iter());
        }
        out
    }

    fn step(&self, y: &DMatrix<f64>) -> Snm {
        let (n, p) = y.shape();
        let k = self.pi.len();
        let lj = DMatrix::from_fn(n, k, |i, j| {
            self.pi[j].ln() + sn_logpdf(&y.row(i).transpose(), &self.mu[j], &self.psi[j], &self.sigma[j])
        });
        let u = posterior(&lj);
        let mut next = Snm { pi: vec![], mu: vec![], psi: vec![], sigma: vec![] };
        for j in 0..k {
            let sinv = self.sigma[j].clone().try_inverse().expect("Sigma invertible");
            let psi = &self.psi[j];
            let sinv_psi = &sinv * psi;
            let tau2 = 1.0 / (psi.dot(&sinv_psi) + 1.0);
            let (e1, e2): (Vec<f64>, Vec<f64>) = (0..n)
                .map(|i| {
                    let r = y.row(i).transpose() - &self.mu[j];
                    half_moments(tau2 * sinv_psi.dot(&r), tau2.sqrt())
                })
                .unzip();
            let nk: f64 = u.column(j).sum();
            let s1: f64 = (0..n).map(|i| u[(i, j)] * e1[i]).sum();
            let s2: f64 = (0..n).map(|i| u[(i, j)] * e2[i]).sum();
            let mut mu = DVector::zeros(p);
            for i in 0..n {
                mu += y.row(i).transpose() * u[(i, j)];
            }
            let mu = (mu - psi * s1) / nk;
            let mut psi_new = DVector::zeros(p);
            for i in 0..n {
                psi_new += (y.row(i).transpose() - &mu) * (u[(i, j)] * e1[i]);
            }
            let psi_new = psi_new / s2;
            let mut s = DMatrix::zeros(p, p);
            for i in 0..n {
                let r = y.row(i).transpose() - &mu;
                let c = &r * r.transpose() - (&psi_new * r.transpose() + &r * psi_new.transpose()) * e1[i]
                    + &psi_new * psi_new.transpose() * e2[i];
                s += c * u[(i, j)];
            }
            next.pi.push(nk / n as f64);
            next.mu.push(mu);
            next.psi.push(psi_new);
            next.sigma.push(s / nk);
        }
        next
    }
}

pub fn snm_em(y: &DMatrix<f64>, init: Snm, tol: f64, max_iter: usize) -> (Snm, usize) {
    let mut cur = init;
    for it in 1..=max_iter {
        let next = cur.step(y);
        let change = max_abs_diff(&cur.flat(), &next.flat());
        cur = next;
        if change < tol {
            return (cur, it);
        }
    }
    (cur, max_iter)
}

// ------------------------------------------------------------ quadrature

/// Composite Simpson rule with `m` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut acc = f(a) + f(b);
    for i in 1..m {
        let x = a + h * i as f64;
        acc += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    acc * h / 3.0
}
