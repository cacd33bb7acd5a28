//! Structural properties checked on every fit produced by the acceptance run.

use std::collections::BTreeMap;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use wce::moe::gating_probs;
use wce::snm::latent_moments;
use wce::wce::{map_labels, responsibilities, Dataset, ExpertComponent, ExpertsMixture, FitResult, GaussianMixture, MixtureParams, SkewNormalMixture};

#[derive(Default)]
pub struct PropertyLog {
    /// Property name to (checks, violations).
    counts: Mutex<BTreeMap<&'static str, (usize, usize)>>,
    first_violation: Mutex<Option<String>>,
    fits: Mutex<usize>,
}

impl PropertyLog {
    fn record(&self, name: &'static str, ok: bool, context: &str) {
        let mut c = self.counts.lock().unwrap();
        let e = c.entry(name).or_default();
        e.0 += 1;
        if !ok {
            e.1 += 1;
            let mut fv = self.first_violation.lock().unwrap();
            if fv.is_none() {
                *fv = Some(format!("{name} ({context})"));
            }
        }
    }

    pub fn fits(&self) -> usize {
        *self.fits.lock().unwrap()
    }

    pub fn violations(&self) -> usize {
        self.counts.lock().unwrap().values().map(|v| v.1).sum()
    }

    pub fn summary(&self) -> String {
        let c = self.counts.lock().unwrap();
        let parts: Vec<String> = c.iter().map(|(k, (n, bad))| format!("{k} {}/{n}", n - bad)).collect();
        let mut s = parts.join(", ");
        if let Some(v) = self.first_violation.lock().unwrap().as_ref() {
            s += &format!("; first violation: {v}");
        }
        s
    }

    /// Checks one fit; `eigen_ratio_c` is the bound the fit was run with.
    pub fn check(&self, context: &str, fit: &FitResult, data: &Dataset, eigen_ratio_c: Option<f64>) {
        *self.fits.lock().unwrap() += 1;
        let u = &fit.responsibilities;
        let stochastic = u.row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-10 && r.iter().all(|v| (0.0..=1.0).contains(v)));
        self.record("row-stochastic responsibilities", stochastic, context);

        match &fit.params {
            MixtureParams::Gaussian(m) => {
                let sigmas: Vec<&DMatrix<f64>> = m.components.iter().map(|c| c.sigma.matrix()).collect();
                self.scale_checks(context, &sigmas, eigen_ratio_c);
            }
            MixtureParams::SkewNormal(m) => {
                let sigmas: Vec<&DMatrix<f64>> = m.components.iter().map(|c| c.sigma.matrix()).collect();
                self.scale_checks(context, &sigmas, eigen_ratio_c);
                if let Dataset::Points(y) = data {
                    let lm = latent_moments(y, m, fit.gamma).expect("latent moments");
                    let ok = lm
                        .v0
                        .iter()
                        .zip(lm.v1.iter())
                        .zip(lm.v2.iter())
                        .all(|((v0, v1), v2)| v2 * v0 - v1 * v1 >= -1e-10 * (v2 * v0).abs().max(v1 * v1));
                    self.record("moment inequality", ok, context);
                }
            }
            MixtureParams::Experts(m) => {
                if let Dataset::Regression(r) = data {
                    let etas = m.etas();
                    let ok = (0..r.n()).all(|i| {
                        let g = gating_probs(&r.x.row(i).transpose(), &etas);
                        (g.iter().sum::<f64>() - 1.0).abs() < 1e-12 && g.iter().all(|v| *v > 0.0)
                    });
                    self.record("gating normalization", ok, context);
                }
            }
        }
        self.record("label equivariance", label_equivariant(fit, data), context);
    }

    fn scale_checks(&self, context: &str, sigmas: &[&DMatrix<f64>], c: Option<f64>) {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        let mut spd = true;
        for s in sigmas {
            let sym = (0..s.nrows()).all(|a| (0..s.ncols()).all(|b| s[(a, b)] == s[(b, a)]));
            let eig = SymmetricEigen::new((*s).clone()).eigenvalues;
            spd &= sym && eig.min() > 0.0;
            lo = lo.min(eig.min());
            hi = hi.max(eig.max());
        }
        self.record("SPD scale matrices", spd, context);
        if let Some(c) = c {
            self.record("eigen-ratio bound", hi / lo <= c * (1.0 + 1e-9), context);
        }
    }
}

/// Reverses the component order of a parameter set.
pub fn reverse_components(params: &MixtureParams) -> MixtureParams {
    match params {
        MixtureParams::Gaussian(m) => {
            let mut pi = m.pi.clone();
            pi.reverse();
            let mut comps = m.components.clone();
            comps.reverse();
            GaussianMixture::new(pi, comps).unwrap().into()
        }
        MixtureParams::SkewNormal(m) => {
            let mut pi = m.pi.clone();
            pi.reverse();
            let mut comps = m.components.clone();
            comps.reverse();
            SkewNormalMixture::new(pi, comps).unwrap().into()
        }
        MixtureParams::Experts(m) => {
            // Gating scores are only identified up to a common shift; rebase on
            // the new last component.
            let etas = m.etas();
            let q = m.dim();
            let full: Vec<DVector<f64>> = etas.iter().map(|e| if e.is_empty() { DVector::zeros(q) } else { e.clone() }).collect();
            let k = full.len();
            let base = full[0].clone();
            let comps = (0..k)
                .map(|j| {
                    let src = &m.components[k - 1 - j];
                    let eta = if j + 1 == k { DVector::zeros(0) } else { &full[k - 1 - j] - &base };
                    ExpertComponent { beta: src.beta.clone(), sigma2: src.sigma2, eta }
                })
                .collect();
            ExpertsMixture::new(comps).unwrap().into()
        }
    }
}

/// Relabelling the components permutes the responsibility columns and MAP labels.
fn label_equivariant(fit: &FitResult, data: &Dataset) -> bool {
    let k = fit.params.n_components();
    let reversed = reverse_components(&fit.params);
    let u = responsibilities(data, &fit.params).expect("responsibilities");
    let v = responsibilities(data, &reversed).expect("responsibilities");
    let cols_ok = (0..u.nrows()).all(|i| (0..k).all(|j| (u[(i, j)] - v[(i, k - 1 - j)]).abs() < 1e-10));
    let lu = map_labels(&u);
    let lv = map_labels(&v);
    let labels_ok = lu.iter().zip(&lv).enumerate().all(|(i, (a, b))| {
        // exact ties may resolve differently
        *b == k - 1 - *a || (u[(i, *a)] - u[(i, k - 1 - *b)]).abs() < 1e-12
    });
    cols_ok && labels_ok && lu == fit.labels
}
