//! Probability primitives: multivariate normal, skew normal, truncated-normal
//! moments and seeded samplers.

mod gaussian;
mod skew_normal;
pub mod special;
mod spd;

pub use gaussian::{mahalanobis_sq, mvn_logpdf, GaussianParams};
pub use skew_normal::{sn_dp_transform, skew_normal_logpdf, SkewNormalComponent, SkewNormalDp, SkewNormalParams};
pub use spd::SpdMatrix;
pub use special::truncnorm_plus_moments;

pub(crate) use gaussian::mvn_logpdf_from_parts;
pub(crate) use spd::vec_serde;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic, platform-independent generator used throughout the crate.
pub type WceRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> WceRng {
    WceRng::seed_from_u64(seed)
}

/// Independent stream `stream` under the key `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> WceRng {
    let mut rng = WceRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A component law that can be evaluated and sampled.
pub trait ComponentDensity {
    fn dim(&self) -> usize;
    fn log_density(&self, y: &DVector<f64>) -> f64;
    fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64>;
}

/// `n` i.i.d. draws from `component` as the rows of an `n x p` matrix.
pub fn sample_component<C: ComponentDensity>(component: &C, n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    sample_rows(component, n, &mut rng)
}

pub(crate) fn sample_rows<C: ComponentDensity, R: Rng + ?Sized>(component: &C, n: usize, rng: &mut R) -> DMatrix<f64> {
    let p = component.dim();
    let mut out = DMatrix::zeros(n, p);
    for i in 0..n {
        let y = component.sample_one(rng);
        out.set_row(i, &y.transpose());
    }
    out
}
