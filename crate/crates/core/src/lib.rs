//! Robust fitting of finite mixture models with density-power weighted
//! complete estimating equations.
//!
//! The estimator augments the complete-data score of each component with the
//! weight `f(y; theta_k)^gamma` and a closed-form bias correction, and solves
//! the resulting equations with an expectation / estimating-equation
//! iteration. Gaussian mixtures, Gaussian mixtures of experts and
//! skew-normal mixtures are supported. `gamma = 0` reproduces classical EM.

pub mod cli;
pub mod distributions;
pub mod error;
pub mod gmm;
pub mod inference;
pub mod io;
pub mod moe;
pub mod select;
pub mod simbench;
pub mod snm;
pub mod wce;

pub use error::{CollapseKind, Result, WceError};
