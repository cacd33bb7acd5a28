use thiserror::Error;

/// Reason a fitting start was abandoned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CollapseKind {
    /// A mixing probability fell below the collapse threshold.
    VanishingWeight { component: usize },
    /// A covariance (or variance) became degenerate.
    DegenerateScale { component: usize },
    /// The denominator of a scale update was not positive.
    NonPositiveDenominator { component: usize },
    /// The weighted design of an expert became singular.
    SingularDesign { component: usize },
    /// The gating Newton solver failed to converge.
    GatingNonConvergence,
}

impl std::fmt::Display for CollapseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CollapseKind::VanishingWeight { component } => {
                write!(f, "mixing probability of component {component} vanished")
            }
            CollapseKind::DegenerateScale { component } => {
                write!(f, "scale matrix of component {component} degenerated")
            }
            CollapseKind::NonPositiveDenominator { component } => {
                write!(f, "non-positive scale-update denominator in component {component}")
            }
            CollapseKind::SingularDesign { component } => {
                write!(f, "singular weighted design in component {component}")
            }
            CollapseKind::GatingNonConvergence => write!(f, "gating update did not converge"),
        }
    }
}

#[derive(Debug, Error)]
pub enum WceError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid skew-normal parameterization: 1 - psi' Omega^-1 psi = {0}")]
    Parameterization(f64),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("component collapse: {0}")]
    Collapse(CollapseKind),

    #[error("fit failed after {attempts} attempts; last failure: {last}")]
    FitFailed { attempts: usize, last: String },

    #[error("gating update did not converge in {0} Newton steps")]
    NewtonNonConvergence(usize),

    #[error("the non-outlier set is empty")]
    EmptyInlierSet,

    #[error("outlier region infeasible: no accepted proposal in {0} draws")]
    InfeasibleOutlierRegion(usize),

    #[error("number of components differ: fitted {fitted}, truth {truth}")]
    ComponentMismatch { fitted: usize, truth: usize },

    #[error("singular Jacobian (condition number {condition:.3e})")]
    SingularJacobian { condition: f64 },

    #[error("malformed CSV at row {row}, column {column}: {message}")]
    MalformedCsv {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, WceError>;

impl WceError {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            WceError::DimensionMismatch { .. } => "dimension_mismatch",
            WceError::NotPositiveDefinite => "not_positive_definite",
            WceError::Domain(_) => "domain",
            WceError::Parameterization(_) => "parameterization",
            WceError::InvalidParams(_) => "invalid_params",
            WceError::InvalidConfig(_) => "invalid_config",
            WceError::Initialization(_) => "initialization",
            WceError::Collapse(_) => "collapse",
            WceError::FitFailed { .. } => "fit_failed",
            WceError::NewtonNonConvergence(_) => "newton_non_convergence",
            WceError::EmptyInlierSet => "empty_inlier_set",
            WceError::InfeasibleOutlierRegion(_) => "infeasible_outlier_region",
            WceError::ComponentMismatch { .. } => "component_mismatch",
            WceError::SingularJacobian { .. } => "singular_jacobian",
            WceError::MalformedCsv { .. } => "malformed_csv",
            WceError::Io(_) => "io",
            WceError::Csv(_) => "csv",
            WceError::Json(_) => "json",
        }
    }
}
