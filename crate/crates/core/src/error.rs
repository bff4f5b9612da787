use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("{name} is not symmetric: asymmetry {asymmetry:.3e} exceeds the allowed {allowed:.3e}")]
    NotSymmetric {
        name: &'static str,
        asymmetry: f64,
        allowed: f64,
    },

    #[error("Popov matrix indefinite: λ_min = {min_eigenvalue}")]
    PopovIndefinite { min_eigenvalue: f64 },

    #[error("kernel condition ker R ⊆ ker S violated: ‖S·G‖ = {norm:.3e}")]
    KernelCondition { norm: f64 },

    #[error("matrix is not Hurwitz: spectral abscissa {abscissa}")]
    NotHurwitz { abscissa: f64 },

    #[error("real Schur decomposition failed to converge")]
    SchurFailed,

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("internal inconsistency: {0}")]
    Inconsistent(String),

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("integration stalled at t = {t}: {reason}")]
    IntegrationFailed { t: f64, reason: String },

    #[error("matrix is not a solution of the constrained Riccati equation: residual {residual:.3e}, constraint {constraint:.3e}")]
    NotASolution { residual: f64, constraint: f64 },
}
