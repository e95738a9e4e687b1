use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not positive semi-definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemiDefinite { min_eigenvalue: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("eigensolver did not converge for matrix {matrix}")]
    EigenNonConvergence { matrix: String },

    #[error("matrix exponential overflow (|t|*norm = {scaled_norm:e}); use a shorter horizon")]
    ExpOverflow { scaled_norm: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model is not similar to a fully observed model: {0}")]
    NotSimilarToFullyObserved(String),

    #[error("scalar Riccati closed form needs S > 0; use the Ornstein-Uhlenbeck covariance branch")]
    NoSensorUseOuBranch,

    #[error("invalid scalar Riccati parameters: {0}")]
    ScalarRiccatiDomain(String),

    #[error("Riccati divergence at t = {t} (|P|_F = {norm:e})")]
    RiccatiDivergence { t: f64, norm: f64 },

    #[error("pair is not observable/controllable (rank_c = {rank_c}, rank_o = {rank_o}, r1 = {r1})")]
    NotObservableControllable { rank_c: usize, rank_o: usize, r1: usize },

    #[error("algebraic Riccati solve failed: residual {residual:e} above target {target:e}")]
    AreNotConverged { residual: f64, target: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("bound requires stable drift, got log-norm {mu}")]
    UnstableDrift { mu: f64 },

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("inadmissible perturbation at t = {t}: P + Q has eigenvalue {min_eigenvalue:e}")]
    InadmissiblePerturbation { t: f64, min_eigenvalue: f64 },

    #[error("insufficient replicas: {got} < {min}")]
    InsufficientReplicas { got: usize, min: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("model outside the 2d partial-observation setting: {0}")]
    OutsideAppendixSetting(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
