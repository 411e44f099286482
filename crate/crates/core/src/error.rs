use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("environment has no free cells")]
    EmptyEnvironment,

    #[error("free-cell graph is not connected: {0}")]
    Disconnected(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("eigenvalue {re} + {im}i is not real; complex harmonics are unsupported")]
    ComplexSpectrum { re: f64, im: f64 },

    #[error("matrix is not diagonalizable: {0}")]
    NonDiagonalizable(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("infeasible design for order {order}, beta {beta}, epsilon {epsilon}: {msg}; try a larger order")]
    InfeasibleDesign {
        order: usize,
        beta: f64,
        epsilon: f64,
        msg: String,
    },

    #[error("numerical assembly failed: residual {residual:e} exceeds {limit:e}")]
    Assembly { residual: f64, limit: f64 },

    #[error("kernel extraction failed: {0}")]
    KernelExtraction(String),

    #[error("iteration diverged at step {step} (norm {norm:e})")]
    Divergence { step: usize, norm: f64 },

    #[error("ill-conditioned projection: {0}")]
    IllConditionedProjection(String),

    #[error("ill-conditioned basis: condition number {0:e}")]
    IllConditionedBasis(f64),

    #[error("start cell {cell} lies on a node of harmonic {harmonic} (entry {value:e}); choose another start cell")]
    NodalStart {
        cell: usize,
        harmonic: usize,
        value: f64,
    },

    #[error("aggregated weights dissipated for harmonic {harmonic} (projection {projection:e}); use more robots or steps")]
    Dissipation { harmonic: usize, projection: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("linear program: {0}")]
    LinearProgram(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Config(_) | Error::Io(_) | Error::InvalidDimension(_) => 2,
            _ => 3,
        }
    }
}
