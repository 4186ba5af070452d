use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for {p} variables")]
    IndexOutOfRange { index: usize, p: usize },

    /// Eigendecomposition or factorization failed.
    #[error("numerical failure: {message} (frobenius norm {frobenius:.3e}, diagonal range [{diag_min:.3e}, {diag_max:.3e}])")]
    Numerical {
        message: String,
        frobenius: f64,
        diag_min: f64,
        diag_max: f64,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("coordinate descent cannot proceed: diagonal entry {value:.3e} at node {node} is not positive")]
    NonPositiveDiagonal { node: usize, value: f64 },

    /// The residual variance used to scale a debiasing row is not positive.
    #[error("degenerate residual variance {value:.3e} at node {node}")]
    DegenerateTau { node: usize, value: f64 },

    /// The contracted variance estimate for an edge is not positive.
    #[error("degenerate variance estimate {value:.3e} for pair ({a}, {b})")]
    DegenerateVariance { a: usize, b: usize, value: f64 },
}

impl Error {
    pub(crate) fn numerical(message: impl Into<String>, m: &nalgebra::DMatrix<f64>) -> Self {
        let diag = m.diagonal();
        let (diag_min, diag_max) = if diag.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (diag.min(), diag.max())
        };
        Error::Numerical {
            message: message.into(),
            frobenius: m.norm(),
            diag_min,
            diag_max,
        }
    }
}
