use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric: entry ({i},{j}) = {upper} but ({j},{i}) = {lower}")]
    NotSymmetric {
        i: usize,
        j: usize,
        upper: f64,
        lower: f64,
    },

    #[error("matrix is not positive semidefinite: min eigenvalue {min_eig:e}, max eigenvalue {max_eig:e}")]
    NotPsd { min_eig: f64, max_eig: f64 },

    #[error("symmetric eigensolver did not converge (dim {dim}, max-abs entry {max_abs:e}, diagonal ratio {diag_ratio:e})")]
    EigenFailure {
        dim: usize,
        max_abs: f64,
        diag_ratio: f64,
    },

    #[error("shifted system is singular (shift {shift:e}, smallest shifted eigenvalue {min_shifted:e})")]
    Singular { shift: f64, min_shifted: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate direction: {0}")]
    Degenerate(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
