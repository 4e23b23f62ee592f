use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("non-finite value detected at frame {frame}")]
    NonFinite { frame: usize },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("CFL bound violated: dt = {dt:e} exceeds {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("mass drift {drift:e} at frame {frame}")]
    MassDrift { frame: usize, drift: f64 },

    #[error("negative density {min:e} at frame {frame}")]
    NegativeDensity { frame: usize, min: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit status associated with this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidGrid(_) | Error::InvalidArgument(_) => 2,
            Error::Io(_) => 4,
            _ => 3,
        }
    }
}
