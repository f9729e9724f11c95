use thiserror::Error;

/// Errors produced by problem construction, sampling and rule evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("need at least {required} samples, got {got}")]
    InsufficientSamples { required: usize, got: usize },

    #[error("operator is numerically rank deficient (sigma_min/sigma_max = {ratio:.3e})")]
    DegenerateOperator { ratio: f64 },

    #[error("all component variances are zero; rescaling weights are undefined")]
    DegenerateNoise,

    #[error("SVD failed to converge (worst column residual {residual:.3e})")]
    NumericalFailure { residual: f64 },

    #[error("relative error is undefined for zero ground truth")]
    UndefinedRelativeError,

    #[error("noise model needs the dense factor; construct the problem via symmetrize")]
    MissingFactor,

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
