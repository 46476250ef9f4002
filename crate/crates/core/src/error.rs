use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid scheme, assignment or experiment parameters.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    /// A precondition on a numeric argument does not hold.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("cannot rescale a zero matrix to a target smoothness")]
    UndefinedScale,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dataset is rank deficient after {attempts} attempts (mu/L = {ratio:e})")]
    Regeneration { attempts: usize, ratio: f64 },

    #[error("no decodable gradient code for M_G={group_size}, r_G={redundancy} after {attempts} attempts")]
    CodeConstruction {
        group_size: usize,
        redundancy: usize,
        attempts: usize,
    },

    #[error("cannot decode group gradient from workers {workers:?}")]
    Decode { workers: Vec<usize> },

    #[error("missing gradient for {0}")]
    MissingGradient(String),

    #[error("run diverged with step size {step_size:e}: gap {gap:e} exceeds 1e6 x initial gap {initial_gap:e}")]
    Divergence { step_size: f64, gap: f64, initial_gap: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("invalid experiment file: {0}")]
    Parse(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
