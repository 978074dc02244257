use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing mapped column `{0}`")]
    MissingColumn(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("trajectory `{vehicle}` too short: {len} samples at sampling factor {factor}")]
    TooShort {
        vehicle: String,
        len: usize,
        factor: usize,
    },

    #[error("relative error undefined: reference sums to zero")]
    ZeroDenominator,

    #[error("singular inversion input: {0}")]
    Singular(&'static str),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("non-congested data: fitted velocity slope {slope} is not negative")]
    NonCongested { slope: f64 },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}
