use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("duplicate observation for arm (m={campaign}, k={adline}, n={level}) at round {round}")]
    DuplicateObservation {
        campaign: usize,
        adline: usize,
        level: usize,
        round: usize,
    },

    #[error("instance too large for exhaustive enumeration: {0} candidate allocations")]
    TooLarge(u128),

    #[error("seed {seed}, round {round}, campaign {campaign}: {source}")]
    Replication {
        seed: u64,
        round: usize,
        campaign: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed input: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }
}
