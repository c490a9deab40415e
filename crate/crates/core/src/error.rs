use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected encoding: {0}")]
    RejectEncoding(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rejected bloom filter parameters: {0}")]
    RejectParams(String),

    #[error("bloom filter state is inconsistent: {0}")]
    RejectState(String),

    #[error("rejected serialized data: {0}")]
    RejectFormat(String),

    #[error("ledger append conflict: expected head {expected}, actual head {actual}")]
    Conflict { expected: u64, actual: u64 },

    #[error("ledger payload must not be empty")]
    RejectPayload,

    #[error("ledger unavailable: {0}")]
    LedgerUnavailable(String),

    #[error("user {0:?} is already enrolled")]
    AlreadyEnrolled(String),

    #[error("unknown user {0:?}")]
    UnknownUser(String),

    #[error("authentication failed")]
    AuthFail,

    #[error("session not found")]
    SessionNotFound,

    #[error("vault holds {available} entries, {requested} requested")]
    VaultEmpty { available: usize, requested: usize },

    #[error("granted access {0} is not in the vault")]
    NotInVault(String),

    #[error("rejected frame: {0}")]
    RejectFrame(String),

    #[error("server error {code}: {message}")]
    Remote { code: u16, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable numeric code, shared by the wire `ERROR` message and the C ABI.
    pub fn code(&self) -> u16 {
        match self {
            Error::RejectEncoding(_) => 1,
            Error::InvalidInput(_) => 2,
            Error::RejectParams(_) => 3,
            Error::RejectState(_) => 4,
            Error::RejectFormat(_) => 5,
            Error::Conflict { .. } => 6,
            Error::RejectPayload => 7,
            Error::LedgerUnavailable(_) => 8,
            Error::AlreadyEnrolled(_) => 9,
            Error::UnknownUser(_) => 10,
            Error::AuthFail => 11,
            Error::SessionNotFound => 12,
            Error::VaultEmpty { .. } => 13,
            Error::NotInVault(_) => 14,
            Error::RejectFrame(_) => 15,
            Error::Remote { code, .. } => *code,
            Error::Config(_) => 16,
            Error::Io(_) => 17,
        }
    }
}
