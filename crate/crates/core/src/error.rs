use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("state is not physical: {0}")]
    NotPhysical(String),

    #[error("Fock truncation too small: {leakage:.3e} of the probability mass lies above the cutoff")]
    Truncation { leakage: f64 },

    #[error("register has no mode `{0}`")]
    MissingMode(String),

    #[error("conditioning probability {0:.3e} too small to define a state")]
    UndefinedState(f64),

    #[error("tomography input incomplete: {0}")]
    Tomography(String),

    #[error("decoy bound infeasible: {0}")]
    DecoyInfeasible(String),

    #[error("fit underdetermined: {0}")]
    Underdetermined(String),

    #[error("topology misconfigured: {0}")]
    Topology(String),

    #[error("lock lost after {windows} windows without usable signal")]
    LockLost { windows: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error("inputs do not match: {0}")]
    Mismatch(String),

    #[error("count table row {row}: {reason}")]
    Schema { row: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
