use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("invalid protocol timing: {0}")]
    Timing(String),

    #[error("length mismatch: sequence of {seq} symbols but {gains} gain lags")]
    LengthMismatch { seq: usize, gains: usize },

    #[error("enumeration of {states} states exceeds the configured cap of {cap}")]
    StateSpaceTooLarge { states: u128, cap: u128 },

    #[error("symmetric path requested on an asymmetric topology")]
    NotSymmetric,

    #[error("empty search range for {0}")]
    EmptyRange(&'static str),
}
