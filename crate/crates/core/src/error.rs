use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmcError {
    #[error("all weights are zero")]
    AllZeroWeights,
    #[error("weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weight {index} is not finite ({value})")]
    NonFiniteWeight { index: usize, value: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("enumeration too large: {reason}")]
    TooLargeForEnumeration { reason: String },
    #[error("symmetrised systematic condition violated: p = {p} > 1")]
    SymmetrisedConditionViolated { p: f64 },
    #[error("scheme {0} has no continuous-time intensity limit")]
    NoIntensityLimit(String),
    #[error("no closed-form intensity shipped for scheme {0}")]
    ClosedFormUnavailable(String),
    #[error("order is not a mean partition of -v")]
    InvalidOrder,
    #[error("invalid permutation")]
    InvalidPermutation,
    #[error("unsupported dimension {0}: only d = 1 is supported here")]
    UnsupportedDimension(usize),
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
    #[error("all weights zero at step {step}")]
    DegenerateWeights { step: usize },
    #[error("overall rate {rate} exceeds majorant {majorant} at t = {time}")]
    MajorantViolated { rate: f64, majorant: f64, time: f64 },
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("chain too short: {0}")]
    ChainTooShort(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl SmcError {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            SmcError::AllZeroWeights => "AllZeroWeights",
            SmcError::NegativeWeight { .. } => "NegativeWeight",
            SmcError::NonFiniteWeight { .. } => "NonFiniteWeight",
            SmcError::EmptyInput => "EmptyInput",
            SmcError::IndexOutOfRange { .. } => "IndexOutOfRange",
            SmcError::LengthMismatch { .. } => "LengthMismatch",
            SmcError::TooLargeForEnumeration { .. } => "TooLargeForEnumeration",
            SmcError::SymmetrisedConditionViolated { .. } => "SymmetrisedConditionViolated",
            SmcError::NoIntensityLimit(_) => "NoIntensityLimit",
            SmcError::ClosedFormUnavailable(_) => "ClosedFormUnavailable",
            SmcError::InvalidOrder => "InvalidOrder",
            SmcError::InvalidPermutation => "InvalidPermutation",
            SmcError::UnsupportedDimension(_) => "UnsupportedDimension",
            SmcError::UnsupportedModel(_) => "UnsupportedModel",
            SmcError::DegenerateWeights { .. } => "DegenerateWeights",
            SmcError::MajorantViolated { .. } => "MajorantViolated",
            SmcError::EmptyEnsemble => "EmptyEnsemble",
            SmcError::ChainTooShort(_) => "ChainTooShort",
            SmcError::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

pub type Result<T> = std::result::Result<T, SmcError>;
