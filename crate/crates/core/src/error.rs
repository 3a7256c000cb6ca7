use thiserror::Error;

/// Errors produced while building models or running a smoother.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("period {t} lies outside the balanced sample (T_b = {t_b}); the compact form needs every monthly variable observed")]
    WrongFormulation { t: usize, t_b: usize },

    #[error("unsupported observation pattern: {0}")]
    UnsupportedPattern(String),

    #[error("innovation covariance at period {t} is singular or ill-conditioned (condition estimate {condition:.3e})")]
    SingularInnovation { t: usize, condition: f64 },

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("oracle problem too large: {what} = {size} exceeds cap {cap}")]
    OracleTooLarge {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
