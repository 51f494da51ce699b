use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Incompatible tensor or kernel shapes.
    #[error("shape error: {0}")]
    Shape(String),
    /// Argument outside the operation's domain (negative threshold, NaN input, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// The operator has no usable spectrum (e.g. an all-zero dictionary).
    #[error("degenerate operator: {0}")]
    Degenerate(String),
    #[error("invalid configuration: `{key}` {reason}")]
    Config { key: &'static str, reason: String },
    /// A forward trace does not belong to the parameters it is paired with.
    #[error("consistency error: {0}")]
    Consistency(String),
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::Error::Shape(alloc::format!($($arg)*)) };
}
macro_rules! domain_err {
    ($($arg:tt)*) => { $crate::Error::Domain(alloc::format!($($arg)*)) };
}
pub(crate) use domain_err;
pub(crate) use shape_err;
