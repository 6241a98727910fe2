use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("value out of domain: {0}")]
    Domain(String),
    #[error("malformed ATTR data: {0}")]
    Format(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("unsupported layer kind: {0}")]
    LayerKind(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("no eligible donor: {0}")]
    Pool(String),
    #[error("attribution map sums to zero")]
    ZeroAttribution,
    #[error("empty group: {0}")]
    EmptyGroup(String),
    #[error("missing variant: {0}")]
    MissingVariant(String),
}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
