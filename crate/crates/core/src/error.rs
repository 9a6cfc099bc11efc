use thiserror::Error;

/// Errors raised by library operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("malformed tree: {0}")]
    InvalidTree(String),
    #[error("permutation vector does not match tree shape: {0}")]
    ShapeMismatch(String),
    #[error("unknown vertex address {0}")]
    UnknownAddress(String),
    #[error("missing family entry: {0}")]
    MissingKey(String),
    #[error("population exceeded cap after {partial} vertices")]
    Overflow { partial: usize },
    #[error("no acceptable sample after {attempts} attempts")]
    Exhausted { attempts: u64 },
    #[error("fixed point did not converge (residual {residual:e})")]
    NonConvergence { residual: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid mobile: {0}")]
    InvalidMobile(String),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("map is negative; reverse the root first")]
    NegativeMap,
    #[error("operation undefined on the vertex map")]
    VertexMap,
    #[error("enumeration exceeded cap ({0} outcomes)")]
    CapExceeded(usize),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
