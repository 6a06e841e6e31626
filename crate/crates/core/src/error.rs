//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing column `{column}`")]
    MissingColumn { column: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error on row {row}, column `{column}`: cannot read `{value}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("duplicate id `{id}` on rows {first} and {second}")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },

    #[error("fusion conflict in column `{column}` for ids {ids:?}")]
    FusionConflict { column: String, ids: Vec<String> },

    #[error("encoding error in column `{column}`: {message}")]
    Encoding { column: String, message: String },

    #[error("infeasible k = {k}: only {distinct} distinct values")]
    InfeasibleK { k: usize, distinct: usize },

    #[error("arity mismatch for {what}: expected {expected}, found {found}")]
    Arity {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate column `{0}`: zero variance")]
    DegenerateColumn(String),

    #[error("specification error: {0}")]
    Specification(String),

    #[error("numeric domain error at parameter `{parameter}`: {detail}")]
    NumericDomain { parameter: String, detail: String },

    #[error("unsupported latent dimension {0} (at most 2)")]
    UnsupportedDimension(usize),

    #[error("spec file line {line}: {message}")]
    SpecFile { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::Specification(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
