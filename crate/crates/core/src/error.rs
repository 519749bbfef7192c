use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Schema validation failures, one variant per way a schema file can be wrong.
#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("schema parse error: {0}")]
    Parse(String),
    #[error("unknown column kind `{kind}` for column {table}.{column}")]
    UnknownColumnKind { table: String, column: String, kind: String },
    #[error("unresolved reference target `{target}` in column {table}.{column}")]
    UnresolvedReference { table: String, column: String, target: String },
    #[error("missing target designation: {0}")]
    MissingTarget(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("table `{table}`: {message}")]
    Table { table: String, message: String },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A batch that carries no training signal for the objective.
    #[error("degenerate denoising batch: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("table `{table}`, column `{column}`, row {row}: {message}")]
    Cell {
        table: String,
        column: String,
        row: usize,
        message: String,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Config(_) => 1,
            Error::Shape { .. } | Error::NonFinite { .. } | Error::Numeric(_) | Error::Degenerate(_) => 3,
            _ => 2,
        }
    }
}
