use std::path::PathBuf;

/// Errors surfaced by any stage of the pipeline.
///
/// `exit_code` buckets them into usage/input problems (2) and runtime
/// failures (1) for the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed delimited file {path}: {msg}")]
    Malformed { path: PathBuf, msg: String },

    #[error("schema mismatch between tables: {left:?} vs {right:?}")]
    SchemaMismatch { left: Vec<String>, right: Vec<String> },

    #[error("duplicate id {id:?} in {table}")]
    DuplicateId { id: String, table: String },

    #[error("pairs file references unknown id {id:?} (column {column})")]
    DanglingId { id: String, column: String },

    #[error("split fractions must sum to 1 (got {sum})")]
    BadSplitFractions { sum: f64 },

    #[error("supervised triple sampling needs labeled positives in the train split")]
    NoLabeledPositives,

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("contrastive loss needs a batch of at least 2 pairs (got {got})")]
    BatchTooSmall { got: usize },

    #[error("zero variance in embedding dimension {dim}; cross-correlation is undefined")]
    ZeroVariance { dim: usize },

    #[error("cannot estimate collision rates: the {which} pair set is empty")]
    EmptyPairSet { which: &'static str },

    #[error("cannot build an index over zero vectors")]
    EmptyIndex,

    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("k must be at least 1")]
    BadK,

    #[error("target recall {target} unreachable within k_max={k_max} (best {best:.4})")]
    TargetUnreachable { target: f64, k_max: usize, best: f64 },

    #[error("banding needs bands*rows == signature length ({bands}*{rows} != {m})")]
    BandingMismatch { bands: usize, rows: usize, m: usize },

    #[error("ground truth is empty; metrics are undefined")]
    EmptyGroundTruth,

    #[error("seed-labeled pairs must contain at least one {which} example")]
    MissingSeedClass { which: &'static str },

    #[error("synthetic spec needs at least one entity")]
    ZeroEntities,

    #[error("bad checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("no embedding vector for record id {id:?} in the external embedding file")]
    MissingEmbedding { id: String },

    #[error("model dimensions must be positive: {0}")]
    BadDims(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("triple sampling failed: {0}")]
    Sampling(String),
}

impl Error {
    /// CLI exit code: 2 for usage/input errors, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. }
            | Error::ZeroVariance { .. }
            | Error::TargetUnreachable { .. }
            | Error::Training(_)
            | Error::Sampling(_) => 1,
            _ => 2,
        }
    }
}
