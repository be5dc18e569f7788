use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("invalid hardware: {0}")]
    InvalidHardware(String),

    #[error("operator `{0}` has no hardware assignment")]
    MissingAssignment(String),

    #[error("placement references unknown hardware node `{0}`")]
    UnknownHardware(String),

    #[error("cycle detected in dataflow graph")]
    CycleDetected,

    #[error("selectivity undefined for an empty input stream")]
    EmptyStream,

    #[error("selectivity undefined for an empty window")]
    EmptyWindow,

    #[error("value `{value}` is outside the closed vocabulary of feature `{feature}`")]
    UnknownCategory { feature: String, value: String },

    #[error("normalization statistics missing for feature `{0}`")]
    MissingStats(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("msle is undefined for negative input {0}")]
    NegativeInput(f64),

    #[error("cost values must be strictly positive, got {0}")]
    NonPositive(f64),

    #[error("no feasible placement found after {attempts} sampling attempts")]
    NoFeasiblePlacement { attempts: usize },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
