use thiserror::Error;

/// Errors produced by ingestion, estimation, and inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("dataset is empty after filtering")]
    EmptyDataset,

    #[error("no never-treated units available as controls")]
    UnusableControl,

    #[error("no treated units in cohort {g} for treatment d={d}")]
    EmptyCohort { g: i64, d: u8 },

    #[error("singular design: column {column} is linearly dependent on earlier columns")]
    SingularDesign { column: usize },

    #[error("perfect separation detected in probit fit (|beta| exceeded {0})")]
    Separation(f64),

    #[error("insufficient controls: have {have}, need more than {need}")]
    InsufficientControls { have: usize, need: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no group-time estimates could be computed: {0}")]
    NoEstimates(String),

    #[error("empty aggregation: {0}")]
    EmptyAggregation(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("unstable bootstrap: {discarded} of {total} draws failed estimation")]
    UnstableBootstrap { discarded: usize, total: usize },

    #[error("selection model does not cover unit {0}")]
    SelectionCoverage(String),

    #[error("covariate dimension mismatch: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("collinear treatment: no variation left after demeaning")]
    CollinearTreatment,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
