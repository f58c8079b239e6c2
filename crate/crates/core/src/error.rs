use chloros_qp::QpError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("hydraulic infeasible at step {step}: {detail}")]
    HydraulicInfeasible { step: usize, detail: String },
    #[error("network split: {0}")]
    NetworkSplit(String),
    #[error("unknown element: {0}")]
    UnknownElement(String),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("zones exhaust constraint band for output {output} at step {step}")]
    ZonesExhaustBand { output: usize, step: usize },
    #[error("pump schedule infeasible: {0}")]
    ScheduleInfeasible(String),
    #[error("incompatible tasks: {0}")]
    IncompatibleTasks(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
