use crate::pips::SamplingDistribution;

/// Errors produced by width-space construction, training, solving and search.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("layer {layer}: max_channels {max_channels} is not divisible by group count {group_count}")]
    IndivisibleLayer {
        layer: usize,
        max_channels: usize,
        group_count: usize,
    },
    #[error("invalid space: {reason}")]
    InvalidSpace { reason: String },
    #[error("channel value {channel} out of range [1, {max_channels}]")]
    ChannelOutOfRange { channel: usize, max_channels: usize },
    #[error("invalid width: {reason}")]
    InvalidWidth { reason: String },
    #[error("FLOPs budget {budget} is below the minimum achievable {minimum}")]
    InfeasibleBudget { budget: f64, minimum: f64 },
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("loss ledger is empty")]
    EmptyLedger,
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("non-finite value during training: {context}")]
    NonFinite { context: String },
    #[error("solver stalled after {iterations} iterations (objective {objective}, constraint residual {residual})")]
    SolverStalled {
        iterations: usize,
        objective: f64,
        residual: f64,
        best: Box<SamplingDistribution>,
    },
    #[error("population of {len} is smaller than the {wanted} individuals requested")]
    PopulationTooSmall { len: usize, wanted: usize },
    #[error("fitness not set for individual {index}")]
    FitnessUnset { index: usize },
    #[error("no feasible width under budget {budget}")]
    NoFeasibleWidth { budget: f64 },
    #[error("search space holds {size} widths, above the exhaustive limit {limit}")]
    SpaceTooLarge { size: String, limit: u128 },
    #[error("rank correlation undefined: all scores tied")]
    AllTied,
    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error("weights file: {reason}")]
    WeightsFormat { reason: String },
    #[error("dataset: {reason}")]
    DatasetFormat { reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
