use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BamError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("stage {stage} is continuous; exact enumeration needs discrete stages")]
    UnsupportedContinuous { stage: usize },
    #[error("mechanism does not cover the history tree: {0}")]
    IncompleteMechanism(String),
    #[error("bad history {history:?}")]
    BadHistory { history: Vec<usize> },
    #[error("stage {stage} has {items} items; supply a stage mechanism")]
    UseProvidedStageMechanism { stage: usize, items: usize },
    #[error("theta {theta} outside [0, {val}]")]
    ThetaOutOfRange { theta: f64, val: f64 },
    #[error("stage {stage}: spend {spend} exceeds balance {balance}")]
    SpendExceedsBalance { stage: usize, spend: f64, balance: f64 },
    #[error("stage {stage}: negative deposit {deposit}")]
    NegativeDeposit { stage: usize, deposit: f64 },
    #[error("core BAM spec invalid: {0}")]
    CoreBamInvalid(String),
    #[error("mechanism is not ex-post IR on path {path:?} (utility {utility})")]
    NotExPostIR { path: Vec<usize>, utility: f64 },
    #[error("mechanism is not symmetric or not stage-wise IC: {0}")]
    NotSymmetricOrNotIC(String),
    #[error("{stages} stages is too many to enumerate all sigma strings")]
    SigmaEnumerationTooLarge { stages: usize },
    #[error("linear program is infeasible")]
    LpInfeasible,
    #[error("linear program is unbounded")]
    LpUnbounded,
    #[error("gap parameter must be positive, got {0}")]
    BadDelta(f64),
    #[error("function is not concave near {at}")]
    NotConcave { at: f64 },
    #[error("stage {stage} has more than one item")]
    UnsupportedMultiItem { stage: usize },
    #[error("promise {promise} below zero at history {history:?}")]
    PromiseUnderflow { history: Vec<usize>, promise: f64 },
    #[error("history tree has {nodes} nodes, cap is {cap}")]
    InstanceTooLarge { nodes: usize, cap: usize },
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, BamError>;
