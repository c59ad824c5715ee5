use thiserror::Error;

/// Errors produced by the compensation pipeline and its building blocks.
#[derive(Error, Debug)]
pub enum HimoError {
    #[error("empty point set")]
    EmptyPointSet,

    #[error("degenerate rig: {0}")]
    DegenerateRig(String),

    #[error("no ground truth")]
    NoGroundTruth,

    #[error("flow/frame mismatch: flow has {flow} entries, frame has {frame} points")]
    FlowFrameMismatch { flow: usize, frame: usize },

    #[error("frames not co-registered: {0}")]
    NotCoRegistered(String),

    #[error("no dynamic target")]
    NoDynamicTarget,

    #[error("nothing to evaluate")]
    NothingToEvaluate,

    #[error("point correspondence broken: {0}")]
    CorrespondenceBroken(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient temporal context: {0}")]
    InsufficientContext(String),

    #[error("frame file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HimoError>;
