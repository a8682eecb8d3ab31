use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("giou undefined: both boxes have zero area")]
    DegenerateEnclosure,
    #[error("epoch {epoch} out of range for a {n_epochs}-epoch schedule")]
    EpochOutOfRange { epoch: usize, n_epochs: usize },
    #[error("maximum candidate score is zero")]
    ZeroMaxScore,
    #[error("no predictions to assign")]
    EmptyPredictions,
    #[error("{instances} instances cannot be matched one-to-one to {anchors} anchors")]
    TooFewAnchors { instances: usize, anchors: usize },
    #[error("anchor set mismatch: expected {expected}, got {got}")]
    AnchorMismatch { expected: usize, got: usize },
    #[error("anchor {anchor} contributes to regression but has no owning instance")]
    MissingOwner { anchor: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("could not place {wanted} instances after {retries} attempts")]
    InfeasibleScene { wanted: usize, retries: usize },
}

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
