use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("record {id}: {reason}")]
    Parse { id: String, reason: String },
    #[error("corpus line {line}: {reason}")]
    Canonical { line: usize, reason: String },
    #[error("corpus too small to split: {0} songs (need at least 3)")]
    CorpusTooSmall(usize),
    #[error("song {id}: note {note} would move to pitch {pitch}, outside 0..=127")]
    PitchOutOfRange { id: String, note: usize, pitch: i32 },
    #[error("song {0} has no known tonic")]
    UnknownTonic(String),
    #[error("song {0} has no notes")]
    EmptySong(String),
    #[error("song {id}: alpha {requested} is not a multiple of the stored grid {stored}")]
    GridMismatch { id: String, stored: u32, requested: u32 },
    #[error("sequence too short: {len} frames, need more than {needed}")]
    SequenceTooShort { len: usize, needed: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("index {0} is not a strict local maximum")]
    NotAPeak(usize),
    #[error("precision is zero, over-segmentation is undefined")]
    ZeroPrecision,
    #[error("metric precondition violated: {0}")]
    Metric(String),
    #[error("predictions and gold disagree on song ids: {0:?}")]
    IdMismatch(Vec<String>),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("ensemble: {0}")]
    Ensemble(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
