use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid observation {record}: {reason}")]
    InvalidObservation { record: String, reason: String },
    #[error("duplicate object {object} in image {image} of scene {scene}")]
    DuplicateObject {
        scene: String,
        image: String,
        object: String,
    },
    /// Fewer than two objects: no relative layout can be formed.
    #[error("geometry unavailable: need at least 2 objects, got {0}")]
    GeometryUnavailable(usize),
    #[error("room {room} has {available} images, fewer than K = {k}")]
    InsufficientImages {
        room: String,
        available: usize,
        k: usize,
    },
    #[error("score maps cover different room sets")]
    KeyMismatch,
    #[error("no positive labels: recall is undefined")]
    NoPositives,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
