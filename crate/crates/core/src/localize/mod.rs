//! Contact point estimation: an analytical TDOA baseline and a trainable
//! multi-input regressor.

pub mod baseline;
pub mod checkpoint;
pub mod input;
pub mod network;
pub mod train;

use thiserror::Error;

pub use baseline::{multilaterate, multilaterate_on, SurfaceGrid, TdoaLocalizer, BASELINE_MAX_LAG, BASELINE_MIN_PROMINENCE};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use input::{build_features, extract, EventFeatures, FeatureVector, MissingPolicy, Modalities, Pipeline};
pub use network::{decode, loss, Architecture, Network};
pub use train::{corpus_norm_stats, evaluate, prepare, summarize, train, EpochLog, EvalReport, RegressorModel, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum LocalizeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("modality '{0}' is enabled but missing from the event")]
    MissingModality(String),
    #[error("only {0} confident sensor pairs; need at least 3")]
    NoConfidentPairs(usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("event has no label")]
    Unlabeled,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Preprocess(#[from] crate::preprocess::PreprocessError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// Anything that turns a raw event into a contact estimate.
pub trait Localizer {
    fn locate(&self, event: &crate::audio_io::EventRecord) -> Result<crate::geometry::ContactPoint, LocalizeError>;
}

impl Localizer for RegressorModel {
    fn locate(&self, event: &crate::audio_io::EventRecord) -> Result<crate::geometry::ContactPoint, LocalizeError> {
        self.predict(event)
    }
}
