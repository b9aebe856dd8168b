//! Dataset manifests, dataset validation, and the end-point-error harness.

mod catalog;
mod epe;
mod manifest;
mod validate;

pub use catalog::{catalog, catalog_entry, catalog_manifest, CatalogEntry};
pub use epe::{epe, epe_many, evaluate_predictions, EpeReport};
pub use manifest::{
    build_manifest, ConfigSnapshot, DatasetHeader, DatasetKind, DatasetManifest, FrameRecord, Scenario, SequenceInfo,
    MANIFEST_VERSION,
};
pub use validate::{validate_dataset, CheckResult, ValidationMode, ValidationOptions, ValidationReport};

use std::path::PathBuf;

#[derive(thiserror::Error, Debug)]
pub enum BenchError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("ground truth has no valid pixels")]
    NoValidPixels,
    #[error("a dataset needs at least one frame")]
    EmptyFrames,
    #[error("frame id {0} appears more than once")]
    DuplicateFrame(u64),
    #[error("frame {frame_id}: missing file {}", path.display())]
    MissingFile { frame_id: u64, path: PathBuf },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error(transparent)]
    GroundTruth(#[from] crate::groundtruth::GroundTruthError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
