//! Exact ground truth derived from geometry.
//!
//! Dense forward optical flow between two rendered views follows from the
//! first view's depth map and both poses; a depth test against the second
//! view's depth map masks occluded and disoccluded pixels. Camera poses can
//! also be recovered from unit bearings to known landmarks by per-frame
//! damped Gauss–Newton resection.

mod flo;
mod flow;
mod los;

pub use flo::{encode_flo, flow_mask_path, read_flo, write_flo, write_flow, FLO_MAGIC, INVALID_SENTINEL};
pub use flow::{compute_flow, DepthMap, FlowField, OcclusionTolerance};
pub use los::{
    bearing_jacobian, bearing_residual, invert_los, read_landmarks, read_observations, write_landmarks,
    write_observations, FrameReport, LandmarkSet, LosInversion, LosObservation, SolverOptions,
};

use std::path::PathBuf;

#[derive(thiserror::Error, Debug)]
pub enum GroundTruthError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("frame {frame_id} is unobservable: {reason}")]
    Unobservable { frame_id: u64, reason: String },
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("unknown landmark {0}")]
    UnknownLandmark(u64),
    #[error("{}: not a flow file ({reason})", path.display())]
    BadFlo { path: PathBuf, reason: String },
    #[error(transparent)]
    Geom(#[from] crate::geom::GeomError),
    #[error(transparent)]
    Raster(#[from] crate::raster::RasterError),
    #[error(transparent)]
    Image(#[from] crate::imageio::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
