//! Image synthesis over heightfield scenes.
//!
//! Primary rays are cast through a pinhole camera into a [`Scene`], shaded
//! with the Hapke reflectance under a parallel sun and optionally tested for
//! shadows. Frames are averaged over jittered subsamples whose offsets are a
//! pure function of `(seed, frame, pixel, sample)`, so output does not depend
//! on how rows are spread over worker threads.

mod boulders;
mod frame;
mod hapke;
pub mod heightfield;
mod scene;
mod sequence;

pub use boulders::{BoulderIndex, SeatedBoulder};
pub use frame::{render_frame, subsample_point, Frame, RenderConfig};
pub use hapke::{h_function, hapke_brdf, hapke_brdf_unchecked, hapke_reflectance, hg_phase, opposition_surge, HapkeParams};
pub use scene::{shade, trace_ray, Geometry, Hit, HitObject, Scene, MU_EPSILON};
pub use sequence::{render_trajectory, FrameStatus, RenderLog, RenderRecord, RENDER_LOG};

use crate::geom::GeomError;

#[derive(thiserror::Error, Debug)]
pub enum RenderError {
    #[error("invalid Hapke parameters: {0}")]
    InvalidHapke(String),
    #[error("outside the reflectance domain: {0}")]
    Domain(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("camera at height {camera_z} is below the terrain ({terrain_z})")]
    CameraBelowTerrain { camera_z: f64, terrain_z: f64 },
    #[error("frame {frame_id}: {source}")]
    Frame { frame_id: u64, source: Box<RenderError> },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Image(#[from] crate::imageio::ImageError),
    #[error(transparent)]
    Raster(#[from] crate::raster::RasterError),
    #[error("render log: {0}")]
    Log(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
