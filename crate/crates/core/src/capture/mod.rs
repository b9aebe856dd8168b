//! Model capture on heightfield scenes.
//!
//! With the geometry known, photographs can be pushed back into texture space
//! to recover a per-texel albedo factor ([`backproject_textures`]), and the
//! reflectance parameters can be tuned until re-rendered views match the
//! photographs ([`fit_brdf`]). The machinery only needs ray hits and shading
//! geometry, so it is not tied to terrain, but this crate exercises it on
//! heightfield scenes only.

mod fit;
mod texture;

pub use fit::{fit_brdf, CaptureProblem, FitOptions, FitResult, FreeParam};
pub use texture::{backproject_textures, TexelGrid, SHADING_THRESHOLD};

use crate::geom::Pose;
use crate::imageio::GrayImage;

/// A reference photograph and the pose it was taken from.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptureView {
    pub image: GrayImage,
    pub pose: Pose,
}

#[derive(thiserror::Error, Debug)]
pub enum CaptureError {
    #[error("no image pixel lands on a usable texel")]
    NoOverlap,
    #[error("reference images carry no signal")]
    NoSignal,
    #[error("invalid capture problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Render(#[from] crate::render::RenderError),
    #[error(transparent)]
    Geom(#[from] crate::geom::GeomError),
    #[error(transparent)]
    Dem(#[from] crate::dem::DemError),
    #[error(transparent)]
    Raster(#[from] crate::raster::RasterError),
    #[error(transparent)]
    Image(#[from] crate::imageio::ImageError),
}
