//! Synthetic lunar-landing datasets with exact ground truth.
//!
//! The crate turns digital elevation models into rendered image sequences
//! with camera poses, depth maps and dense optical flow, and evaluates flow
//! predictions against that ground truth. The pipeline, module by module:
//!
//! * [`dem`]: load, resample and fuse multi-resolution heightfields;
//! * [`procedural`]: seeded craters, boulders and Perlin detail;
//! * [`render`]: max-mipmap ray casting with Hapke shading and sun shadows;
//! * [`groundtruth`]: flow from depth + poses, pose recovery from bearings;
//! * [`capture`]: albedo back-projection and photometric parameter fitting;
//! * [`bench`]: dataset manifests, validation and end-point error;
//! * [`pipeline`]: the configuration-driven end-to-end run.
//!
//! Geometry conventions live in [`geom`].

pub mod bench;
pub mod capture;
pub mod dem;
pub mod geom;
pub mod groundtruth;
pub mod hash;
pub mod imageio;
pub mod pipeline;
pub mod procedural;
pub mod raster;
pub mod render;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    pub mod geometry {}
    #[doc = include_str!("../../../book/src/terrain.md")]
    pub mod terrain {}
    #[doc = include_str!("../../../book/src/rendering.md")]
    pub mod rendering {}
    #[doc = include_str!("../../../book/src/ground_truth.md")]
    pub mod ground_truth {}
    #[doc = include_str!("../../../book/src/capture.md")]
    pub mod capture {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    pub mod datasets {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    pub mod pipeline {}
}
