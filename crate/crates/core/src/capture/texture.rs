use std::path::{Path, PathBuf};

use nalgebra::Point2;
use rayon::prelude::*;

use super::{CaptureError, CaptureView};
use crate::dem::DemGrid;
use crate::geom::{pixel_ray, CameraModel};
use crate::imageio;
use crate::raster::{self, RasterHeader};
use crate::render::{HitObject, Scene};

/// Samples whose unit-albedo shading is below this fraction of the brightest
/// sample are dropped (grazing light, near the terminator).
pub const SHADING_THRESHOLD: f64 = 0.01;

/// Albedo factors on the DEM lattice: texel `(col, row)` covers the area
/// nearest to node `(col, row)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TexelGrid {
    pub ncols: usize,
    pub nrows: usize,
    pub cell_size: f64,
    pub origin: (f64, f64),
    pub albedo: Vec<f64>,
    /// Accumulated `S²` over the samples behind each texel.
    pub weight: Vec<f64>,
    pub valid: Vec<bool>,
}

impl TexelGrid {
    /// Empty grid with one texel per node of `dem`.
    pub fn for_dem(dem: &DemGrid) -> Self {
        let n = dem.ncols() * dem.nrows();
        Self {
            ncols: dem.ncols(),
            nrows: dem.nrows(),
            cell_size: dem.cell_size(),
            origin: dem.origin(),
            albedo: vec![0.0; n],
            weight: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    /// Index of the texel nearest to world `(x, y)`, if inside the grid.
    pub fn texel_of(&self, x: f64, y: f64) -> Option<usize> {
        let c = ((x - self.origin.0) / self.cell_size).round();
        let r = ((self.origin.1 - y) / self.cell_size).round();
        if c < 0.0 || r < 0.0 || c >= self.ncols as f64 || r >= self.nrows as f64 {
            return None;
        }
        Some(r as usize * self.ncols + c as usize)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Albedo as a grid usable by [`Scene::with_albedo`]; invalid texels take `fill`.
    pub fn to_albedo_grid(&self, fill: f64) -> Result<DemGrid, CaptureError> {
        let v = self.albedo.iter().zip(&self.valid).map(|(&a, &ok)| if ok { a } else { fill }).collect();
        Ok(DemGrid::new(self.ncols, self.nrows, self.cell_size, self.origin, v)?)
    }

    /// `albedo.f32` → `albedo_valid.png`.
    pub fn mask_path(raster: &Path) -> PathBuf {
        let stem = raster.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        raster.with_file_name(format!("{stem}_valid.png"))
    }

    /// Float32 albedo raster (invalid texels stored as 0) with its JSON sidecar
    /// and a validity PNG.
    pub fn save(&self, raster_path: &Path) -> Result<(), CaptureError> {
        let header = RasterHeader {
            ncols: self.ncols,
            nrows: self.nrows,
            cell_size_m: self.cell_size,
            origin_x_m: self.origin.0,
            origin_y_m: self.origin.1,
            nodata: None,
        };
        let v: Vec<f32> = self.albedo.iter().zip(&self.valid).map(|(&a, &ok)| if ok { a as f32 } else { 0.0 }).collect();
        raster::write_raster(raster_path, &raster::sidecar_path(raster_path), &header, &v)?;
        imageio::write_mask(&Self::mask_path(raster_path), self.ncols as u32, self.nrows as u32, &self.valid)?;
        Ok(())
    }

    /// Reads what [`TexelGrid::save`] wrote; weights are not stored and come
    /// back as 1 on valid texels.
    pub fn load(raster_path: &Path) -> Result<Self, CaptureError> {
        let (h, v) = raster::read_raster(raster_path, &raster::sidecar_path(raster_path))?;
        let (w, hh, valid) = imageio::read_mask(&Self::mask_path(raster_path))?;
        if (w as usize, hh as usize) != (h.ncols, h.nrows) {
            return Err(CaptureError::InvalidProblem("texel mask size differs from the raster".into()));
        }
        Ok(Self {
            ncols: h.ncols,
            nrows: h.nrows,
            cell_size: h.cell_size_m,
            origin: (h.origin_x_m, h.origin_y_m),
            albedo: v.iter().map(|&a| a as f64).collect(),
            weight: valid.iter().map(|&ok| if ok { 1.0 } else { 0.0 }).collect(),
            valid,
        })
    }
}

struct Sample {
    texel: usize,
    shading: f64,
    dn: f64,
}

/// Recovers a per-texel albedo factor from views of `scene` taken with
/// `camera` at digital gain `gain`.
///
/// Each pixel's center ray is traced; a directly lit terrain hit with unit
/// albedo shading `S = gain · E · μ0 · brdf` contributes the estimate `DN / S`
/// with weight `S²` to the texel under it. Saturated pixels and samples with
/// `S` below [`SHADING_THRESHOLD`] of the brightest one are skipped; texels
/// that receive nothing stay invalid.
pub fn backproject_textures(
    views: &[CaptureView],
    camera: &CameraModel,
    scene: &Scene,
    gain: f64,
) -> Result<TexelGrid, CaptureError> {
    camera.validate()?;
    if !(gain > 0.0) || !gain.is_finite() {
        return Err(CaptureError::InvalidProblem("gain must be > 0".into()));
    }
    let mut grid = TexelGrid::for_dem(scene.dem());
    let w = camera.width as usize;
    let mut samples = Vec::new();
    for view in views {
        if (view.image.width, view.image.height) != (camera.width, camera.height) {
            return Err(CaptureError::InvalidProblem(format!(
                "image is {}x{}, camera is {}x{}",
                view.image.width, view.image.height, camera.width, camera.height
            )));
        }
        let full = view.image.full_scale();
        let rows: Vec<Vec<Sample>> = (0..camera.height as usize)
            .into_par_iter()
            .map(|py| {
                let mut row = Vec::new();
                for px in 0..w {
                    let dn = view.image.pixels[py * w + px] as f64;
                    if dn >= full {
                        continue;
                    }
                    let ray = pixel_ray(camera, &view.pose, Point2::new(px as f64, py as f64));
                    let Some(hit) = scene.trace(&ray) else { continue };
                    if hit.object != HitObject::Terrain {
                        continue;
                    }
                    let Some(texel) = grid.texel_of(hit.point.x, hit.point.y) else { continue };
                    let shading = gain * scene.unit_albedo_radiance(&hit, &ray.direction);
                    if shading <= 0.0 || scene.in_shadow(&hit) {
                        continue;
                    }
                    row.push(Sample { texel, shading, dn });
                }
                row
            })
            .collect();
        samples.extend(rows.into_iter().flatten());
    }
    let max_s = samples.iter().map(|s| s.shading).fold(0.0, f64::max);
    let mut num = vec![0.0; grid.albedo.len()];
    for s in samples.iter().filter(|s| s.shading > SHADING_THRESHOLD * max_s) {
        num[s.texel] += s.dn * s.shading;
        grid.weight[s.texel] += s.shading * s.shading;
    }
    for i in 0..num.len() {
        if grid.weight[i] > 0.0 {
            grid.albedo[i] = num[i] / grid.weight[i];
            grid.valid[i] = true;
        }
    }
    if grid.valid_count() == 0 {
        return Err(CaptureError::NoOverlap);
    }
    Ok(grid)
}
