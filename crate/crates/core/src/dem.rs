//! Heightfield rasters: loading, bilinear sampling, resampling and
//! multi-resolution fusion.
//!
//! A [`DemGrid`] stores heights at cell *centers* (nodes). Node `(col, row)`
//! sits at world `(origin_x + col·cell, origin_y − row·cell)`: rows run
//! north to south, matching the on-disk north-up raster.

use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::raster::{self, RasterError, RasterHeader};

/// Slack, in cells, when testing whether a query lies on the grid boundary.
const EDGE_EPS: f64 = 1e-9;

#[derive(thiserror::Error, Debug)]
pub enum DemError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("non-finite or nodata height at cell ({col}, {row})")]
    BadHeight { col: usize, row: usize },
    #[error("grid holds {actual} heights, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("query ({x}, {y}) outside the grid coverage")]
    OutOfBounds { x: f64, y: f64 },
    #[error("invalid cell size {0}")]
    InvalidCellSize(f64),
    #[error("high-resolution grid is not contained in the low-resolution grid")]
    NotContained,
    #[error("grids have no overlapping area")]
    EmptyOverlap,
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
}

/// Axis-aligned world rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Extent {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn contains_extent(&self, other: &Extent, tol: f64) -> bool {
        other.x_min >= self.x_min - tol
            && other.x_max <= self.x_max + tol
            && other.y_min >= self.y_min - tol
            && other.y_max <= self.y_max + tol
    }
}

/// Regular heightfield raster in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct DemGrid {
    ncols: usize,
    nrows: usize,
    cell_size: f64,
    origin_x: f64,
    origin_y: f64,
    heights: Vec<f64>,
}

impl DemGrid {
    pub fn new(
        ncols: usize,
        nrows: usize,
        cell_size: f64,
        origin: (f64, f64),
        heights: Vec<f64>,
    ) -> Result<Self, DemError> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(DemError::InvalidCellSize(cell_size));
        }
        if ncols == 0 || nrows == 0 || ncols * nrows != heights.len() {
            return Err(DemError::DimensionMismatch { expected: ncols * nrows, actual: heights.len() });
        }
        if let Some(i) = heights.iter().position(|h| !h.is_finite()) {
            return Err(DemError::BadHeight { col: i % ncols, row: i / ncols });
        }
        Ok(Self { ncols, nrows, cell_size, origin_x: origin.0, origin_y: origin.1, heights })
    }

    /// Grid filled from a function of world `(x, y)`.
    pub fn from_fn(
        ncols: usize,
        nrows: usize,
        cell_size: f64,
        origin: (f64, f64),
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, DemError> {
        let mut heights = Vec::with_capacity(ncols * nrows);
        for row in 0..nrows {
            for col in 0..ncols {
                heights.push(f(origin.0 + col as f64 * cell_size, origin.1 - row as f64 * cell_size));
            }
        }
        Self::new(ncols, nrows, cell_size, origin, heights)
    }

    pub fn constant(ncols: usize, nrows: usize, cell_size: f64, origin: (f64, f64), h: f64) -> Result<Self, DemError> {
        Self::new(ncols, nrows, cell_size, origin, vec![h; ncols * nrows])
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.origin_x, self.origin_y)
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn into_heights(self) -> Vec<f64> {
        self.heights
    }

    /// Same georeferencing, new heights.
    pub fn with_heights(&self, heights: Vec<f64>) -> Result<Self, DemError> {
        Self::new(self.ncols, self.nrows, self.cell_size, self.origin(), heights)
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.heights[row * self.ncols + col]
    }

    #[inline]
    pub fn node_xy(&self, col: usize, row: usize) -> (f64, f64) {
        (self.origin_x + col as f64 * self.cell_size, self.origin_y - row as f64 * self.cell_size)
    }

    /// Continuous `(col, row)` coordinates of a world point.
    #[inline]
    pub fn to_grid(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin_x) / self.cell_size, (self.origin_y - y) / self.cell_size)
    }

    /// Region spanned by the node centers.
    pub fn extent(&self) -> Extent {
        Extent {
            x_min: self.origin_x,
            x_max: self.origin_x + (self.ncols - 1) as f64 * self.cell_size,
            y_min: self.origin_y - (self.nrows - 1) as f64 * self.cell_size,
            y_max: self.origin_y,
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.heights.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &h| (lo.min(h), hi.max(h)))
    }

    fn in_coverage(&self, c: f64, r: f64) -> bool {
        c >= -EDGE_EPS
            && r >= -EDGE_EPS
            && c <= (self.ncols - 1) as f64 + EDGE_EPS
            && r <= (self.nrows - 1) as f64 + EDGE_EPS
    }

    /// Bilinear interpolation on continuous grid coordinates, clamped to the grid.
    #[inline]
    pub fn sample_grid_clamped(&self, c: f64, r: f64) -> f64 {
        let c = c.clamp(0.0, (self.ncols - 1) as f64);
        let r = r.clamp(0.0, (self.nrows - 1) as f64);
        let i = (c.floor() as usize).min(self.ncols.saturating_sub(2));
        let j = (r.floor() as usize).min(self.nrows.saturating_sub(2));
        let fu = c - i as f64;
        let fv = r - j as f64;
        let i1 = (i + 1).min(self.ncols - 1);
        let j1 = (j + 1).min(self.nrows - 1);
        let h00 = self.at(i, j);
        let h10 = self.at(i1, j);
        let h01 = self.at(i, j1);
        let h11 = self.at(i1, j1);
        if fu == 0.0 && fv == 0.0 {
            return h00;
        }
        (h00 * (1.0 - fu) + h10 * fu) * (1.0 - fv) + (h01 * (1.0 - fu) + h11 * fu) * fv
    }

    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let (c, r) = self.to_grid(x, y);
        self.sample_grid_clamped(c, r)
    }

    /// Bilinear height at a world point inside the node coverage.
    pub fn sample_height(&self, x: f64, y: f64) -> Result<f64, DemError> {
        let (c, r) = self.to_grid(x, y);
        if !self.in_coverage(c, r) {
            return Err(DemError::OutOfBounds { x, y });
        }
        Ok(self.sample_grid_clamped(c, r))
    }

    /// Surface normal from central differences with a one-cell step. The
    /// query must be at least one cell inside the boundary.
    pub fn normal_at(&self, x: f64, y: f64) -> Result<Vector3<f64>, DemError> {
        let (c, r) = self.to_grid(x, y);
        let inner = c >= 1.0 - EDGE_EPS
            && r >= 1.0 - EDGE_EPS
            && c <= (self.ncols as f64 - 2.0) + EDGE_EPS
            && r <= (self.nrows as f64 - 2.0) + EDGE_EPS;
        if !inner {
            return Err(DemError::OutOfBounds { x, y });
        }
        Ok(self.normal_clamped(x, y))
    }

    /// Like [`DemGrid::normal_at`] but usable up to the edge (one-sided near borders).
    pub fn normal_clamped(&self, x: f64, y: f64) -> Vector3<f64> {
        let s = self.cell_size;
        let dhdx = (self.sample_clamped(x + s, y) - self.sample_clamped(x - s, y)) / (2.0 * s);
        let dhdy = (self.sample_clamped(x, y + s) - self.sample_clamped(x, y - s)) / (2.0 * s);
        Vector3::new(-dhdx, -dhdy, 1.0).normalize()
    }

    pub fn header(&self) -> RasterHeader {
        RasterHeader {
            ncols: self.ncols,
            nrows: self.nrows,
            cell_size_m: self.cell_size,
            origin_x_m: self.origin_x,
            origin_y_m: self.origin_y,
            nodata: None,
        }
    }

    /// Writes the float32 raster and its sidecar. Heights are narrowed to f32.
    pub fn write(&self, raster_path: &Path, header_path: &Path) -> Result<(), DemError> {
        let values: Vec<f32> = self.heights.iter().map(|&h| h as f32).collect();
        raster::write_raster(raster_path, header_path, &self.header(), &values)?;
        Ok(())
    }
}

pub fn load_dem(raster_path: &Path, header_path: &Path) -> Result<DemGrid, DemError> {
    let (h, values) = raster::read_raster(raster_path, header_path)?;
    if let Some(i) = values.iter().position(|v| !v.is_finite() || h.nodata.is_some_and(|nd| *v as f64 == nd)) {
        return Err(DemError::BadHeight { col: i % h.ncols, row: i / h.ncols });
    }
    DemGrid::new(h.ncols, h.nrows, h.cell_size_m, (h.origin_x_m, h.origin_y_m), values.iter().map(|&v| v as f64).collect())
}

pub fn write_dem(dem: &DemGrid, raster_path: &Path, header_path: &Path) -> Result<(), DemError> {
    dem.write(raster_path, header_path)
}

/// Number of nodes of spacing `cell` that fit in `length`, counting both ends.
fn node_count(length: f64, cell: f64) -> usize {
    (length / cell + 1e-9).floor() as usize + 1
}

/// Re-grids `dem` to `new_cell_size` over the same extent, anchored at the
/// same origin, by bilinear sampling.
pub fn resample(dem: &DemGrid, new_cell_size: f64) -> Result<DemGrid, DemError> {
    if !(new_cell_size > 0.0) || !new_cell_size.is_finite() {
        return Err(DemError::InvalidCellSize(new_cell_size));
    }
    let ext = dem.extent();
    let ncols = node_count(ext.width(), new_cell_size);
    let nrows = node_count(ext.height(), new_cell_size);
    let origin = dem.origin();
    let mut heights = vec![0.0; ncols * nrows];
    heights.par_chunks_mut(ncols).enumerate().for_each(|(row, line)| {
        let y = origin.1 - row as f64 * new_cell_size;
        for (col, h) in line.iter_mut().enumerate() {
            let x = origin.0 + col as f64 * new_cell_size;
            *h = dem.sample_clamped(x, y);
        }
    });
    DemGrid::new(ncols, nrows, new_cell_size, origin, heights)
}

/// Seam treatment for [`fuse`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Width of the linear blend band inside the high-resolution footprint.
    pub feather_width: f64,
    /// Shift the high-resolution grid by `mean(low − high)` over its footprint first.
    pub offset_correction: bool,
}

impl FusionConfig {
    /// 20 output cells of feathering, offset correction on.
    pub fn for_cell_size(cell_size: f64) -> Self {
        Self { feather_width: 20.0 * cell_size, offset_correction: true }
    }
}

/// Vertical shift that removes the mean difference between `low` and `high`
/// over `high`'s nodes.
pub fn mean_offset(low: &DemGrid, high: &DemGrid) -> f64 {
    let sum: f64 = (0..high.nrows)
        .into_par_iter()
        .map(|row| {
            (0..high.ncols)
                .map(|col| {
                    let (x, y) = high.node_xy(col, row);
                    low.sample_clamped(x, y) - high.at(col, row)
                })
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    sum / high.heights.len() as f64
}

/// Merges a high-resolution patch into a low-resolution base.
///
/// The output has `high`'s cell size, is aligned with `high`'s node lattice
/// and covers as much of `low`'s extent as that lattice allows. Nodes deeper
/// than `feather_width` inside `high`'s footprint take the (offset-corrected)
/// high value, nodes outside the footprint take the bilinearly resampled low
/// value, and the band in between blends linearly with distance to the
/// footprint boundary.
pub fn fuse(low: &DemGrid, high: &DemGrid, cfg: &FusionConfig) -> Result<DemGrid, DemError> {
    if !(cfg.feather_width >= 0.0) || !cfg.feather_width.is_finite() {
        return Err(DemError::InvalidConfig(format!("feather_width {}", cfg.feather_width)));
    }
    let le = low.extent();
    let he = high.extent();
    let cs = high.cell_size;
    if !le.contains_extent(&he, 1e-9 * cs.max(low.cell_size)) {
        return Err(DemError::NotContained);
    }
    if he.area() <= 0.0 {
        return Err(DemError::EmptyOverlap);
    }
    let kx = ((he.x_min - le.x_min) / cs + 1e-9).floor();
    let ky = ((le.y_max - he.y_max) / cs + 1e-9).floor();
    let origin = (he.x_min - kx * cs, he.y_max + ky * cs);
    let ncols = node_count(le.x_max - origin.0, cs);
    let nrows = node_count(origin.1 - le.y_min, cs);
    let offset = if cfg.offset_correction { mean_offset(low, high) } else { 0.0 };
    let feather = cfg.feather_width;
    let inside_tol = 1e-9 * cs;

    let mut heights = vec![0.0; ncols * nrows];
    heights.par_chunks_mut(ncols).enumerate().for_each(|(row, line)| {
        let y = origin.1 - row as f64 * cs;
        for (col, out) in line.iter_mut().enumerate() {
            let x = origin.0 + col as f64 * cs;
            let d = (x - he.x_min).min(he.x_max - x).min(y - he.y_min).min(he.y_max - y);
            let lo = || low.sample_clamped(x, y);
            if d < -inside_tol {
                *out = lo();
                continue;
            }
            let hi = high.sample_clamped(x, y) + offset;
            *out = if feather == 0.0 || d >= feather {
                hi
            } else if d <= 0.0 {
                lo()
            } else {
                let a = lo();
                a + (d / feather) * (hi - a)
            };
        }
    });
    DemGrid::new(ncols, nrows, cs, origin, heights)
}

/// Sub-grid `[col0, col0+ncols) × [row0, row0+nrows)`.
pub fn crop(dem: &DemGrid, col0: usize, row0: usize, ncols: usize, nrows: usize) -> Result<DemGrid, DemError> {
    if col0 + ncols > dem.ncols || row0 + nrows > dem.nrows || ncols == 0 || nrows == 0 {
        return Err(DemError::NotContained);
    }
    let heights = (row0..row0 + nrows).flat_map(|r| (col0..col0 + ncols).map(move |c| (c, r))).map(|(c, r)| dem.at(c, r));
    let origin = dem.node_xy(col0, row0);
    DemGrid::new(ncols, nrows, dem.cell_size, origin, heights.collect())
}
