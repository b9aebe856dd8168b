//! Raw float32 raster files with a JSON sidecar header.
//!
//! The raster is little-endian IEEE-754 binary32, row-major, north-up (row 0
//! is the northern edge). The sidecar carries
//! `{ "ncols", "nrows", "cell_size_m", "origin_x_m", "origin_y_m", "nodata" }`
//! where the origin is the *center* of cell (0, 0). Depth maps and texel
//! grids reuse the same layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(thiserror::Error, Debug)]
pub enum RasterError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: malformed header: {reason}", path.display())]
    Header { path: PathBuf, reason: String },
    #[error("{}: header declares {expected} cells but raster holds {actual} bytes", path.display())]
    DimensionMismatch { path: PathBuf, expected: usize, actual: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub ncols: usize,
    pub nrows: usize,
    pub cell_size_m: f64,
    pub origin_x_m: f64,
    pub origin_y_m: f64,
    pub nodata: Option<f64>,
}

impl RasterHeader {
    /// Header for an image-aligned raster (depth maps, masks): unit cells, origin 0.
    pub fn image(width: usize, height: usize) -> Self {
        Self { ncols: width, nrows: height, cell_size_m: 1.0, origin_x_m: 0.0, origin_y_m: 0.0, nodata: None }
    }
}

/// Conventional sidecar path: the raster path with a `.json` extension.
pub fn sidecar_path(raster: &Path) -> PathBuf {
    raster.with_extension("json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterError + '_ {
    move |source| RasterError::Io { path: path.to_path_buf(), source }
}

pub fn encode_f32(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn write_raster(raster: &Path, header_path: &Path, header: &RasterHeader, values: &[f32]) -> Result<(), RasterError> {
    let mut json = serde_json::to_string_pretty(header).expect("header serializes");
    json.push('\n');
    fs::write(header_path, json).map_err(io_err(header_path))?;
    fs::write(raster, encode_f32(values)).map_err(io_err(raster))
}

pub fn read_header(header_path: &Path) -> Result<RasterHeader, RasterError> {
    let text = fs::read_to_string(header_path).map_err(io_err(header_path))?;
    let header: RasterHeader = serde_json::from_str(&text)
        .map_err(|e| RasterError::Header { path: header_path.to_path_buf(), reason: e.to_string() })?;
    if header.ncols == 0 || header.nrows == 0 {
        return Err(RasterError::Header { path: header_path.into(), reason: "empty grid".into() });
    }
    if !(header.cell_size_m > 0.0) || !header.cell_size_m.is_finite() {
        return Err(RasterError::Header { path: header_path.into(), reason: "cell_size_m must be positive".into() });
    }
    if !header.origin_x_m.is_finite() || !header.origin_y_m.is_finite() {
        return Err(RasterError::Header { path: header_path.into(), reason: "non-finite origin".into() });
    }
    Ok(header)
}

pub fn read_raster(raster: &Path, header_path: &Path) -> Result<(RasterHeader, Vec<f32>), RasterError> {
    let header = read_header(header_path)?;
    let bytes = fs::read(raster).map_err(io_err(raster))?;
    let expected = header.ncols * header.nrows;
    if bytes.len() != expected * 4 {
        return Err(RasterError::DimensionMismatch { path: raster.into(), expected, actual: bytes.len() });
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((header, values))
}
