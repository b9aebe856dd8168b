//! Middlebury `.flo` files with a companion validity PNG.

use std::fs;
use std::path::{Path, PathBuf};

use super::{FlowField, GroundTruthError};
use crate::imageio;

pub const FLO_MAGIC: f32 = 202021.25;
/// Stored for both components of invalid pixels.
pub const INVALID_SENTINEL: f32 = 1e9;

/// `flow_00003.flo` → `flow_00003_valid.png`.
pub fn flow_mask_path(flo: &Path) -> PathBuf {
    let stem = flo.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    flo.with_file_name(format!("{stem}_valid.png"))
}

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * flow.len());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for i in 0..flow.len() {
        let (u, v) = if flow.valid[i] { (flow.u[i], flow.v[i]) } else { (INVALID_SENTINEL, INVALID_SENTINEL) };
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<(), GroundTruthError> {
    fs::write(path, encode_flo(flow))?;
    Ok(())
}

/// Writes the `.flo` file and its validity mask next to it.
pub fn write_flow(path: &Path, flow: &FlowField) -> Result<(), GroundTruthError> {
    write_flo(path, flow)?;
    imageio::write_mask(&flow_mask_path(path), flow.width, flow.height, &flow.valid)?;
    Ok(())
}

/// Reads a `.flo` file; sentinel pixels come back invalid with zero flow.
pub fn read_flo(path: &Path) -> Result<FlowField, GroundTruthError> {
    let bytes = fs::read(path)?;
    let bad = |reason: String| GroundTruthError::BadFlo { path: path.to_path_buf(), reason };
    if bytes.len() < 12 {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let word = |i: usize| <[u8; 4]>::try_from(&bytes[i..i + 4]).unwrap();
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(bad(format!("magic {magic}")));
    }
    let (w, h) = (i32::from_le_bytes(word(4)), i32::from_le_bytes(word(8)));
    if w < 1 || h < 1 {
        return Err(bad(format!("dimensions {w}x{h}")));
    }
    let n = w as usize * h as usize;
    if bytes.len() != 12 + 8 * n {
        return Err(bad(format!("{} bytes for {w}x{h}", bytes.len())));
    }
    let mut flow = FlowField::zeros(w as u32, h as u32);
    for i in 0..n {
        let u = f32::from_le_bytes(word(12 + 8 * i));
        let v = f32::from_le_bytes(word(16 + 8 * i));
        if u.is_finite() && v.is_finite() && u.abs() < INVALID_SENTINEL / 2.0 && v.abs() < INVALID_SENTINEL / 2.0 {
            flow.u[i] = u;
            flow.v[i] = v;
            flow.valid[i] = true;
        }
    }
    Ok(flow)
}
