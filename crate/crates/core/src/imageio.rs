//! Grayscale PNG I/O (8 or 16 bit).

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

#[derive(thiserror::Error, Debug)]
pub enum ImageError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: png encode: {source}", path.display())]
    Encode { path: PathBuf, source: png::EncodingError },
    #[error("{}: png decode: {source}", path.display())]
    Decode { path: PathBuf, source: png::DecodingError },
    #[error("{}: unsupported png layout ({layout})", path.display())]
    Unsupported { path: PathBuf, layout: String },
    #[error("pixel buffer has {actual} values, expected {expected}")]
    Size { expected: usize, actual: usize },
    #[error("bit depth must be 8 or 16, got {0}")]
    BitDepth(u8),
}

/// Decoded grayscale image; 8-bit images are widened to `u16` values 0..=255.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub bit_depth: u8,
    pub pixels: Vec<u16>,
}

impl GrayImage {
    pub fn full_scale(&self) -> f64 {
        ((1u32 << self.bit_depth) - 1) as f64
    }
}

pub fn write_gray(path: &Path, width: u32, height: u32, bit_depth: u8, pixels: &[u16]) -> Result<(), ImageError> {
    let expected = width as usize * height as usize;
    if pixels.len() != expected {
        return Err(ImageError::Size { expected, actual: pixels.len() });
    }
    let (depth, bytes) = match bit_depth {
        8 => (png::BitDepth::Eight, pixels.iter().map(|&p| p.min(255) as u8).collect::<Vec<_>>()),
        16 => (png::BitDepth::Sixteen, pixels.iter().flat_map(|p| p.to_be_bytes()).collect()),
        other => return Err(ImageError::BitDepth(other)),
    };
    let file = File::create(path).map_err(|source| ImageError::Io { path: path.into(), source })?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width, height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(depth);
    let encode = |source| ImageError::Encode { path: path.into(), source };
    let mut writer = enc.write_header().map_err(encode)?;
    writer.write_image_data(&bytes).map_err(encode)?;
    writer.finish().map_err(encode)
}

fn open(path: &Path) -> Result<png::Reader<std::io::BufReader<File>>, ImageError> {
    let file = File::open(path).map_err(|source| ImageError::Io { path: path.into(), source })?;
    png::Decoder::new(std::io::BufReader::new(file))
        .read_info()
        .map_err(|source| ImageError::Decode { path: path.into(), source })
}

/// Width and height from the header alone.
pub fn dimensions(path: &Path) -> Result<(u32, u32), ImageError> {
    let reader = open(path)?;
    let info = reader.info();
    Ok((info.width, info.height))
}

pub fn read_gray(path: &Path) -> Result<GrayImage, ImageError> {
    let mut reader = open(path)?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale || !matches!(depth, png::BitDepth::Eight | png::BitDepth::Sixteen) {
        return Err(ImageError::Unsupported { path: path.into(), layout: format!("{color:?} {depth:?}") });
    }
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|source| ImageError::Decode { path: path.into(), source })?;
    let bytes = &buf[..info.buffer_size()];
    let (bit_depth, pixels) = match depth {
        png::BitDepth::Sixteen => (16, bytes.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()),
        _ => (8, bytes.iter().map(|&b| b as u16).collect()),
    };
    Ok(GrayImage { width: info.width, height: info.height, bit_depth, pixels })
}

/// 8-bit mask: 255 where `mask` is set.
pub fn write_mask(path: &Path, width: u32, height: u32, mask: &[bool]) -> Result<(), ImageError> {
    let px: Vec<u16> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_gray(path, width, height, 8, &px)
}

pub fn read_mask(path: &Path) -> Result<(u32, u32, Vec<bool>), ImageError> {
    let img = read_gray(path)?;
    Ok((img.width, img.height, img.pixels.iter().map(|&p| p > 0).collect()))
}
