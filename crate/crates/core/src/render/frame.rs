use nalgebra::Point2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{RenderError, Scene};
use crate::geom::{pixel_ray, CameraModel, Pose};
use crate::hash;

const TAG_JITTER: u64 = 0x4a49_5454;
const TAG_NOISE: u64 = 0x4e4f_4953;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// `n` for `n × n` subsamples per pixel.
    pub supersampling: u32,
    pub shadows: bool,
    /// Digital numbers per W·m⁻²·sr⁻¹.
    pub gain: f64,
    pub bit_depth: u8,
    pub seed: u64,
    /// Jitter subsamples inside their strata; off places them at stratum centers.
    #[serde(default = "default_true")]
    pub jitter: bool,
    /// Additive Gaussian read noise, standard deviation in DN.
    #[serde(default)]
    pub read_noise_dn: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { supersampling: 2, shadows: true, gain: 1000.0, bit_depth: 8, seed: 0, jitter: true, read_noise_dn: None }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: &str| Err(RenderError::InvalidConfig(m.into()));
        if self.supersampling < 1 {
            return bad("supersampling must be >= 1");
        }
        if !(self.gain > 0.0) || !self.gain.is_finite() {
            return bad("gain must be > 0");
        }
        if self.bit_depth != 8 && self.bit_depth != 16 {
            return bad("bit_depth must be 8 or 16");
        }
        if self.read_noise_dn.is_some_and(|s| !(s >= 0.0) || !s.is_finite()) {
            return bad("read noise sigma must be >= 0");
        }
        Ok(())
    }

    pub fn max_dn(&self) -> f64 {
        ((1u32 << self.bit_depth) - 1) as f64
    }
}

/// One rendered view.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub bit_depth: u8,
    /// Mean radiance per pixel, W·m⁻²·sr⁻¹.
    pub radiance: Vec<f64>,
    /// Quantized digital numbers.
    pub dn: Vec<u16>,
    /// Camera-frame depth of the center ray in meters; `+∞` on a miss.
    pub depth: Vec<f64>,
}

impl Frame {
    /// `gain · radiance` before rounding and clamping.
    pub fn pre_clamp(&self, gain: f64) -> Vec<f64> {
        self.radiance.iter().map(|r| gain * r).collect()
    }
}

/// Renders one view. `frame_index` keys the subsample jitter.
pub fn render_frame(
    scene: &Scene,
    camera: &CameraModel,
    pose: &Pose,
    cfg: &RenderConfig,
    frame_index: u64,
) -> Result<Frame, RenderError> {
    cfg.validate()?;
    camera.validate()?;
    let dem = scene.dem();
    let p = pose.position;
    if dem.extent().contains(p.x, p.y) {
        let terrain_z = dem.sample_clamped(p.x, p.y);
        if p.z <= terrain_z {
            return Err(RenderError::CameraBelowTerrain { camera_z: p.z, terrain_z });
        }
    }
    let (w, h) = (camera.width as usize, camera.height as usize);
    let n = cfg.supersampling as usize;
    let inv_n = 1.0 / n as f64;
    let max_dn = cfg.max_dn();
    let mut radiance = vec![0.0; w * h];
    let mut depth = vec![f64::INFINITY; w * h];
    let mut dn = vec![0u16; w * h];

    radiance
        .par_chunks_mut(w)
        .zip(depth.par_chunks_mut(w))
        .zip(dn.par_chunks_mut(w))
        .enumerate()
        .for_each(|(py, ((rad_row, depth_row), dn_row))| {
            for px in 0..w {
                let center = pixel_ray(camera, pose, Point2::new(px as f64, py as f64));
                if let Some(hit) = scene.trace(&center) {
                    depth_row[px] = pose.world_to_camera(&hit.point).z;
                }
                let mut sum = 0.0;
                for s in 0..n * n {
                    let ray = pixel_ray(camera, pose, subsample_point(cfg, frame_index, px, py, s));
                    if let Some(hit) = scene.trace(&ray) {
                        sum += scene.shade(&hit, &ray.direction, cfg.shadows);
                    }
                }
                let mean = sum * inv_n * inv_n;
                rad_row[px] = mean;
                let mut value = cfg.gain * mean;
                if let Some(sigma) = cfg.read_noise_dn {
                    value += sigma * gaussian(hash::derive(cfg.seed ^ TAG_NOISE, &[frame_index, px as u64, py as u64]));
                }
                dn_row[px] = value.round().clamp(0.0, max_dn) as u16;
            }
        });
    Ok(Frame { width: camera.width, height: camera.height, bit_depth: cfg.bit_depth, radiance, dn, depth })
}

/// Image position of subsample `s` of pixel `(px, py)`: stratum `s` of an
/// `n × n` grid, jittered inside its stratum unless `cfg.jitter` is off.
pub fn subsample_point(cfg: &RenderConfig, frame_index: u64, px: usize, py: usize, s: usize) -> Point2<f64> {
    let n = cfg.supersampling as usize;
    let inv_n = 1.0 / n as f64;
    let (sx, sy) = ((s % n) as f64, (s / n) as f64);
    let (jx, jy) = if cfg.jitter {
        let hx = hash::derive(cfg.seed ^ TAG_JITTER, &[frame_index, px as u64, py as u64, s as u64]);
        (hash::unit_f64(hx), hash::unit_f64(hash::mix64(hx)))
    } else {
        (0.5, 0.5)
    };
    Point2::new(px as f64 - 0.5 + (sx + jx) * inv_n, py as f64 - 0.5 + (sy + jy) * inv_n)
}

/// Standard normal draw from one hash value (Box–Muller).
fn gaussian(h: u64) -> f64 {
    let u1 = 1.0 - hash::unit_f64(h);
    let u2 = hash::unit_f64(hash::mix64(h));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
