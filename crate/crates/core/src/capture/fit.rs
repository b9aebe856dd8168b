use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CaptureError, CaptureView};
use crate::geom::{pixel_ray, CameraModel};
use crate::render::{hapke_brdf_unchecked, subsample_point, HapkeParams, RenderConfig, Scene};

/// Parameters the fit may adjust.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreeParam {
    W,
    B,
    B0,
    H,
    Gain,
}

impl FreeParam {
    pub const ALL: [FreeParam; 5] = [FreeParam::W, FreeParam::B, FreeParam::B0, FreeParam::H, FreeParam::Gain];

    pub fn name(self) -> &'static str {
        match self {
            FreeParam::W => "w",
            FreeParam::B => "b",
            FreeParam::B0 => "b0",
            FreeParam::H => "h",
            FreeParam::Gain => "gain",
        }
    }

    /// Unconstrained coordinate of a parameter value.
    fn to_free(self, p: &HapkeParams, gain: f64) -> f64 {
        match self {
            FreeParam::W => (p.w / (1.0 - p.w)).ln(),
            FreeParam::B => p.b.atanh(),
            FreeParam::B0 => p.b0.ln(),
            FreeParam::H => p.h.ln(),
            FreeParam::Gain => gain.ln(),
        }
    }

    fn apply(self, x: f64, p: &mut HapkeParams, gain: &mut f64) {
        // keeps exp() positive and tanh() strictly inside (-1, 1)
        let x = x.clamp(-700.0, 700.0);
        match self {
            FreeParam::W => p.w = 1.0 / (1.0 + (-x).exp()),
            FreeParam::B => p.b = x.tanh().clamp(-1.0 + f64::EPSILON, 1.0 - f64::EPSILON),
            FreeParam::B0 => p.b0 = x.exp(),
            FreeParam::H => p.h = x.exp(),
            FreeParam::Gain => *gain = x.exp(),
        }
    }
}

impl fmt::Display for FreeParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FreeParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FreeParam::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown parameter {s:?} (expected one of w, b, b0, h, gain)"))
    }
}

/// Reference images, the scene they show, and what may vary.
///
/// `scene.hapke` and `render.gain` are the starting point; the other render
/// settings say how the candidate images are synthesized.
#[derive(Clone)]
pub struct CaptureProblem {
    pub references: Vec<CaptureView>,
    pub camera: CameraModel,
    pub scene: Scene,
    pub render: RenderConfig,
    pub free: Vec<FreeParam>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iters: usize,
    /// Stop once an accepted step is shorter than this in the transformed space.
    pub step_tolerance: f64,
    /// Central-difference step in the transformed space.
    pub fd_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iters: 200, step_tolerance: 1e-6, fd_step: 1e-5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: HapkeParams,
    pub gain: f64,
    /// Loss after each accepted iterate, starting with the initial loss.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the search stopped without converging; the parameters are then
    /// the best ones seen.
    pub warning: Option<String>,
}

/// Pixels cached with the shading geometry of their subsamples.
///
/// The geometry never changes during a fit, so evaluating a candidate only
/// re-runs the reflectance over the cache. The result equals a full re-render
/// with the same render settings.
pub struct CaptureLoss {
    free: Vec<FreeParam>,
    base: HapkeParams,
    base_gain: f64,
    irradiance: f64,
    inv_samples: f64,
    /// `(start, end, dn)` into `samples`.
    pixels: Vec<(u32, u32, f64)>,
    /// `(mu0, mu, g, albedo)` of lit subsamples.
    samples: Vec<[f64; 4]>,
}

const CHUNK: usize = 4096;

impl CaptureProblem {
    pub fn validate(&self) -> Result<(), CaptureError> {
        let bad = |m: String| Err(CaptureError::InvalidProblem(m));
        if self.references.is_empty() {
            return bad("at least one reference image is required".into());
        }
        if self.free.is_empty() {
            return bad("no free parameters".into());
        }
        self.scene.hapke.validate()?;
        self.render.validate()?;
        self.camera.validate()?;
        let p = &self.scene.hapke;
        for f in &self.free {
            let interior = match f {
                FreeParam::W => p.w < 1.0,
                FreeParam::B0 => p.b0 > 0.0,
                _ => true,
            };
            if !interior {
                return bad(format!("initial {f} must lie strictly inside its domain"));
            }
        }
        for r in &self.references {
            if (r.image.width, r.image.height) != (self.camera.width, self.camera.height) {
                return bad(format!(
                    "reference is {}x{}, camera is {}x{}",
                    r.image.width, r.image.height, self.camera.width, self.camera.height
                ));
            }
        }
        Ok(())
    }

    /// Traces every reference once and caches the shading geometry.
    pub fn prepare(&self) -> Result<CaptureLoss, CaptureError> {
        self.validate()?;
        let mut free = self.free.clone();
        free.sort();
        free.dedup();
        let cam = &self.camera;
        let w = cam.width as usize;
        let n2 = (self.render.supersampling * self.render.supersampling) as usize;
        let mut pixels = Vec::new();
        let mut samples = Vec::new();
        let mut signal = 0.0;
        for (k, view) in self.references.iter().enumerate() {
            let full = view.image.full_scale();
            let rows: Vec<Vec<(f64, Vec<[f64; 4]>)>> = (0..cam.height as usize)
                .into_par_iter()
                .map(|py| {
                    let mut row = Vec::with_capacity(w);
                    for px in 0..w {
                        let dn = view.image.pixels[py * w + px] as f64;
                        if dn >= full {
                            // clipped: the model value is unknown
                            continue;
                        }
                        let mut lit = Vec::new();
                        for s in 0..n2 {
                            let ray = pixel_ray(cam, &view.pose, subsample_point(&self.render, k as u64, px, py, s));
                            let Some(hit) = self.scene.trace(&ray) else { continue };
                            let Some((mu0, mu, g)) = self.scene.photometric_angles(&hit, &ray.direction) else {
                                continue;
                            };
                            if self.render.shadows && self.scene.in_shadow(&hit) {
                                continue;
                            }
                            lit.push([mu0, mu, g, self.scene.albedo_factor(hit.point.x, hit.point.y)]);
                        }
                        row.push((dn, lit));
                    }
                    row
                })
                .collect();
            for (dn, lit) in rows.into_iter().flatten() {
                signal += dn;
                let start = samples.len() as u32;
                samples.extend(lit);
                pixels.push((start, samples.len() as u32, dn));
            }
        }
        if !(signal > 0.0) {
            return Err(CaptureError::NoSignal);
        }
        Ok(CaptureLoss {
            free,
            base: self.scene.hapke,
            base_gain: self.render.gain,
            irradiance: self.scene.sun_irradiance,
            inv_samples: 1.0 / n2 as f64,
            pixels,
            samples,
        })
    }
}

impl CaptureLoss {
    pub fn free(&self) -> &[FreeParam] {
        &self.free
    }

    /// Mean squared difference between `gain · radiance` (before quantization)
    /// and the reference digital numbers.
    pub fn loss(&self, p: &HapkeParams, gain: f64) -> f64 {
        let scale = gain * self.irradiance * self.inv_samples;
        // fixed chunking keeps the sum independent of the thread count
        let partial: Vec<f64> = self
            .pixels
            .par_chunks(CHUNK)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&(a, b, dn)| {
                        let r: f64 = self.samples[a as usize..b as usize]
                            .iter()
                            .map(|s| s[0] * hapke_brdf_unchecked(p, s[0], s[1], s[2]) * s[3])
                            .sum();
                        let e = scale * r - dn;
                        e * e
                    })
                    .sum()
            })
            .collect();
        partial.iter().sum::<f64>() / self.pixels.len().max(1) as f64
    }

    /// Transformed coordinates of the starting point.
    pub fn initial_point(&self) -> Vec<f64> {
        self.free.iter().map(|f| f.to_free(&self.base, self.base_gain)).collect()
    }

    /// Parameters at transformed coordinates `x`; always inside the domain.
    pub fn params_at(&self, x: &[f64]) -> (HapkeParams, f64) {
        let (mut p, mut gain) = (self.base, self.base_gain);
        for (f, &v) in self.free.iter().zip(x) {
            f.apply(v, &mut p, &mut gain);
        }
        (p, gain)
    }

    pub fn point_of(&self, p: &HapkeParams, gain: f64) -> Vec<f64> {
        self.free.iter().map(|f| f.to_free(p, gain)).collect()
    }

    pub fn loss_at(&self, x: &[f64]) -> f64 {
        let (p, gain) = self.params_at(x);
        self.loss(&p, gain)
    }

    /// Central-difference gradient in the transformed space.
    pub fn gradient(&self, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[k] += h;
                xm[k] -= h;
                (self.loss_at(&xp) - self.loss_at(&xm)) / (2.0 * h)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits the free parameters by gradient descent with Barzilai–Borwein step
/// lengths and Armijo backtracking; every accepted step lowers the loss.
pub fn fit_brdf(problem: &CaptureProblem, opts: &FitOptions) -> Result<FitResult, CaptureError> {
    let cache = problem.prepare()?;
    let mut x = cache.initial_point();
    let mut f = cache.loss_at(&x);
    let mut trace = vec![f];
    let finish = |x: &[f64], trace: Vec<f64>, iterations, converged, warning: Option<String>| {
        let (params, gain) = cache.params_at(x);
        FitResult { params, gain, loss_trace: trace, iterations, converged, warning }
    };
    if !f.is_finite() {
        return Ok(finish(&x, trace, 0, false, Some("initial loss is not finite".into())));
    }
    if opts.max_iters == 0 {
        return Ok(finish(&x, trace, 0, false, None));
    }
    let mut g = cache.gradient(&x, opts.fd_step);
    let gnorm = dot(&g, &g).sqrt();
    let mut alpha = if gnorm > 0.0 { 0.1 / gnorm } else { 0.0 };
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let gg = dot(&g, &g);
        if gg == 0.0 {
            return Ok(finish(&x, trace, iterations, true, None));
        }
        iterations += 1;
        let mut accepted = None;
        let mut a = alpha;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - a * gi).collect();
            let fc = cache.loss_at(&cand);
            if fc.is_finite() && fc <= f - 1e-4 * a * gg {
                accepted = Some((cand, fc));
                break;
            }
            a *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            // no sufficient decrease along the gradient
            let converged = a * gg.sqrt() < opts.step_tolerance;
            let warning = (!converged).then(|| "line search failed; returning the best parameters seen".to_string());
            return Ok(finish(&x, trace, iterations, converged, warning));
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let g_new = cache.gradient(&x_new, opts.fd_step);
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
        if dot(&s, &s).sqrt() < opts.step_tolerance {
            return Ok(finish(&x, trace, iterations, true, None));
        }
        let sy = dot(&s, &y);
        alpha = if sy > 0.0 { (dot(&s, &s) / sy).clamp(1e-12, 1e12) } else { (2.0 * a).min(1e12) };
    }
    Ok(finish(&x, trace, iterations, false, Some(format!("stopped after {} iterations", opts.max_iters))))
}
