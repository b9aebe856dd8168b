//! Seeded terrain detail: craters, boulders and multi-octave Perlin noise.
//!
//! Feature counts are Poisson with mean `density · area`; sizes follow a
//! power law `p(r) ∝ r^−α` truncated to `[r_min, r_max]`. Each feature draws
//! from its own generator keyed by `(seed, index)`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dem::{DemError, DemGrid, Extent};
use crate::hash;

/// Crater depth as a fraction of its radius (depth/diameter = 0.1).
pub const DEPTH_PER_RADIUS: f64 = 0.2;
/// Rim height as a fraction of the radius.
pub const RIM_PER_RADIUS: f64 = 0.04;
/// Rim profile is cut off beyond this many radii.
pub const RIM_CUTOFF: f64 = 3.0;

const TAG_COUNT: u64 = 0;
const TAG_FEATURE: u64 = 1;

#[derive(thiserror::Error, Debug)]
pub enum ProceduralError {
    #[error("invalid radius range [{r_min}, {r_max}]")]
    InvalidRadiusRange { r_min: f64, r_max: f64 },
    #[error("invalid density {0}")]
    InvalidDensity(f64),
    #[error("invalid region")]
    InvalidRegion,
    #[error("feature {index} at ({x}, {y}) lies outside the DEM extent")]
    OutsideExtent { index: usize, x: f64, y: f64 },
    #[error("invalid noise spec: {0}")]
    InvalidNoise(String),
    #[error("invalid feature {index}: {reason}")]
    InvalidFeature { index: usize, reason: String },
    #[error(transparent)]
    Dem(#[from] DemError),
}

/// Truncated power-law size-frequency parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    /// Features per km².
    pub density: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub power_exponent: f64,
}

impl SizeDistribution {
    fn validate(&self) -> Result<(), ProceduralError> {
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.r_max.is_finite()) {
            return Err(ProceduralError::InvalidRadiusRange { r_min: self.r_min, r_max: self.r_max });
        }
        if !(self.density >= 0.0) || !self.density.is_finite() {
            return Err(ProceduralError::InvalidDensity(self.density));
        }
        Ok(())
    }

    /// Inverse CDF of the truncated power law.
    pub fn radius_quantile(&self, u: f64) -> f64 {
        let (a, lo, hi) = (self.power_exponent, self.r_min, self.r_max);
        if (a - 1.0).abs() < 1e-12 {
            lo * (hi / lo).powf(u)
        } else {
            let e = 1.0 - a;
            let (lo_e, hi_e) = (lo.powf(e), hi.powf(e));
            (lo_e + u * (hi_e - lo_e)).powf(1.0 / e).clamp(lo, hi)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crater {
    pub center: [f64; 2],
    pub radius: f64,
    pub depth: f64,
    pub rim_height: f64,
}

impl Crater {
    /// Height change at horizontal distance `rho` from the center: a parabolic
    /// bowl from `−depth` at the center to `+rim_height` at the rim, then a
    /// `(radius/ρ)³` decay, cut at three radii.
    pub fn profile(&self, rho: f64) -> f64 {
        let r = self.radius;
        if rho <= r {
            let s = rho / r;
            -self.depth + (self.depth + self.rim_height) * s * s
        } else if rho <= RIM_CUTOFF * r {
            let q = r / rho;
            self.rim_height * q * q * q
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CraterField {
    pub craters: Vec<Crater>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boulder {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Hemispherical boulders, seated on the terrain at render time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoulderField {
    pub boulders: Vec<Boulder>,
}

impl BoulderField {
    pub fn validate(&self) -> Result<(), ProceduralError> {
        for (index, b) in self.boulders.iter().enumerate() {
            if !(b.radius > 0.0) || !b.radius.is_finite() || !b.center.iter().all(|c| c.is_finite()) {
                return Err(ProceduralError::InvalidFeature { index, reason: "radius must be positive".into() });
            }
        }
        Ok(())
    }
}

/// Poisson-sampled `(center, radius)` pairs over `region`.
fn sample_features(region: &Extent, dist: &SizeDistribution, seed: u64) -> Result<Vec<([f64; 2], f64)>, ProceduralError> {
    dist.validate()?;
    if !(region.width() > 0.0 && region.height() > 0.0) {
        return Err(ProceduralError::InvalidRegion);
    }
    let mean = dist.density * region.area() * 1e-6;
    let count = if mean > 0.0 {
        let poisson = Poisson::new(mean).map_err(|_| ProceduralError::InvalidDensity(dist.density))?;
        poisson.sample(&mut hash::rng(seed, &[TAG_COUNT])) as u64
    } else {
        0
    };
    Ok((0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = hash::rng(seed, &[TAG_FEATURE, i]);
            let x = region.x_min + rng.random::<f64>() * region.width();
            let y = region.y_min + rng.random::<f64>() * region.height();
            ([x, y], dist.radius_quantile(rng.random::<f64>()))
        })
        .collect())
}

pub fn generate_craters(region: &Extent, dist: &SizeDistribution, seed: u64) -> Result<CraterField, ProceduralError> {
    let craters = sample_features(region, dist, seed)?
        .into_iter()
        .map(|(center, radius)| Crater {
            center,
            radius,
            depth: DEPTH_PER_RADIUS * radius,
            rim_height: RIM_PER_RADIUS * radius,
        })
        .collect();
    Ok(CraterField { craters })
}

pub fn generate_boulders(region: &Extent, dist: &SizeDistribution, seed: u64) -> Result<BoulderField, ProceduralError> {
    let boulders = sample_features(region, dist, seed)?.into_iter().map(|(center, radius)| Boulder { center, radius }).collect();
    Ok(BoulderField { boulders })
}

/// Adds every crater's profile to the heights. Contributions are summed per
/// node in field order, so disjoint craters commute exactly.
pub fn apply_craters(dem: &DemGrid, field: &CraterField) -> Result<DemGrid, ProceduralError> {
    let ext = dem.extent();
    for (index, c) in field.craters.iter().enumerate() {
        if !(c.radius > 0.0 && c.depth > 0.0 && c.rim_height >= 0.0) {
            return Err(ProceduralError::InvalidFeature { index, reason: "radius/depth must be positive".into() });
        }
        if !ext.contains(c.center[0], c.center[1]) {
            return Err(ProceduralError::OutsideExtent { index, x: c.center[0], y: c.center[1] });
        }
    }
    if field.craters.is_empty() {
        return Ok(dem.clone());
    }
    let ncols = dem.ncols();
    // rows touched by each crater's cutoff disc
    let spans: Vec<(usize, usize)> = field
        .craters
        .iter()
        .map(|c| {
            let reach = RIM_CUTOFF * c.radius;
            let (_, r0) = dem.to_grid(c.center[0], c.center[1] + reach);
            let (_, r1) = dem.to_grid(c.center[0], c.center[1] - reach);
            (r0.floor().max(0.0) as usize, (r1.ceil().max(0.0) as usize).min(dem.nrows() - 1))
        })
        .collect();
    let mut heights = dem.heights().to_vec();
    heights.par_chunks_mut(ncols).enumerate().for_each(|(row, line)| {
        for (c, &(r0, r1)) in field.craters.iter().zip(&spans) {
            if row < r0 || row > r1 {
                continue;
            }
            let reach = RIM_CUTOFF * c.radius;
            let (c0, _) = dem.to_grid(c.center[0] - reach, 0.0);
            let (c1, _) = dem.to_grid(c.center[0] + reach, 0.0);
            let c0 = c0.floor().max(0.0) as usize;
            let c1 = (c1.ceil().max(0.0) as usize).min(ncols - 1);
            for (col, h) in line.iter_mut().enumerate().take(c1 + 1).skip(c0) {
                let (x, y) = dem.node_xy(col, row);
                let rho = ((x - c.center[0]).powi(2) + (y - c.center[1]).powi(2)).sqrt();
                *h += c.profile(rho);
            }
        }
    });
    Ok(dem.with_heights(heights)?)
}

/// Multi-octave gradient noise parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub amplitude: f64,
    pub base_wavelength: f64,
    pub octaves: u32,
    pub persistence: f64,
    pub lacunarity: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(amplitude: f64, base_wavelength: f64, octaves: u32, seed: u64) -> Self {
        Self { amplitude, base_wavelength, octaves, persistence: 0.5, lacunarity: 2.0, seed }
    }

    pub fn validate(&self) -> Result<(), ProceduralError> {
        let bad = |m: &str| Err(ProceduralError::InvalidNoise(m.into()));
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return bad("amplitude must be >= 0");
        }
        if !(self.base_wavelength > 0.0) || !self.base_wavelength.is_finite() {
            return bad("base_wavelength must be > 0");
        }
        if self.octaves < 1 {
            return bad("octaves must be >= 1");
        }
        if !(self.persistence > 0.0 && self.persistence < 1.0) {
            return bad("persistence must lie in (0, 1)");
        }
        if !(self.lacunarity > 1.0) || !self.lacunarity.is_finite() {
            return bad("lacunarity must be > 1");
        }
        Ok(())
    }
}

const GRADIENTS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    (0.0, 1.0),
    (-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    (-1.0, 0.0),
    (-std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
    (0.0, -1.0),
    (std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
];

/// Classic 2-D gradient-lattice noise with a seeded permutation table.
/// Values vanish on the integer lattice and stay within `±1/√2`.
#[derive(Clone)]
pub struct Perlin {
    perm: [u8; 512],
}

impl Perlin {
    pub fn new(seed: u64) -> Self {
        let mut p: Vec<u8> = (0..=255).collect();
        p.shuffle(&mut hash::rng(seed, &[0x5045_524c]));
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = p[i & 255];
        }
        Self { perm }
    }

    #[inline]
    fn grad(&self, ix: i64, iy: i64, dx: f64, dy: f64) -> f64 {
        let h = self.perm[self.perm[(ix & 255) as usize] as usize + (iy & 255) as usize] & 7;
        let (gx, gy) = GRADIENTS[h as usize];
        gx * dx + gy * dy
    }

    pub fn noise(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (ix, iy) = (x0 as i64, y0 as i64);
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let (u, v) = (fade(fx), fade(fy));
        let n00 = self.grad(ix, iy, fx, fy);
        let n10 = self.grad(ix + 1, iy, fx - 1.0, fy);
        let n01 = self.grad(ix, iy + 1, fx, fy - 1.0);
        let n11 = self.grad(ix + 1, iy + 1, fx - 1.0, fy - 1.0);
        let a = n00 + u * (n10 - n00);
        let b = n01 + u * (n11 - n01);
        a + v * (b - a)
    }
}

/// Octave sum, normalized so the weights add up to `amplitude`.
pub struct FractalNoise {
    spec: NoiseSpec,
    octaves: Vec<Perlin>,
    norm: f64,
}

impl FractalNoise {
    pub fn new(spec: &NoiseSpec) -> Result<Self, ProceduralError> {
        spec.validate()?;
        let octaves = (0..spec.octaves).map(|k| Perlin::new(hash::derive(spec.seed, &[k as u64]))).collect();
        let norm: f64 = (0..spec.octaves).map(|k| spec.persistence.powi(k as i32)).sum();
        Ok(Self { spec: *spec, octaves, norm })
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        let mut freq = 1.0 / self.spec.base_wavelength;
        let mut weight = 1.0;
        let mut sum = 0.0;
        for p in &self.octaves {
            sum += weight * p.noise(x * freq, y * freq);
            freq *= self.spec.lacunarity;
            weight *= self.spec.persistence;
        }
        self.spec.amplitude * sum / self.norm
    }
}

pub fn add_perlin(dem: &DemGrid, spec: &NoiseSpec) -> Result<DemGrid, ProceduralError> {
    let noise = FractalNoise::new(spec)?;
    if spec.amplitude == 0.0 {
        return Ok(dem.clone());
    }
    let ncols = dem.ncols();
    let mut heights = dem.heights().to_vec();
    heights.par_chunks_mut(ncols).enumerate().for_each(|(row, line)| {
        for (col, h) in line.iter_mut().enumerate() {
            let (x, y) = dem.node_xy(col, row);
            *h += noise.value(x, y);
        }
    });
    Ok(dem.with_heights(heights)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region() -> Extent {
        Extent { x_min: 0.0, x_max: 1000.0, y_min: -1000.0, y_max: 0.0 }
    }

    fn dist(density: f64) -> SizeDistribution {
        SizeDistribution { density, r_min: 1.0, r_max: 100.0, power_exponent: 3.0 }
    }

    #[test]
    fn zero_density_is_empty() {
        assert!(generate_craters(&region(), &dist(0.0), 1).unwrap().craters.is_empty());
        assert!(generate_boulders(&region(), &dist(0.0), 1).unwrap().boulders.is_empty());
    }

    #[test]
    fn invalid_ranges() {
        let mut d = dist(1.0);
        d.r_min = 5.0;
        d.r_max = 5.0;
        assert!(matches!(generate_craters(&region(), &d, 0), Err(ProceduralError::InvalidRadiusRange { .. })));
        assert!(matches!(generate_boulders(&region(), &dist(-1.0), 0), Err(ProceduralError::InvalidDensity(_))));
    }

    #[test]
    fn seeded_determinism_and_morphology() {
        let a = generate_craters(&region(), &dist(200.0), 42).unwrap();
        let b = generate_craters(&region(), &dist(200.0), 42).unwrap();
        let c = generate_craters(&region(), &dist(200.0), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for k in &a.craters {
            assert!(region().contains(k.center[0], k.center[1]));
            assert!((1.0..=100.0).contains(&k.radius));
            assert_eq!(k.depth, 0.2 * k.radius);
            assert_eq!(k.rim_height, 0.04 * k.radius);
        }
        assert_eq!(generate_boulders(&region(), &dist(300.0), 9).unwrap(), generate_boulders(&region(), &dist(300.0), 9).unwrap());
    }

    #[test]
    fn crater_profile_values() {
        let flat = DemGrid::constant(201, 201, 1.0, (0.0, 0.0), 0.0).unwrap();
        let c = Crater { center: [100.0, -100.0], radius: 20.0, depth: 4.0, rim_height: 0.8 };
        let out = apply_craters(&flat, &CraterField { craters: vec![c] }).unwrap();
        assert_eq!(out.at(100, 100), -4.0);
        assert!((out.at(120, 100) - 0.8).abs() < 1e-12);
        assert!((out.at(140, 100) - 0.1).abs() < 1e-12);
        assert_eq!(out.at(161, 100), 0.0);
        assert_eq!(out.extent(), flat.extent());
        assert_eq!(apply_craters(&flat, &CraterField::default()).unwrap(), flat);
    }

    #[test]
    fn disjoint_craters_commute() {
        let base = DemGrid::from_fn(300, 200, 1.0, (0.0, 0.0), |x, y| 0.01 * x * y).unwrap();
        let a = Crater { center: [60.0, -100.0], radius: 15.0, depth: 3.0, rim_height: 0.6 };
        let b = Crater { center: [220.0, -90.0], radius: 12.5, depth: 2.5, rim_height: 0.5 };
        let ab = apply_craters(&base, &CraterField { craters: vec![a, b] }).unwrap();
        let ba = apply_craters(&base, &CraterField { craters: vec![b, a] }).unwrap();
        assert_eq!(ab, ba);
        let seq = apply_craters(&apply_craters(&base, &CraterField { craters: vec![b] }).unwrap(), &CraterField { craters: vec![a] }).unwrap();
        assert_eq!(seq, ab);
    }

    #[test]
    fn crater_outside_extent_is_rejected() {
        let flat = DemGrid::constant(10, 10, 1.0, (0.0, 0.0), 0.0).unwrap();
        let c = Crater { center: [50.0, 0.0], radius: 1.0, depth: 0.2, rim_height: 0.04 };
        assert!(matches!(apply_craters(&flat, &CraterField { craters: vec![c] }), Err(ProceduralError::OutsideExtent { index: 0, .. })));
    }

    #[test]
    fn perlin_vanishes_on_lattice() {
        let p = Perlin::new(1234);
        for i in -20..20 {
            for j in -20..20 {
                assert_eq!(p.noise(i as f64, j as f64), 0.0);
            }
        }
        let flat = DemGrid::constant(33, 33, 1.0, (0.0, 0.0), 5.0).unwrap();
        let spec = NoiseSpec::new(3.0, 4.0, 1, 77);
        let out = add_perlin(&flat, &spec).unwrap();
        for row in (0..33).step_by(4) {
            for col in (0..33).step_by(4) {
                assert_eq!(out.at(col, row), 5.0);
            }
        }
        assert!(out.heights().iter().any(|&h| h != 5.0));
    }

    #[test]
    fn perlin_identity_determinism_and_bound() {
        let base = DemGrid::from_fn(64, 64, 2.5, (10.0, -3.0), |x, _| x * 0.1).unwrap();
        assert_eq!(add_perlin(&base, &NoiseSpec::new(0.0, 30.0, 4, 1)).unwrap(), base);
        let spec = NoiseSpec::new(7.0, 37.0, 5, 99);
        let a = add_perlin(&base, &spec).unwrap();
        assert_eq!(a, add_perlin(&base, &spec).unwrap());
        assert_ne!(a, add_perlin(&base, &NoiseSpec { seed: 100, ..spec }).unwrap());
        let max_dev = a.heights().iter().zip(base.heights()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(max_dev <= 7.0 && max_dev > 0.5, "{max_dev}");
        assert_eq!(a.extent(), base.extent());
    }

    #[test]
    fn noise_spec_validation() {
        let ok = NoiseSpec::new(1.0, 10.0, 3, 0);
        assert!(ok.validate().is_ok());
        assert!(NoiseSpec { octaves: 0, ..ok }.validate().is_err());
        assert!(NoiseSpec { persistence: 1.0, ..ok }.validate().is_err());
        assert!(NoiseSpec { lacunarity: 1.0, ..ok }.validate().is_err());
        assert!(NoiseSpec { base_wavelength: 0.0, ..ok }.validate().is_err());
        assert!(NoiseSpec { amplitude: -1.0, ..ok }.validate().is_err());
    }
}
