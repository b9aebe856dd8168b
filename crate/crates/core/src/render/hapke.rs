//! Hapke bidirectional reflectance for particulate surfaces.
//!
//! Isotropic multiple scattering with the rational H-function approximation,
//! a single-lobe Henyey–Greenstein particle phase function and a shadow-hiding
//! opposition surge. No macroscopic roughness or porosity correction.

use serde::{Deserialize, Serialize};

use super::RenderError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HapkeParams {
    /// Single-scattering albedo, `(0, 1]`.
    pub w: f64,
    /// Henyey–Greenstein asymmetry, `(−1, 1)`; negative is backscattering.
    pub b: f64,
    /// Opposition-surge amplitude, `≥ 0`.
    #[serde(rename = "B0")]
    pub b0: f64,
    /// Opposition-surge angular width, `> 0`.
    pub h: f64,
}

impl Default for HapkeParams {
    /// Typical lunar-regolith values.
    fn default() -> Self {
        Self { w: 0.11, b: -0.4, b0: 1.0, h: 0.06 }
    }
}

impl HapkeParams {
    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: &str| Err(RenderError::InvalidHapke(m.into()));
        if !(self.w > 0.0 && self.w <= 1.0) {
            return bad("w must lie in (0, 1]");
        }
        if !(self.b > -1.0 && self.b < 1.0) {
            return bad("b must lie in (-1, 1)");
        }
        if !(self.b0 >= 0.0) || !self.b0.is_finite() {
            return bad("B0 must be >= 0");
        }
        if !(self.h > 0.0) || !self.h.is_finite() {
            return bad("h must be > 0");
        }
        Ok(())
    }
}

/// Chandrasekhar H-function, rational approximation.
#[inline]
pub fn h_function(w: f64, x: f64) -> f64 {
    (1.0 + 2.0 * x) / (1.0 + 2.0 * x * (1.0 - w).sqrt())
}

/// Henyey–Greenstein phase function.
#[inline]
pub fn hg_phase(b: f64, g: f64) -> f64 {
    let b2 = b * b;
    (1.0 - b2) / (1.0 + 2.0 * b * g.cos() + b2).powf(1.5)
}

/// Shadow-hiding opposition surge `B0 / (1 + tan(g/2)/h)`.
#[inline]
pub fn opposition_surge(b0: f64, h: f64, g: f64) -> f64 {
    b0 / (1.0 + (0.5 * g).tan() / h)
}

/// BRDF without domain checks; callers guarantee `mu0, mu ∈ (0, 1]`.
#[inline]
pub fn hapke_brdf_unchecked(p: &HapkeParams, mu0: f64, mu: f64, g: f64) -> f64 {
    let bracket = (1.0 + opposition_surge(p.b0, p.h, g)) * hg_phase(p.b, g) + h_function(p.w, mu0) * h_function(p.w, mu)
        - 1.0;
    p.w / (4.0 * std::f64::consts::PI) / (mu0 + mu) * bracket
}

/// BRDF in sr⁻¹ for incidence cosine `mu0`, emission cosine `mu` and phase
/// angle `g` (radians).
///
/// This is Hapke's bidirectional reflectance `r` divided by `mu0`, which makes
/// it reciprocal (symmetric in `mu0` and `mu`). Reflected radiance under a
/// collimated irradiance `E` is `E · mu0 · hapke_brdf(..)`.
pub fn hapke_brdf(p: &HapkeParams, mu0: f64, mu: f64, g: f64) -> Result<f64, RenderError> {
    p.validate()?;
    let unit = 0.0..=1.0;
    if !(mu0 > 0.0 && unit.contains(&mu0)) || !(mu > 0.0 && unit.contains(&mu)) {
        return Err(RenderError::Domain(format!("cosines must lie in (0, 1]: mu0={mu0}, mu={mu}")));
    }
    if !(0.0..=std::f64::consts::PI).contains(&g) {
        return Err(RenderError::Domain(format!("phase angle {g} outside [0, pi]")));
    }
    Ok(hapke_brdf_unchecked(p, mu0, mu, g))
}

/// Hapke's bidirectional reflectance `r = mu0 · brdf`.
pub fn hapke_reflectance(p: &HapkeParams, mu0: f64, mu: f64, g: f64) -> Result<f64, RenderError> {
    Ok(mu0 * hapke_brdf(p, mu0, mu, g)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn conservative_isotropic_value() {
        // 9/(8π), also evaluated independently outside the crate
        let p = HapkeParams { w: 1.0, b: 0.0, b0: 0.0, h: 0.06 };
        let r = hapke_brdf(&p, 1.0, 1.0, 0.0).unwrap();
        assert!((r - 9.0 / (8.0 * PI)).abs() < 1e-12);
        assert!((r - 0.3580986219567645).abs() < 1e-15);
    }

    #[test]
    fn default_params_frozen_value() {
        // independent scalar evaluation of the same formula
        let g = 40f64.to_radians();
        let r = hapke_brdf(&HapkeParams::default(), 30f64.to_radians().cos(), 10f64.to_radians().cos(), g).unwrap();
        assert!((r - 0.01157210365853429).abs() < 1e-15, "{r}");
        let refl = hapke_reflectance(&HapkeParams::default(), 30f64.to_radians().cos(), 10f64.to_radians().cos(), g).unwrap();
        assert!((refl - 0.010021735743517538).abs() < 1e-15);
    }

    #[test]
    fn vanishing_albedo_goes_black() {
        let p = HapkeParams { w: 1e-12, ..HapkeParams::default() };
        assert!(hapke_brdf(&p, 0.5, 0.7, 0.4).unwrap() < 1e-12);
        assert!(HapkeParams { w: 0.0, ..p }.validate().is_err());
    }

    #[test]
    fn symmetric_in_cosines() {
        let p = HapkeParams::default();
        let a = hapke_brdf(&p, 0.3, 0.8, 1.1).unwrap();
        let b = hapke_brdf(&p, 0.8, 0.3, 1.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn domain_errors() {
        let p = HapkeParams::default();
        assert!(hapke_brdf(&p, 0.0, 0.5, 0.1).is_err());
        assert!(hapke_brdf(&p, 0.5, 1.2, 0.1).is_err());
        assert!(hapke_brdf(&p, 0.5, 0.5, -0.1).is_err());
        assert!(hapke_brdf(&p, 0.5, 0.5, 3.2).is_err());
        assert!(hapke_brdf(&HapkeParams { b: 1.0, ..p }, 0.5, 0.5, 0.1).is_err());
        assert!(hapke_brdf(&HapkeParams { h: 0.0, ..p }, 0.5, 0.5, 0.1).is_err());
        assert!(hapke_brdf(&p, 1.0, 1.0, PI).unwrap() > 0.0);
    }
}
