use std::sync::Arc;

use nalgebra::Vector3;

use super::boulders::BoulderIndex;
use super::hapke::{hapke_brdf_unchecked, HapkeParams};
use super::heightfield::{self, MaxMipmap};
use super::RenderError;
use crate::dem::DemGrid;
use crate::geom::Ray;
use crate::procedural::BoulderField;

/// Floor for the emission cosine at grazing view angles.
pub const MU_EPSILON: f64 = 1e-6;

/// What a ray hit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HitObject {
    Terrain,
    Boulder(u32),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub object: HitObject,
}

/// Immutable geometry; shared between scenes that differ only photometrically.
pub struct Geometry {
    dem: DemGrid,
    mipmap: MaxMipmap,
    boulders: BoulderIndex,
    field: BoulderField,
}

impl Geometry {
    pub fn new(dem: DemGrid, field: BoulderField) -> Result<Self, RenderError> {
        field.validate().map_err(|e| RenderError::InvalidScene(e.to_string()))?;
        let mipmap = MaxMipmap::build(&dem);
        let boulders = BoulderIndex::build(&dem, &field);
        Ok(Self { dem, mipmap, boulders, field })
    }

    pub fn dem(&self) -> &DemGrid {
        &self.dem
    }

    pub fn boulder_field(&self) -> &BoulderField {
        &self.field
    }

    pub fn boulders(&self) -> &BoulderIndex {
        &self.boulders
    }
}

/// Terrain, boulders, reflectance and a parallel sun.
#[derive(Clone)]
pub struct Scene {
    geometry: Arc<Geometry>,
    pub hapke: HapkeParams,
    albedo: Option<Arc<DemGrid>>,
    sun_direction: Vector3<f64>,
    pub sun_irradiance: f64,
}

impl Scene {
    pub fn new(
        dem: DemGrid,
        boulders: BoulderField,
        hapke: HapkeParams,
        sun_direction: Vector3<f64>,
        sun_irradiance: f64,
    ) -> Result<Self, RenderError> {
        Self::from_geometry(Arc::new(Geometry::new(dem, boulders)?), hapke, sun_direction, sun_irradiance)
    }

    pub fn from_geometry(
        geometry: Arc<Geometry>,
        hapke: HapkeParams,
        sun_direction: Vector3<f64>,
        sun_irradiance: f64,
    ) -> Result<Self, RenderError> {
        hapke.validate()?;
        if (sun_direction.norm() - 1.0).abs() > 1e-9 {
            return Err(RenderError::InvalidScene("sun_direction must be a unit vector".into()));
        }
        if !(sun_irradiance >= 0.0) || !sun_irradiance.is_finite() {
            return Err(RenderError::InvalidScene("sun_irradiance must be >= 0".into()));
        }
        Ok(Self { geometry, hapke, albedo: None, sun_direction, sun_irradiance })
    }

    /// Spatial albedo factor, sampled at the nearest texel node.
    pub fn with_albedo(mut self, texture: DemGrid) -> Result<Self, RenderError> {
        if texture.heights().iter().any(|&a| a < 0.0) {
            return Err(RenderError::InvalidScene("albedo factors must be >= 0".into()));
        }
        self.albedo = Some(Arc::new(texture));
        Ok(self)
    }

    /// Same geometry and lighting, different reflectance parameters.
    pub fn with_hapke(&self, hapke: HapkeParams) -> Result<Self, RenderError> {
        hapke.validate()?;
        Ok(Self { hapke, ..self.clone() })
    }

    pub fn geometry(&self) -> &Arc<Geometry> {
        &self.geometry
    }

    pub fn dem(&self) -> &DemGrid {
        &self.geometry.dem
    }

    pub fn sun_direction(&self) -> Vector3<f64> {
        self.sun_direction
    }

    pub fn albedo_texture(&self) -> Option<&DemGrid> {
        self.albedo.as_deref()
    }

    pub fn albedo_factor(&self, x: f64, y: f64) -> f64 {
        match &self.albedo {
            None => 1.0,
            Some(tex) => {
                let (c, r) = tex.to_grid(x, y);
                let c = c.round().clamp(0.0, (tex.ncols() - 1) as f64) as usize;
                let r = r.round().clamp(0.0, (tex.nrows() - 1) as f64) as usize;
                tex.at(c, r)
            }
        }
    }

    /// Nearest hit among terrain and boulders.
    pub fn trace(&self, ray: &Ray) -> Option<Hit> {
        let g = &*self.geometry;
        let terrain = heightfield::intersect(&g.dem, &g.mipmap, ray, 0.0, f64::INFINITY);
        let limit = terrain.unwrap_or(f64::INFINITY);
        if let Some((t, idx)) = g.boulders.intersect(ray, 0.0, limit) {
            if terrain.is_none_or(|tt| t < tt) {
                let point = ray.at(t);
                let normal = g.boulders.boulders()[idx as usize].normal_at(&point);
                return Some(Hit { t, point, normal, object: HitObject::Boulder(idx) });
            }
        }
        terrain.map(|t| {
            let point = ray.at(t);
            Hit { t, point, normal: g.dem.normal_clamped(point.x, point.y), object: HitObject::Terrain }
        })
    }

    /// True if anything lies along `ray`.
    pub fn occluded(&self, ray: &Ray) -> bool {
        let g = &*self.geometry;
        g.boulders.intersect(ray, 0.0, f64::INFINITY).is_some()
            || heightfield::intersect(&g.dem, &g.mipmap, ray, 0.0, f64::INFINITY).is_some()
    }

    /// Whether the sun is hidden from `hit`.
    pub fn in_shadow(&self, hit: &Hit) -> bool {
        let eps = 1e-3 * self.geometry.dem.cell_size();
        self.occluded(&Ray { origin: hit.point + hit.normal * eps, direction: self.sun_direction })
    }

    /// Incidence cosine, emission cosine and phase angle at `hit` for a viewer
    /// looking along `view_dir`; `None` past the terminator.
    pub fn photometric_angles(&self, hit: &Hit, view_dir: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let mu0 = hit.normal.dot(&self.sun_direction);
        if mu0 <= 0.0 {
            return None;
        }
        let to_viewer = -view_dir;
        let mu = hit.normal.dot(&to_viewer).max(MU_EPSILON).min(1.0);
        let g = self.sun_direction.dot(&to_viewer).clamp(-1.0, 1.0).acos();
        Some((mu0.min(1.0), mu, g))
    }

    /// `sun_irradiance · mu0 · brdf(mu0, mu, g)` for unit albedo, ignoring shadows;
    /// zero past the terminator.
    pub fn unit_albedo_radiance(&self, hit: &Hit, view_dir: &Vector3<f64>) -> f64 {
        match self.photometric_angles(hit, view_dir) {
            Some((mu0, mu, g)) => self.sun_irradiance * mu0 * hapke_brdf_unchecked(&self.hapke, mu0, mu, g),
            None => 0.0,
        }
    }

    /// Radiance leaving `hit` toward a viewer looking along `view_dir`.
    pub fn shade(&self, hit: &Hit, view_dir: &Vector3<f64>, shadows: bool) -> f64 {
        let base = self.unit_albedo_radiance(hit, view_dir);
        if base == 0.0 || (shadows && self.in_shadow(hit)) {
            return 0.0;
        }
        base * self.albedo_factor(hit.point.x, hit.point.y)
    }
}

/// Free-function form of [`Scene::trace`].
pub fn trace_ray(scene: &Scene, ray: &Ray) -> Option<Hit> {
    scene.trace(ray)
}

/// Free-function form of [`Scene::shade`] with shadows on.
pub fn shade(scene: &Scene, hit: &Hit, view_dir: &Vector3<f64>) -> f64 {
    scene.shade(hit, view_dir, true)
}
