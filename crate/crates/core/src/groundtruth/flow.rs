use std::path::Path;

use nalgebra::Point2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::GroundTruthError;
use crate::geom::{backproject, CameraModel, Pose};
use crate::raster::{self, RasterHeader};
use crate::render::Frame;

/// Per-pixel camera-frame depth in meters, `+∞` where the pixel saw nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self, GroundTruthError> {
        if values.len() != width as usize * height as usize {
            return Err(GroundTruthError::DimensionMismatch(format!(
                "depth map {width}x{height} needs {} values, got {}",
                width as usize * height as usize,
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn from_frame(frame: &Frame) -> Self {
        Self { width: frame.width, height: frame.height, values: frame.depth.clone() }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width as usize + x]
    }

    /// Reads a float32 depth raster and its sidecar.
    pub fn load(path: &Path) -> Result<Self, GroundTruthError> {
        let (h, v) = raster::read_raster(path, &raster::sidecar_path(path))?;
        Self::new(h.ncols as u32, h.nrows as u32, v.into_iter().map(f64::from).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), GroundTruthError> {
        let v: Vec<f32> = self.values.iter().map(|&d| d as f32).collect();
        let header = RasterHeader::image(self.width as usize, self.height as usize);
        raster::write_raster(path, &raster::sidecar_path(path), &header, &v)?;
        Ok(())
    }

    /// Neighbouring samples around a continuous pixel position with their
    /// bilinear weights; taps with round-off weight are dropped so a miss next
    /// door cannot poison an exact hit. `None` outside the image or when a
    /// contributing tap is a miss.
    fn taps(&self, x: f64, y: f64) -> Option<[(f64, f64); 4]> {
        let (w, h) = (self.width as usize, self.height as usize);
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
            return None;
        }
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let mut taps = [
            (self.at(x0, y0), (1.0 - fx) * (1.0 - fy)),
            (self.at(x1, y0), fx * (1.0 - fy)),
            (self.at(x0, y1), (1.0 - fx) * fy),
            (self.at(x1, y1), fx * fy),
        ];
        for t in &mut taps {
            if t.1 <= 1e-9 {
                *t = (0.0, 0.0);
            } else if !t.0.is_finite() {
                return None;
            }
        }
        Some(taps)
    }

    /// Bilinear depth at a continuous pixel position; `None` outside the image
    /// or when any contributing neighbour is a miss.
    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let taps = self.taps(x, y)?;
        let wsum: f64 = taps.iter().map(|t| t.1).sum();
        Some(taps.iter().map(|t| t.0 * t.1).sum::<f64>() / wsum)
    }

    fn finite_at(&self, x: isize, y: isize) -> Option<f64> {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            return None;
        }
        Some(self.at(x as usize, y as usize)).filter(|d| d.is_finite())
    }

    /// Whether the step from sample `a` to its neighbour `a + step` departs
    /// from the slopes just outside it by more than `tol`, i.e. the pair
    /// straddles a depth edge rather than a steep but smooth surface.
    fn is_edge(&self, a: (isize, isize), step: (isize, isize), tol: f64) -> bool {
        let at = |k: isize| self.finite_at(a.0 + k * step.0, a.1 + k * step.1);
        let (Some(d0), Some(d1)) = (at(0), at(1)) else { return false };
        let slopes: Vec<f64> = [at(-1).map(|d| d0 - d), at(2).map(|d| d - d1)].into_iter().flatten().collect();
        if slopes.is_empty() {
            return false;
        }
        let expected = slopes.iter().sum::<f64>() / slopes.len() as f64;
        (d1 - d0 - expected).abs() > tol
    }

    /// Whether a point at camera depth `d` projecting to `(x, y)` is the
    /// surface this map saw there: the bilinear depth must agree within `tol`.
    /// Where the cell straddles a depth edge the interpolated value can match a
    /// hidden point by coincidence, so one contributing sample must also agree
    /// on its own.
    pub fn sees(&self, x: f64, y: f64, d: f64, tol: f64) -> bool {
        let Some(taps) = self.taps(x, y) else { return false };
        let wsum: f64 = taps.iter().map(|t| t.1).sum();
        let interp = taps.iter().map(|t| t.0 * t.1).sum::<f64>() / wsum;
        if (d - interp).abs() > tol {
            return false;
        }
        let (x0, y0) = (x.floor() as isize, y.floor() as isize);
        let edge = self.is_edge((x0, y0), (1, 0), tol)
            || self.is_edge((x0, y0 + 1), (1, 0), tol)
            || self.is_edge((x0, y0), (0, 1), tol)
            || self.is_edge((x0 + 1, y0), (0, 1), tol);
        !edge || taps.iter().any(|t| t.1 > 0.0 && (d - t.0).abs() <= tol)
    }
}

/// Depth agreement required for a pixel to count as visible in both views:
/// `|Δd| ≤ max(abs_m, rel · d)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionTolerance {
    pub abs_m: f64,
    pub rel: f64,
}

impl Default for OcclusionTolerance {
    fn default() -> Self {
        Self { abs_m: 0.5, rel: 1e-3 }
    }
}

impl OcclusionTolerance {
    pub fn at_depth(&self, depth: f64) -> f64 {
        self.abs_m.max(self.rel * depth)
    }
}

/// Dense displacement from frame A to frame B at the pixel centers of A.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: u32,
    pub height: u32,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, u: vec![0.0; n], v: vec![0.0; n], valid: vec![false; n] }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Forward flow A → B. A pixel is valid when its back-projected point lands
/// inside image B, in front of camera B, and agrees with depth B.
pub fn compute_flow(
    depth_a: &DepthMap,
    pose_a: &Pose,
    pose_b: &Pose,
    camera: &CameraModel,
    depth_b: &DepthMap,
    tol: &OcclusionTolerance,
) -> Result<FlowField, GroundTruthError> {
    camera.validate()?;
    for (name, d) in [("A", depth_a), ("B", depth_b)] {
        if d.width != camera.width || d.height != camera.height {
            return Err(GroundTruthError::DimensionMismatch(format!(
                "depth {name} is {}x{}, camera is {}x{}",
                d.width, d.height, camera.width, camera.height
            )));
        }
    }
    let w = camera.width as usize;
    let (wmax, hmax) = ((camera.width - 1) as f64, (camera.height - 1) as f64);
    let mut flow = FlowField::zeros(camera.width, camera.height);
    flow.u
        .par_chunks_mut(w)
        .zip(flow.v.par_chunks_mut(w))
        .zip(flow.valid.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, ((u_row, v_row), ok_row))| {
            for x in 0..w {
                let d = depth_a.at(x, y);
                if !(d.is_finite() && d > 0.0) {
                    continue;
                }
                let p = Point2::new(x as f64, y as f64);
                let Ok(world) = backproject(camera, pose_a, p, d) else { continue };
                let pc = pose_b.world_to_camera(&world);
                if pc.z <= crate::geom::MIN_DEPTH {
                    continue;
                }
                let q = Point2::new(camera.fx * pc.x / pc.z + camera.cx, camera.fy * pc.y / pc.z + camera.cy);
                // a hair of slack so round-off cannot drop border pixels
                const EDGE: f64 = 1e-6;
                if !(q.x >= -EDGE && q.y >= -EDGE && q.x <= wmax + EDGE && q.y <= hmax + EDGE) {
                    continue;
                }
                if !depth_b.sees(q.x.clamp(0.0, wmax), q.y.clamp(0.0, hmax), pc.z, tol.at_depth(pc.z)) {
                    continue;
                }
                u_row[x] = (q.x - p.x) as f32;
                v_row[x] = (q.y - p.y) as f32;
                ok_row[x] = true;
            }
        });
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dem::DemGrid;
    use crate::geom::Ray;
    use crate::procedural::{Boulder, BoulderField};
    use crate::render::{render_frame, HapkeParams, RenderConfig, Scene};
    use nalgebra::{Matrix3, UnitQuaternion, Vector3};

    fn cam() -> CameraModel {
        CameraModel::new(40, 30, 50.0, 55.0, 19.5, 14.5).unwrap()
    }

    fn constant_depth(c: &CameraModel, z: f64) -> DepthMap {
        DepthMap::new(c.width, c.height, vec![z; c.pixel_count()]).unwrap()
    }

    /// Camera-frame depth of every pixel when the camera sits at the center
    /// of a sphere of radius `rho`.
    fn sphere_depth(c: &CameraModel, rho: f64) -> DepthMap {
        let mut v = Vec::new();
        for y in 0..c.height {
            for x in 0..c.width {
                let b = Vector3::new((x as f64 - c.cx) / c.fx, (y as f64 - c.cy) / c.fy, 1.0);
                v.push(rho / b.norm());
            }
        }
        DepthMap::new(c.width, c.height, v).unwrap()
    }

    #[test]
    fn identity_motion_is_zero_and_valid() {
        let c = cam();
        let pose = Pose::new(Vector3::new(1.0, 2.0, 3.0), UnitQuaternion::from_euler_angles(0.2, -0.4, 0.6)).unwrap();
        let mut d = sphere_depth(&c, 40.0);
        d.values[7] = f64::INFINITY;
        let f = compute_flow(&d, &pose, &pose, &c, &d, &OcclusionTolerance::default()).unwrap();
        assert_eq!(f.valid_count(), c.pixel_count() - 1);
        assert!(!f.valid[7]);
        assert!(f.u.iter().chain(&f.v).all(|&x| x.abs() < 1e-9));
    }

    #[test]
    fn fronto_parallel_translation() {
        let c = cam();
        let (z, delta) = (80.0, 3.0);
        let a = Pose::identity();
        let b = Pose::new(Vector3::new(delta, 0.0, 0.0), UnitQuaternion::identity()).unwrap();
        let d = constant_depth(&c, z);
        let f = compute_flow(&d, &a, &b, &c, &d, &OcclusionTolerance::default()).unwrap();
        let expect = -c.fx * delta / z;
        let mut n = 0;
        for y in 0..c.height as usize {
            for x in 0..c.width as usize {
                let i = y * c.width as usize + x;
                let inside = x as f64 + expect >= 0.0;
                assert_eq!(f.valid[i], inside, "pixel {x},{y}");
                if inside {
                    assert!((f.u[i] as f64 - expect).abs() < 1e-3);
                    assert!(f.v[i].abs() < 1e-3);
                    n += 1;
                }
            }
        }
        assert!(n > 0);
    }

    #[test]
    fn pure_rotation_matches_homography() {
        let c = cam();
        let a = Pose::new(Vector3::new(5.0, -3.0, 2.0), UnitQuaternion::from_euler_angles(0.1, 0.04, -0.2)).unwrap();
        let b = Pose::new(a.position, a.attitude * UnitQuaternion::from_euler_angles(0.03, -0.04, 0.08)).unwrap();
        let d = sphere_depth(&c, 250.0);
        let f = compute_flow(&d, &a, &b, &c, &d, &OcclusionTolerance::default()).unwrap();
        let k = Matrix3::new(c.fx, 0.0, c.cx, 0.0, c.fy, c.cy, 0.0, 0.0, 1.0);
        let h = k * (b.attitude.inverse() * a.attitude).to_rotation_matrix().matrix() * k.try_inverse().unwrap();
        let mut n = 0;
        for y in 0..c.height as usize {
            for x in 0..c.width as usize {
                let i = y * c.width as usize + x;
                let q = h * Vector3::new(x as f64, y as f64, 1.0);
                let (qx, qy) = (q.x / q.z, q.y / q.z);
                let inside = qx >= 0.0 && qy >= 0.0 && qx <= 39.0 && qy <= 29.0;
                assert_eq!(f.valid[i], inside);
                if inside {
                    n += 1;
                    assert!((f.u[i] as f64 - (qx - x as f64)).abs() < 1e-3);
                    assert!((f.v[i] as f64 - (qy - y as f64)).abs() < 1e-3);
                }
            }
        }
        assert!(n > c.pixel_count() / 2);
    }

    #[test]
    fn invalid_pixels_carry_zero_flow() {
        let c = cam();
        let a = Pose::identity();
        let b = Pose::new(Vector3::new(30.0, 0.0, 0.0), UnitQuaternion::identity()).unwrap();
        let d = constant_depth(&c, 60.0);
        let f = compute_flow(&d, &a, &b, &c, &d, &OcclusionTolerance::default()).unwrap();
        for i in 0..f.len() {
            if !f.valid[i] {
                assert_eq!((f.u[i], f.v[i]), (0.0, 0.0));
            }
        }
        // depth B disagreeing everywhere invalidates everything
        let far = constant_depth(&c, 90.0);
        let g = compute_flow(&d, &a, &b, &c, &far, &OcclusionTolerance::default()).unwrap();
        assert_eq!(g.valid_count(), 0);
    }

    #[test]
    fn dimension_mismatch() {
        let c = cam();
        let small = DepthMap::new(4, 4, vec![1.0; 16]).unwrap();
        let d = constant_depth(&c, 1.0);
        let p = Pose::identity();
        assert!(matches!(
            compute_flow(&small, &p, &p, &c, &d, &OcclusionTolerance::default()),
            Err(GroundTruthError::DimensionMismatch(_))
        ));
        assert!(DepthMap::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn boulder_occludes_terrain_in_second_view() {
        let dem = DemGrid::constant(121, 121, 1.0, (-60.0, 60.0), 0.0).unwrap();
        let field = BoulderField { boulders: vec![Boulder { center: [0.0, 0.0], radius: 4.0 }] };
        let scene = Scene::new(dem, field, HapkeParams::default(), Vector3::new(0.2, 0.1, 1.0).normalize(), 1000.0).unwrap();
        let c = CameraModel::from_fov(64, 48, 1.0).unwrap();
        let a = Pose::look_at(Vector3::new(0.0, -25.0, 30.0), Vector3::new(0.0, 5.0, 0.0), Vector3::y()).unwrap();
        let b = Pose::look_at(Vector3::new(0.0, 25.0, 30.0), Vector3::new(0.0, -5.0, 0.0), -Vector3::y()).unwrap();
        let cfg = RenderConfig { supersampling: 1, jitter: false, ..Default::default() };
        let fa = render_frame(&scene, &c, &a, &cfg, 0).unwrap();
        let fb = render_frame(&scene, &c, &b, &cfg, 1).unwrap();
        let tol = OcclusionTolerance::default();
        let flow = compute_flow(&DepthMap::from_frame(&fa), &a, &b, &c, &DepthMap::from_frame(&fb), &tol).unwrap();

        // oracle: trace from camera B towards each point seen by A
        let mut hidden = 0;
        for y in 0..c.height {
            for x in 0..c.width {
                let i = (y * c.width + x) as usize;
                let d = fa.depth[i];
                if !d.is_finite() {
                    continue;
                }
                let world = backproject(&c, &a, Point2::new(x as f64, y as f64), d).unwrap();
                let to = world - b.position;
                let dist = to.norm();
                let blocked = scene.trace(&Ray::new(b.position, to)).is_some_and(|h| h.t < dist - 0.6);
                if blocked {
                    hidden += 1;
                    assert!(!flow.valid[i], "pixel {x},{y} is hidden from B but marked valid");
                }
            }
        }
        assert!(hidden > 20, "construction must hide some terrain ({hidden})");
        assert!(flow.valid_count() > 500);
    }
}
