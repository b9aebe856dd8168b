//! Camera and pose math shared by every other module.
//!
//! Conventions, fixed once for the whole crate:
//!
//! * camera frame: `+z` forward along the boresight, `+x` right, `+y` down;
//! * pixel `(0, 0)` is the *center* of the top-left pixel;
//! * [`Pose::attitude`] rotates camera-frame vectors into the world frame.
//!
//! The camera is an ideal pinhole without distortion, so ground-truth flow
//! stays closed-form.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Point2, Quaternion, Unit, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Smallest camera-frame depth accepted by [`project`].
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(thiserror::Error, Debug)]
pub enum GeomError {
    #[error("point is behind the camera (camera-frame z = {z})")]
    BehindCamera { z: f64 },
    #[error("depth must be positive, got {0}")]
    InvalidDepth(f64),
    #[error("time {t} outside trajectory span [{first}, {last}]")]
    OutOfRange { t: f64, first: f64, last: f64 },
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("trajectory csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Distortion-free pinhole intrinsics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    pub fn new(width: u32, height: u32, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeomError> {
        let cam = Self { width, height, fx, fy, cx, cy };
        cam.validate()?;
        Ok(cam)
    }

    /// Square-pixel camera with the principal point at the image center and
    /// the given horizontal field of view.
    pub fn from_fov(width: u32, height: u32, hfov_rad: f64) -> Result<Self, GeomError> {
        let f = 0.5 * width as f64 / (0.5 * hfov_rad).tan();
        Self::new(width, height, f, f, 0.5 * (width as f64 - 1.0), 0.5 * (height as f64 - 1.0))
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let bad = |m: &str| Err(GeomError::InvalidCamera(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("width and height must be at least 1");
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return bad("focal lengths must be positive and finite");
        }
        if !(0.0..=self.width as f64).contains(&self.cx) || !(0.0..=self.height as f64).contains(&self.cy) {
            return bad("principal point outside the image");
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Unit bearing in the camera frame through a (sub)pixel position.
    pub fn bearing(&self, pixel: Point2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0).normalize()
    }

    pub fn contains(&self, pixel: Point2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= self.width as f64 - 1.0
            && pixel.y <= self.height as f64 - 1.0
    }
}

/// Camera position and camera-to-world attitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub attitude: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, attitude: UnitQuaternion<f64>) -> Result<Self, GeomError> {
        if !position.iter().all(|c| c.is_finite()) {
            return Err(GeomError::InvalidPose("non-finite position".into()));
        }
        Ok(Self { position, attitude })
    }

    pub fn identity() -> Self {
        Self { position: Vector3::zeros(), attitude: UnitQuaternion::identity() }
    }

    /// Builds the pose from a raw `(w, x, y, z)` quaternion, which must already
    /// be unit norm within 1e-9.
    pub fn from_wxyz(position: Vector3<f64>, q: [f64; 4]) -> Result<Self, GeomError> {
        let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
        if (raw.norm() - 1.0).abs() > 1e-9 {
            return Err(GeomError::InvalidPose(format!("quaternion norm {} is not 1", raw.norm())));
        }
        Self::new(position, Unit::new_unchecked(raw))
    }

    /// Camera at `eye` with boresight toward `target`. `up_hint` is a world
    /// vector that ends up pointing toward the top of the image.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up_hint: Vector3<f64>) -> Result<Self, GeomError> {
        let z = (target - eye).try_normalize(1e-12).ok_or_else(|| GeomError::InvalidPose("eye == target".into()))?;
        let x = z
            .cross(&up_hint)
            .try_normalize(1e-12)
            .ok_or_else(|| GeomError::InvalidPose("up hint parallel to boresight".into()))?;
        // camera +y points down in the image, i.e. opposite to `up_hint`
        let y = z.cross(&x);
        let rot = nalgebra::Rotation3::from_basis_unchecked(&[x, y, z]);
        Self::new(eye, UnitQuaternion::from_rotation_matrix(&rot))
    }

    pub fn world_to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.attitude.inverse_transform_vector(&(point - self.position))
    }

    pub fn camera_to_world(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.attitude.transform_vector(point) + self.position
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.attitude.quaternion();
        [q.w, q.i, q.j, q.k]
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoseRepr { position: self.position.into(), attitude_wxyz: self.wxyz() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PoseRepr::deserialize(d)?;
        Pose::from_wxyz(r.position.into(), r.attitude_wxyz).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    attitude_wxyz: [f64; 4],
}

/// Ray with a unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    /// Normalizes `direction`; panics on a zero vector.
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Self {
        Self { origin, direction: direction.normalize() }
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// World ray through a subpixel position.
pub fn pixel_ray(camera: &CameraModel, pose: &Pose, pixel: Point2<f64>) -> Ray {
    Ray { origin: pose.position, direction: pose.attitude.transform_vector(&camera.bearing(pixel)) }
}

/// Pinhole projection of a world point; returns the pixel and the camera-frame depth.
pub fn project(camera: &CameraModel, pose: &Pose, point: &Vector3<f64>) -> Result<(Point2<f64>, f64), GeomError> {
    let pc = pose.world_to_camera(point);
    if pc.z <= MIN_DEPTH {
        return Err(GeomError::BehindCamera { z: pc.z });
    }
    let px = Point2::new(camera.fx * pc.x / pc.z + camera.cx, camera.fy * pc.y / pc.z + camera.cy);
    Ok((px, pc.z))
}

/// Inverse of [`project`]: the world point at camera-frame depth `depth` behind `pixel`.
pub fn backproject(camera: &CameraModel, pose: &Pose, pixel: Point2<f64>, depth: f64) -> Result<Vector3<f64>, GeomError> {
    if !(depth > 0.0) {
        return Err(GeomError::InvalidDepth(depth));
    }
    let pc = Vector3::new((pixel.x - camera.cx) / camera.fx * depth, (pixel.y - camera.cy) / camera.fy * depth, depth);
    Ok(pose.camera_to_world(&pc))
}

/// A timestamped pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub t: f64,
    pub pose: Pose,
}

/// Time-ordered pose samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PoseSample>", into = "Vec<PoseSample>")]
pub struct Trajectory {
    samples: Vec<PoseSample>,
}

impl TryFrom<Vec<PoseSample>> for Trajectory {
    type Error = GeomError;
    fn try_from(samples: Vec<PoseSample>) -> Result<Self, GeomError> {
        Trajectory::new(samples)
    }
}

impl From<Trajectory> for Vec<PoseSample> {
    fn from(t: Trajectory) -> Self {
        t.samples
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    t: f64,
    px: f64,
    py: f64,
    pz: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

impl Trajectory {
    pub fn new(samples: Vec<PoseSample>) -> Result<Self, GeomError> {
        if samples.is_empty() {
            return Err(GeomError::InvalidTrajectory("no samples".into()));
        }
        if samples.iter().any(|s| !s.t.is_finite()) {
            return Err(GeomError::InvalidTrajectory("non-finite timestamp".into()));
        }
        if samples.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(GeomError::InvalidTrajectory("timestamps not strictly increasing".into()));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[PoseSample] {
        &self.samples
    }

    pub fn span(&self) -> (f64, f64) {
        (self.samples[0].t, self.samples[self.samples.len() - 1].t)
    }

    /// Reads the `t,px,py,pz,qw,qx,qy,qz` CSV format.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, GeomError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let expected = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"];
        if rdr.headers()?.iter().ne(expected) {
            return Err(GeomError::InvalidTrajectory(format!("expected header {}", expected.join(","))));
        }
        let mut samples = Vec::new();
        for row in rdr.deserialize::<CsvRow>() {
            let r = row?;
            let pose = Pose::from_wxyz(Vector3::new(r.px, r.py, r.pz), [r.qw, r.qx, r.qy, r.qz])?;
            samples.push(PoseSample { t: r.t, pose });
        }
        Self::new(samples)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), GeomError> {
        let mut w = csv::Writer::from_writer(writer);
        for s in &self.samples {
            let p = s.pose.position;
            let [qw, qx, qy, qz] = s.pose.wxyz();
            w.serialize(CsvRow { t: s.t, px: p.x, py: p.y, pz: p.z, qw, qx, qy, qz })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GeomError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), GeomError> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Pose at time `t`: linear in position, slerp in attitude. No extrapolation.
pub fn interpolate_pose(traj: &Trajectory, t: f64) -> Result<Pose, GeomError> {
    let (first, last) = traj.span();
    if !(t >= first && t <= last) {
        return Err(GeomError::OutOfRange { t, first, last });
    }
    let s = &traj.samples;
    // first sample with timestamp >= t
    let hi = s.partition_point(|p| p.t < t);
    if s[hi].t == t {
        return Ok(s[hi].pose);
    }
    let (a, b) = (&s[hi - 1], &s[hi]);
    let alpha = (t - a.t) / (b.t - a.t);
    let position = a.pose.position.lerp(&b.pose.position, alpha);
    // shortest arc; nalgebra's slerp does not flip hemispheres itself
    let qb = if a.pose.attitude.coords.dot(&b.pose.attitude.coords) < 0.0 {
        Unit::new_unchecked(-b.pose.attitude.into_inner())
    } else {
        b.pose.attitude
    };
    let attitude = a.pose.attitude.try_slerp(&qb, alpha, 1e-12).unwrap_or(a.pose.attitude);
    // renormalize to keep |q| = 1 to machine precision
    Ok(Pose { position, attitude: UnitQuaternion::new_normalize(attitude.into_inner()) })
}

pub fn pixel(x: f64, y: f64) -> Point2<f64> {
    Point2::new(x, y)
}

pub fn vec2(x: f64, y: f64) -> Vector2<f64> {
    Vector2::new(x, y)
}
