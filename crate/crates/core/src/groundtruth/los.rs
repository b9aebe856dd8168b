//! Pose recovery from bearings to known landmarks.
//!
//! Each frame is solved on its own by Levenberg-damped Gauss–Newton over
//! `(position, attitude)`. The attitude is updated on the right,
//! `R_wc ← R_wc · Exp(δθ)`, so the quaternion never leaves the unit sphere.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Matrix6, SMatrix, UnitQuaternion, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::GroundTruthError;
use crate::geom::{Pose, PoseSample, Trajectory};

/// Unit direction from the camera to a landmark, in the camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LosObservation {
    pub frame_id: u64,
    pub landmark_id: u64,
    pub direction: Vector3<f64>,
}

impl LosObservation {
    pub fn new(frame_id: u64, landmark_id: u64, direction: Vector3<f64>) -> Result<Self, GroundTruthError> {
        if !direction.iter().all(|c| c.is_finite()) || (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(GroundTruthError::InvalidObservation(format!(
                "frame {frame_id} landmark {landmark_id}: direction norm {} is not 1",
                direction.norm()
            )));
        }
        Ok(Self { frame_id, landmark_id, direction })
    }
}

/// World positions of landmarks by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LandmarkSet {
    pub points: BTreeMap<u64, Vector3<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iterations: 100, step_tolerance: 1e-10, initial_damping: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame_id: u64,
    pub observations: usize,
    /// Root mean square of the bearing residual norms.
    pub rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LosInversion {
    pub trajectory: Trajectory,
    pub reports: Vec<FrameReport>,
}

/// `d_obs − normalize(R_wcᵀ (X − p))`.
pub fn bearing_residual(pose: &Pose, landmark: &Vector3<f64>, observed: &Vector3<f64>) -> Vector3<f64> {
    observed - pose.world_to_camera(landmark).normalize()
}

/// Jacobian of [`bearing_residual`] with respect to `[δp, δθ]`, where the
/// perturbed pose is `(p + δp, R_wc · Exp(δθ))`.
pub fn bearing_jacobian(pose: &Pose, landmark: &Vector3<f64>) -> SMatrix<f64, 3, 6> {
    let rt = pose.attitude.inverse().to_rotation_matrix().into_inner();
    let v = rt * (landmark - pose.position);
    let len = v.norm();
    let n = v / len;
    let dn_dv = (Matrix3::identity() - n * n.transpose()) / len;
    let mut j = SMatrix::<f64, 3, 6>::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(dn_dv * rt));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-dn_dv * v.cross_matrix()));
    j
}

fn cost(pose: &Pose, pairs: &[(Vector3<f64>, Vector3<f64>)]) -> f64 {
    pairs.iter().map(|(x, d)| bearing_residual(pose, x, d).norm_squared()).sum()
}

fn retract(pose: &Pose, step: &Vector6<f64>) -> Pose {
    let dp = step.fixed_rows::<3>(0).into_owned();
    let dth = step.fixed_rows::<3>(3).into_owned();
    Pose { position: pose.position + dp, attitude: pose.attitude * UnitQuaternion::from_scaled_axis(dth) }
}

fn check_observable(frame_id: u64, pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Result<(), GroundTruthError> {
    let unobservable = |reason: String| Err(GroundTruthError::Unobservable { frame_id, reason });
    if pairs.len() < 3 {
        return unobservable(format!("{} landmark observations, need at least 3", pairs.len()));
    }
    let mean = pairs.iter().map(|(x, _)| x).sum::<Vector3<f64>>() / pairs.len() as f64;
    let scatter: Matrix3<f64> = pairs.iter().map(|(x, _)| (x - mean) * (x - mean).transpose()).sum();
    let mut s = scatter.symmetric_eigenvalues();
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if !(s[1] > 1e-18 * s[0].max(1e-300)) {
        return unobservable("landmarks are collinear".into());
    }
    Ok(())
}

fn solve_frame(
    frame_id: u64,
    initial: &Pose,
    pairs: &[(Vector3<f64>, Vector3<f64>)],
    opts: &SolverOptions,
) -> (Pose, FrameReport) {
    let mut pose = *initial;
    let mut c = cost(&pose, pairs);
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let mut a = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (x, d) in pairs {
            let j = bearing_jacobian(&pose, x);
            let r = bearing_residual(&pose, x, d);
            a += j.transpose() * j;
            g += j.transpose() * r;
        }
        let mut damped = a;
        for k in 0..6 {
            damped[(k, k)] += lambda * a[(k, k)].max(1e-12);
        }
        let Some(step) = damped.cholesky().map(|ch| -ch.solve(&g)) else {
            lambda *= 10.0;
            continue;
        };
        let candidate = retract(&pose, &step);
        let c_new = cost(&candidate, pairs);
        if c_new <= c {
            pose = candidate;
            c = c_new;
            lambda = (lambda * 0.1).max(1e-15);
            if step.norm() < opts.step_tolerance {
                converged = true;
                break;
            }
        } else {
            if step.norm() < opts.step_tolerance {
                // no representable improvement left
                converged = true;
                break;
            }
            lambda *= 10.0;
        }
    }
    let rms = (c / pairs.len() as f64).sqrt();
    (pose, FrameReport { frame_id, observations: pairs.len(), rms, iterations, converged })
}

/// Recovers one pose per sample of `initial`; observation `frame_id` indexes
/// those samples and the output keeps their timestamps.
pub fn invert_los(
    observations: &[LosObservation],
    landmarks: &LandmarkSet,
    initial: &Trajectory,
    opts: &SolverOptions,
) -> Result<LosInversion, GroundTruthError> {
    let samples = initial.samples();
    let mut per_frame: Vec<Vec<(Vector3<f64>, Vector3<f64>)>> = vec![Vec::new(); samples.len()];
    for o in observations {
        LosObservation::new(o.frame_id, o.landmark_id, o.direction)?;
        let x = *landmarks.points.get(&o.landmark_id).ok_or(GroundTruthError::UnknownLandmark(o.landmark_id))?;
        let slot = per_frame.get_mut(o.frame_id as usize).ok_or_else(|| {
            GroundTruthError::InvalidObservation(format!(
                "frame {} has no initial pose ({} available)",
                o.frame_id,
                samples.len()
            ))
        })?;
        slot.push((x, o.direction));
    }
    for (k, pairs) in per_frame.iter().enumerate() {
        check_observable(k as u64, pairs)?;
    }
    let solved: Vec<(Pose, FrameReport)> = per_frame
        .par_iter()
        .enumerate()
        .map(|(k, pairs)| solve_frame(k as u64, &samples[k].pose, pairs, opts))
        .collect();
    let trajectory =
        Trajectory::new(samples.iter().zip(&solved).map(|(s, (pose, _))| PoseSample { t: s.t, pose: *pose }).collect())?;
    Ok(LosInversion { trajectory, reports: solved.into_iter().map(|(_, r)| r).collect() })
}

#[derive(Serialize, Deserialize)]
struct ObservationRow {
    frame_id: u64,
    landmark_id: u64,
    dx: f64,
    dy: f64,
    dz: f64,
}

#[derive(Serialize, Deserialize)]
struct LandmarkRow {
    landmark_id: u64,
    x: f64,
    y: f64,
    z: f64,
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r)
}

/// CSV `frame_id,landmark_id,dx,dy,dz`.
pub fn read_observations<R: Read>(r: R) -> Result<Vec<LosObservation>, GroundTruthError> {
    reader(r)
        .deserialize::<ObservationRow>()
        .map(|row| {
            let o = row?;
            LosObservation::new(o.frame_id, o.landmark_id, Vector3::new(o.dx, o.dy, o.dz))
        })
        .collect()
}

pub fn write_observations<W: Write>(w: W, obs: &[LosObservation]) -> Result<(), GroundTruthError> {
    let mut out = csv::Writer::from_writer(w);
    for o in obs {
        let d = o.direction;
        out.serialize(ObservationRow { frame_id: o.frame_id, landmark_id: o.landmark_id, dx: d.x, dy: d.y, dz: d.z })?;
    }
    out.flush()?;
    Ok(())
}

/// CSV `landmark_id,x,y,z`.
pub fn read_landmarks<R: Read>(r: R) -> Result<LandmarkSet, GroundTruthError> {
    let mut set = LandmarkSet::default();
    for row in reader(r).deserialize::<LandmarkRow>() {
        let l = row?;
        if set.points.insert(l.landmark_id, Vector3::new(l.x, l.y, l.z)).is_some() {
            return Err(GroundTruthError::InvalidObservation(format!("landmark {} listed twice", l.landmark_id)));
        }
    }
    Ok(set)
}

pub fn write_landmarks<W: Write>(w: W, set: &LandmarkSet) -> Result<(), GroundTruthError> {
    let mut out = csv::Writer::from_writer(w);
    for (&id, p) in &set.points {
        out.serialize(LandmarkRow { landmark_id: id, x: p.x, y: p.y, z: p.z })?;
    }
    out.flush()?;
    Ok(())
}

impl LandmarkSet {
    pub fn load(path: &Path) -> Result<Self, GroundTruthError> {
        read_landmarks(std::fs::File::open(path)?)
    }
}
