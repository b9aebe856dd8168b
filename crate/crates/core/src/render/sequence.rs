use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{render_frame, RenderConfig, RenderError, Scene};
use crate::geom::{interpolate_pose, CameraModel, Pose, Trajectory};
use crate::hash::checksum_hex;
use crate::imageio;
use crate::raster::{self, RasterHeader};

/// File name of the per-directory render log.
pub const RENDER_LOG: &str = "render_log.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Complete,
    Incomplete,
}

/// Outputs of one rendered frame, paths relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderRecord {
    pub frame_id: u64,
    pub t: f64,
    pub pose: Pose,
    pub image: String,
    pub depth: String,
    pub image_checksum: String,
    pub depth_checksum: String,
    pub status: FrameStatus,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderLog {
    pub complete: bool,
    pub frames: Vec<RenderRecord>,
}

impl RenderLog {
    pub fn load(dir: &Path) -> Result<Self, RenderError> {
        let text = fs::read_to_string(dir.join(RENDER_LOG))?;
        serde_json::from_str(&text).map_err(|e| RenderError::Log(e.to_string()))
    }

    fn save(&self, dir: &Path) -> Result<(), RenderError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| RenderError::Log(e.to_string()))?;
        text.push('\n');
        fs::write(dir.join(RENDER_LOG), text)?;
        Ok(())
    }
}

pub fn image_name(frame_id: u64) -> String {
    format!("frame_{frame_id:05}.png")
}

pub fn depth_name(frame_id: u64) -> String {
    format!("depth_{frame_id:05}.f32")
}

fn file_checksum(path: &Path) -> Option<String> {
    fs::read(path).ok().map(|b| checksum_hex(&b))
}

fn reusable(prev: &RenderRecord, t: f64, pose: &Pose, dir: &Path) -> bool {
    prev.status == FrameStatus::Complete
        && prev.t == t
        && prev.pose == *pose
        && file_checksum(&dir.join(&prev.image)).as_deref() == Some(prev.image_checksum.as_str())
        && file_checksum(&dir.join(&prev.depth)).as_deref() == Some(prev.depth_checksum.as_str())
}

/// Renders one frame per entry of `frame_times` into `out_dir`: a PNG image,
/// a float32 depth raster with sidecar, and a record in [`RENDER_LOG`].
///
/// Frames whose outputs are already present with matching checksums are not
/// re-rendered. A failing frame is logged as incomplete before the error is
/// returned.
pub fn render_trajectory(
    scene: &Scene,
    camera: &CameraModel,
    traj: &Trajectory,
    frame_times: &[f64],
    cfg: &RenderConfig,
    out_dir: &Path,
) -> Result<RenderLog, RenderError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let previous = RenderLog::load(out_dir).unwrap_or_default();
    let mut log = RenderLog { complete: false, frames: Vec::with_capacity(frame_times.len()) };

    for (i, &t) in frame_times.iter().enumerate() {
        let frame_id = i as u64;
        let result = (|| -> Result<RenderRecord, RenderError> {
            let pose = interpolate_pose(traj, t)?;
            if let Some(prev) = previous.frames.iter().find(|r| r.frame_id == frame_id) {
                if reusable(prev, t, &pose, out_dir) {
                    return Ok(prev.clone());
                }
            }
            let frame = render_frame(scene, camera, &pose, cfg, frame_id)?;
            let (image, depth) = (image_name(frame_id), depth_name(frame_id));
            imageio::write_gray(&out_dir.join(&image), frame.width, frame.height, frame.bit_depth, &frame.dn)?;
            let depth_path = out_dir.join(&depth);
            let values: Vec<f32> = frame.depth.iter().map(|&d| d as f32).collect();
            raster::write_raster(
                &depth_path,
                &raster::sidecar_path(&depth_path),
                &RasterHeader::image(frame.width as usize, frame.height as usize),
                &values,
            )?;
            Ok(RenderRecord {
                frame_id,
                t,
                pose,
                image_checksum: file_checksum(&out_dir.join(&image)).unwrap_or_default(),
                depth_checksum: checksum_hex(&raster::encode_f32(&values)),
                image,
                depth,
                status: FrameStatus::Complete,
            })
        })();
        match result {
            Ok(rec) => log.frames.push(rec),
            Err(e) => {
                log.frames.push(RenderRecord {
                    frame_id,
                    t,
                    pose: Pose::identity(),
                    image: image_name(frame_id),
                    depth: depth_name(frame_id),
                    image_checksum: String::new(),
                    depth_checksum: String::new(),
                    status: FrameStatus::Incomplete,
                });
                log.save(out_dir)?;
                return Err(RenderError::Frame { frame_id, source: Box::new(e) });
            }
        }
    }
    log.complete = true;
    log.save(out_dir)?;
    Ok(log)
}
