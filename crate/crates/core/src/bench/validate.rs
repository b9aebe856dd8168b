use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::count_problems;
use super::{DatasetManifest, FrameRecord};
use crate::groundtruth::{compute_flow, read_flo, DepthMap};
use crate::hash::checksum_hex;
use crate::imageio;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    /// Counts, ids, files, checksums, image sizes and flow recomputation.
    Full,
    /// Counts and ids only; for manifests whose files are not on disk.
    MetadataOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationOptions {
    pub mode: ValidationMode,
    /// Number of flow pairs recomputed, spread evenly over the dataset.
    pub flow_samples: usize,
    /// Largest allowed mean `|Δflow|` in pixels.
    pub flow_threshold_px: f64,
    /// Largest allowed fraction of pixels whose validity differs.
    pub mask_disagreement: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self { mode: ValidationMode::Full, flow_samples: 4, flow_threshold_px: 1e-3, mask_disagreement: 0.01 }
    }
}

impl ValidationOptions {
    pub fn metadata_only() -> Self {
        Self { mode: ValidationMode::MetadataOnly, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn from_problems(name: &str, ok_detail: String, problems: Vec<String>) -> Self {
        let passed = problems.is_empty();
        Self { name: name.into(), passed, detail: if passed { ok_detail } else { problems.join("; ") } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub dataset_id: String,
    pub mode: ValidationMode,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Runs every check and collects the outcomes. Failures are reported, never
/// raised; files are resolved against `root`.
pub fn validate_dataset(manifest: &DatasetManifest, root: &Path, opts: &ValidationOptions) -> ValidationReport {
    let mut checks = vec![check_counts(manifest), check_ids(manifest)];
    if opts.mode == ValidationMode::Full {
        checks.push(check_files(manifest, root));
        checks.push(check_checksums(manifest, root));
        checks.push(check_dimensions(manifest, root));
        checks.push(check_flow(manifest, root, opts));
    }
    let passed = checks.iter().all(|c| c.passed);
    ValidationReport { dataset_id: manifest.dataset_id.clone(), mode: opts.mode, checks, passed }
}

fn check_counts(m: &DatasetManifest) -> CheckResult {
    let mut problems = count_problems(&m.sequences, &m.frames);
    if m.frame_count != m.frames.len() as u64 {
        problems.push(format!("frame_count is {}, frames list has {}", m.frame_count, m.frames.len()));
    }
    if m.frames.is_empty() {
        problems.push("no frames".into());
    }
    CheckResult::from_problems("counts", format!("{} frames in {} sequences", m.frames.len(), m.sequences.len()), problems)
}

fn check_ids(m: &DatasetManifest) -> CheckResult {
    let mut seen = BTreeSet::new();
    let dups: BTreeSet<u64> = m.frames.iter().filter(|f| !seen.insert(f.frame_id)).map(|f| f.frame_id).collect();
    let problems = dups.iter().map(|id| format!("frame id {id} repeated")).collect();
    CheckResult::from_problems("unique_ids", "all frame ids unique".into(), problems)
}

fn per_frame<F>(m: &DatasetManifest, f: F) -> Vec<String>
where
    F: Fn(&FrameRecord) -> Vec<String> + Sync,
{
    let mut frames: Vec<_> = m.frames.iter().collect();
    frames.sort_by_key(|r| r.frame_id);
    frames.par_iter().flat_map_iter(|r| f(r)).collect()
}

fn check_files(m: &DatasetManifest, root: &Path) -> CheckResult {
    let problems = per_frame(m, |f| {
        f.referenced_files()
            .into_iter()
            .filter(|rel| !root.join(rel).is_file())
            .map(|rel| format!("frame {}: missing {rel}", f.frame_id))
            .collect()
    });
    CheckResult::from_problems("files_exist", "all referenced files present".into(), problems)
}

fn check_checksums(m: &DatasetManifest, root: &Path) -> CheckResult {
    let problems = per_frame(m, |f| {
        let mut out = Vec::new();
        for rel in f.referenced_files() {
            match (f.checksums.get(&rel), fs::read(root.join(&rel))) {
                (None, _) => out.push(format!("frame {}: no checksum recorded for {rel}", f.frame_id)),
                (Some(_), Err(_)) => out.push(format!("frame {}: cannot read {rel}", f.frame_id)),
                (Some(want), Ok(bytes)) => {
                    let got = checksum_hex(&bytes);
                    if &got != want {
                        out.push(format!("frame {}: checksum mismatch for {rel} ({got} != {want})", f.frame_id));
                    }
                }
            }
        }
        out
    });
    CheckResult::from_problems("checksums", "all checksums match".into(), problems)
}

fn check_dimensions(m: &DatasetManifest, root: &Path) -> CheckResult {
    let Some(cam) = m.config.camera else {
        return CheckResult { name: "image_dimensions".into(), passed: true, detail: "no camera model recorded".into() };
    };
    let problems = per_frame(m, |f| match imageio::dimensions(&root.join(&f.image)) {
        Ok((w, h)) if (w, h) == (cam.width, cam.height) => vec![],
        Ok((w, h)) => vec![format!("frame {}: image is {w}x{h}, camera is {}x{}", f.frame_id, cam.width, cam.height)],
        Err(e) => vec![format!("frame {}: {e}", f.frame_id)],
    });
    CheckResult::from_problems("image_dimensions", format!("all images {}x{}", cam.width, cam.height), problems)
}

/// Evenly spaced picks of `k` out of `n`, always including the first.
fn sample_indices(n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    (0..k).map(|i| i * n / k).collect()
}

fn recheck_pair(m: &DatasetManifest, root: &Path, a: &FrameRecord, b: Option<&FrameRecord>, opts: &ValidationOptions) -> Result<String, String> {
    let id = a.frame_id;
    let cam = m.config.camera.ok_or_else(|| "no camera model recorded".to_string())?;
    let b = b.ok_or_else(|| format!("frame {id}: flow without a next frame"))?;
    let (Some(pa), Some(pb)) = (a.pose, b.pose) else {
        return Err(format!("frame {id}: pair lacks poses"));
    };
    let (Some(da), Some(db)) = (&a.depth, &b.depth) else {
        return Err(format!("frame {id}: pair lacks depth maps"));
    };
    let load = |rel: &str| DepthMap::load(&root.join(rel)).map_err(|e| format!("frame {id}: {e}"));
    let tol = m.config.occlusion_tolerance.unwrap_or_default();
    let fresh = compute_flow(&load(da)?, &pa, &pb, &cam, &load(db)?, &tol).map_err(|e| format!("frame {id}: {e}"))?;
    let flo = a.flow_to_next.as_deref().unwrap_or_default();
    let stored = read_flo(&root.join(flo)).map_err(|e| format!("frame {id}: {e}"))?;
    if (stored.width, stored.height) != (fresh.width, fresh.height) {
        return Err(format!("frame {id}: stored flow is {}x{}, expected {}x{}", stored.width, stored.height, fresh.width, fresh.height));
    }
    let (mut sum, mut both, mut differ) = (0.0, 0usize, 0usize);
    for i in 0..fresh.len() {
        match (fresh.valid[i], stored.valid[i]) {
            (true, true) => {
                let du = (fresh.u[i] - stored.u[i]) as f64;
                let dv = (fresh.v[i] - stored.v[i]) as f64;
                sum += (du * du + dv * dv).sqrt();
                both += 1;
            }
            (x, y) if x != y => differ += 1,
            _ => {}
        }
    }
    let mean = if both > 0 { sum / both as f64 } else { 0.0 };
    let frac = differ as f64 / fresh.len() as f64;
    let summary = format!("frame {id}: mean |Δ| {mean:.3e} px, mask disagreement {:.2}%", 100.0 * frac);
    if both == 0 && fresh.valid_count() > 0 {
        return Err(format!("frame {id}: no common valid pixels"));
    }
    if mean >= opts.flow_threshold_px || frac >= opts.mask_disagreement {
        Err(summary)
    } else {
        Ok(summary)
    }
}

fn check_flow(m: &DatasetManifest, root: &Path, opts: &ValidationOptions) -> CheckResult {
    let pairs = m.flow_pairs();
    if pairs.is_empty() {
        return CheckResult { name: "flow_consistency".into(), passed: true, detail: "no flow files".into() };
    }
    let picks = sample_indices(pairs.len(), opts.flow_samples.max(1));
    let results: Vec<_> = picks.par_iter().map(|&i| recheck_pair(m, root, pairs[i].0, pairs[i].1, opts)).collect();
    let problems: Vec<String> = results.iter().filter_map(|r| r.as_ref().err().cloned()).collect();
    let ok: Vec<String> = results.into_iter().filter_map(Result::ok).collect();
    CheckResult::from_problems("flow_consistency", format!("{} pairs recomputed; {}", ok.len(), ok.join("; ")), problems)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{build_manifest, ConfigSnapshot, DatasetHeader, DatasetKind, Scenario};
    use crate::geom::CameraModel;

    fn manifest_with_images(dir: &Path, n: u64, cam: CameraModel) -> DatasetManifest {
        let frames: Vec<_> = (0..n)
            .map(|i| {
                let name = format!("f{i}.png");
                imageio::write_gray(&dir.join(&name), cam.width, cam.height, 8, &vec![i as u16; cam.pixel_count()]).unwrap();
                FrameRecord::image_only(i, "s", i as f64, name)
            })
            .collect();
        let header = DatasetHeader {
            dataset_id: "T".into(),
            scenario: Scenario::Natural,
            kind: DatasetKind::Synthetic,
            description: String::new(),
            sequences: vec![],
        };
        let cfg = ConfigSnapshot { camera: Some(cam), ..Default::default() };
        build_manifest(header, frames, cfg, Some(dir)).unwrap()
    }

    #[test]
    fn truncated_image_fails_checksum_naming_frame() {
        let dir = tempfile::tempdir().unwrap();
        let cam = CameraModel::from_fov(8, 6, 1.0).unwrap();
        let m = manifest_with_images(dir.path(), 3, cam);
        assert!(validate_dataset(&m, dir.path(), &ValidationOptions::default()).passed);
        let p = dir.path().join("f1.png");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        let r = validate_dataset(&m, dir.path(), &ValidationOptions::default());
        assert!(!r.passed);
        let c = r.check("checksums").unwrap();
        assert!(!c.passed && c.detail.contains("frame 1"), "{}", c.detail);
        assert!(r.check("counts").unwrap().passed);
    }

    #[test]
    fn wrong_image_size_detected() {
        let dir = tempfile::tempdir().unwrap();
        let cam = CameraModel::from_fov(8, 6, 1.0).unwrap();
        let mut m = manifest_with_images(dir.path(), 2, cam);
        m.config.camera = Some(CameraModel::from_fov(8, 7, 1.0).unwrap());
        let r = validate_dataset(&m, dir.path(), &ValidationOptions::default());
        assert!(!r.check("image_dimensions").unwrap().passed);
    }

    #[test]
    fn metadata_only_ignores_files_and_checks_counts() {
        let dir = tempfile::tempdir().unwrap();
        let cam = CameraModel::from_fov(4, 4, 1.0).unwrap();
        let mut m = manifest_with_images(dir.path(), 3, cam);
        let empty = tempfile::tempdir().unwrap();
        let r = validate_dataset(&m, empty.path(), &ValidationOptions::metadata_only());
        assert!(r.passed && r.checks.len() == 2);
        m.frame_count = 4;
        m.frames[2].frame_id = 1;
        let r = validate_dataset(&m, empty.path(), &ValidationOptions::metadata_only());
        assert!(!r.check("counts").unwrap().passed && !r.check("unique_ids").unwrap().passed);
    }

    #[test]
    fn sampling_is_spread_and_bounded() {
        assert_eq!(sample_indices(10, 4), [0, 2, 5, 7]);
        assert_eq!(sample_indices(2, 4), [0, 1]);
        assert!(sample_indices(0, 4).is_empty());
    }
}
