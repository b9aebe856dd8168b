use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::BenchError;
use crate::geom::{CameraModel, Pose};
use crate::groundtruth::{flow_mask_path, OcclusionTolerance};
use crate::hash::checksum_hex;
use crate::raster::sidecar_path;

/// Schema version written into every manifest.
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    Natural,
    ManMade,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    Real,
    Synthetic,
    Laboratory,
    #[serde(rename = "SyntheticGAN")]
    SyntheticGan,
}

/// A named run of consecutive frames, such as one trajectory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub name: String,
    pub frame_count: u64,
}

/// One frame of a dataset. Paths are relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub sequence: String,
    pub t: f64,
    pub pose: Option<Pose>,
    pub image: String,
    pub depth: Option<String>,
    /// Flow from this frame to the next frame of the same sequence.
    pub flow_to_next: Option<String>,
    /// FNV-1a 64 hex digests keyed by relative path.
    #[serde(default)]
    pub checksums: BTreeMap<String, String>,
}

impl FrameRecord {
    /// A record holding only an image path, as for archived real imagery.
    pub fn image_only(frame_id: u64, sequence: &str, t: f64, image: impl Into<String>) -> Self {
        Self {
            frame_id,
            sequence: sequence.into(),
            t,
            pose: None,
            image: image.into(),
            depth: None,
            flow_to_next: None,
            checksums: BTreeMap::new(),
        }
    }

    /// Every file the record points at: image, depth raster and sidecar,
    /// flow and its validity mask.
    pub fn referenced_files(&self) -> Vec<String> {
        let mut out = vec![self.image.clone()];
        if let Some(d) = &self.depth {
            out.push(d.clone());
            out.push(sidecar_path(Path::new(d)).to_string_lossy().into_owned());
        }
        if let Some(f) = &self.flow_to_next {
            out.push(f.clone());
            out.push(flow_mask_path(Path::new(f)).to_string_lossy().into_owned());
        }
        out
    }
}

/// The generation settings that produced a dataset. Module configs are kept
/// as raw JSON so each owning module's serialized form is stored verbatim.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub camera: Option<CameraModel>,
    pub occlusion_tolerance: Option<OcclusionTolerance>,
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
    #[serde(default)]
    pub scene: Value,
    #[serde(default)]
    pub augmentation: Value,
    #[serde(default)]
    pub render: Value,
}

/// The dataset-level fields of a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub dataset_id: String,
    pub scenario: Scenario,
    pub kind: DatasetKind,
    pub description: String,
    /// Declared sub-sequences. Left empty, they are derived from the frames.
    #[serde(default)]
    pub sequences: Vec<SequenceInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub dataset_id: String,
    pub scenario: Scenario,
    pub kind: DatasetKind,
    pub description: String,
    pub frame_count: u64,
    pub sequences: Vec<SequenceInfo>,
    pub frames: Vec<FrameRecord>,
    pub config: ConfigSnapshot,
}

impl DatasetManifest {
    /// Pretty JSON with sorted keys and a trailing newline. Floats use the
    /// shortest round-trip representation, so load then save is byte-stable.
    pub fn to_canonical_json(&self) -> Result<String, BenchError> {
        // Value maps are ordered, which sorts every object's keys.
        let value = serde_json::to_value(self)?;
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let m: Self = serde_json::from_str(text)?;
        if m.version != MANIFEST_VERSION {
            return Err(BenchError::InvalidManifest(format!("unsupported version {}", m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), BenchError> {
        fs::write(path, self.to_canonical_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Frames of one sequence in frame-id order.
    pub fn sequence_frames(&self, name: &str) -> Vec<&FrameRecord> {
        let mut v: Vec<_> = self.frames.iter().filter(|f| f.sequence == name).collect();
        v.sort_by_key(|f| f.frame_id);
        v
    }

    /// `(frame, next frame)` pairs for every record carrying a flow file.
    pub fn flow_pairs(&self) -> Vec<(&FrameRecord, Option<&FrameRecord>)> {
        let mut out = Vec::new();
        for seq in &self.sequences {
            let frames = self.sequence_frames(&seq.name);
            for (i, f) in frames.iter().enumerate() {
                if f.flow_to_next.is_some() {
                    out.push((*f, frames.get(i + 1).copied()));
                }
            }
        }
        out.sort_by_key(|(f, _)| f.frame_id);
        out
    }
}

fn derive_sequences(frames: &[FrameRecord]) -> Vec<SequenceInfo> {
    let mut out: Vec<SequenceInfo> = Vec::new();
    for f in frames {
        match out.iter_mut().find(|s| s.name == f.sequence) {
            Some(s) => s.frame_count += 1,
            None => out.push(SequenceInfo { name: f.sequence.clone(), frame_count: 1 }),
        }
    }
    out
}

/// Count check shared with validation: declared sequences must account for
/// every frame, each with the declared count.
pub(super) fn count_problems(sequences: &[SequenceInfo], frames: &[FrameRecord]) -> Vec<String> {
    let mut problems = Vec::new();
    let mut actual: BTreeMap<&str, u64> = BTreeMap::new();
    for f in frames {
        *actual.entry(f.sequence.as_str()).or_default() += 1;
    }
    let mut declared = BTreeSet::new();
    for s in sequences {
        if !declared.insert(s.name.as_str()) {
            problems.push(format!("sequence {} declared twice", s.name));
        }
        let n = actual.get(s.name.as_str()).copied().unwrap_or(0);
        if n != s.frame_count {
            problems.push(format!("sequence {} declares {} frames, has {n}", s.name, s.frame_count));
        }
    }
    for name in actual.keys() {
        if !declared.contains(name) {
            problems.push(format!("frames reference undeclared sequence {name}"));
        }
    }
    problems
}

/// Assembles a manifest. Frames are sorted by id. With a `root`, every
/// referenced file must exist and its checksum is recorded; without one the
/// manifest is metadata only and existing checksums are kept as given.
pub fn build_manifest(
    header: DatasetHeader,
    mut frames: Vec<FrameRecord>,
    config: ConfigSnapshot,
    root: Option<&Path>,
) -> Result<DatasetManifest, BenchError> {
    if frames.is_empty() {
        return Err(BenchError::EmptyFrames);
    }
    frames.sort_by_key(|f| f.frame_id);
    if let Some(w) = frames.windows(2).find(|w| w[0].frame_id == w[1].frame_id) {
        return Err(BenchError::DuplicateFrame(w[0].frame_id));
    }
    let sequences = if header.sequences.is_empty() { derive_sequences(&frames) } else { header.sequences };
    let problems = count_problems(&sequences, &frames);
    if !problems.is_empty() {
        return Err(BenchError::InvalidManifest(problems.join("; ")));
    }
    if let Some(root) = root {
        frames.par_iter_mut().try_for_each(|f| -> Result<(), BenchError> {
            let mut sums = BTreeMap::new();
            for rel in f.referenced_files() {
                let path = root.join(&rel);
                let bytes = fs::read(&path).map_err(|_| BenchError::MissingFile { frame_id: f.frame_id, path })?;
                sums.insert(rel, checksum_hex(&bytes));
            }
            f.checksums = sums;
            Ok(())
        })?;
    }
    Ok(DatasetManifest {
        version: MANIFEST_VERSION,
        dataset_id: header.dataset_id,
        scenario: header.scenario,
        kind: header.kind,
        description: header.description,
        frame_count: frames.len() as u64,
        sequences,
        frames,
        config,
    })
}
