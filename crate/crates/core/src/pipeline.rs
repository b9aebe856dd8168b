//! End-to-end dataset production: DEM, augmentation, rendering, flow ground
//! truth, manifest and validation, driven by one JSON [`RunConfig`].
//!
//! All randomness derives from [`RunConfig::seed`] through named sub-seeds, so
//! two runs of the same config write identical bytes. Wall-clock timings are
//! confined to `run_log.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::bench::{
    build_manifest, validate_dataset, ConfigSnapshot, DatasetHeader, DatasetKind, DatasetManifest, FrameRecord,
    Scenario, ValidationOptions, ValidationReport,
};
use crate::dem::{fuse, load_dem, resample, DemGrid, FusionConfig};
use crate::geom::{CameraModel, Pose, PoseSample, Trajectory};
use crate::groundtruth::{compute_flow, write_flow, DepthMap, OcclusionTolerance};
use crate::hash;
use crate::procedural::{
    add_perlin, apply_craters, generate_boulders, generate_craters, BoulderField, CraterField, NoiseSpec,
    SizeDistribution,
};
use crate::raster::sidecar_path;
use crate::render::{render_trajectory, HapkeParams, RenderConfig, Scene};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUN_LOG_FILE: &str = "run_log.json";
pub const VALIDATION_FILE: &str = "validation.json";
/// Present while a run is in progress or after it failed; names the stage.
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

/// Where the base terrain comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DemSource {
    /// Fractal relief generated from the run seed.
    Synthetic { ncols: usize, nrows: usize, cell_size: f64, relief_m: f64, wavelength_m: f64 },
    /// Raster files; each header is the raster's JSON sidecar. An optional
    /// high-resolution raster is fused into the low-resolution one.
    Files { low: PathBuf, high: Option<PathBuf>, fusion: Option<FusionConfig> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemStage {
    pub source: DemSource,
    /// Output cell size; the fused or generated grid is kept as is when absent.
    #[serde(default)]
    pub resample_cell_size: Option<f64>,
}

/// Perlin settings without a seed; the run derives it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerlinConfig {
    pub amplitude: f64,
    pub base_wavelength: f64,
    pub octaves: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub craters: Option<SizeDistribution>,
    pub boulders: Option<SizeDistribution>,
    pub perlin: Option<PerlinConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub hapke: HapkeParams,
    /// Toward the sun; normalized on load.
    pub sun_direction: [f64; 3],
    pub sun_irradiance: f64,
}

/// Scene description for the standalone render and capture commands. Paths
/// are relative to the file that holds it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    /// Terrain raster; the header is its JSON sidecar.
    pub dem: PathBuf,
    /// JSON boulder field as written by the augment stage.
    #[serde(default)]
    pub boulders: Option<PathBuf>,
    /// Albedo-factor raster on any grid.
    #[serde(default)]
    pub albedo: Option<PathBuf>,
    #[serde(default)]
    pub hapke: HapkeParams,
    pub sun_direction: [f64; 3],
    pub sun_irradiance: f64,
}

impl SceneFile {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)?;
        let mut s: Self = serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("scene: {e}")))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [Some(&mut s.dem), s.boulders.as_mut(), s.albedo.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(s)
    }

    pub fn build(&self) -> Result<Scene, PipelineError> {
        let err = |e: &dyn std::fmt::Display| PipelineError::Config(format!("scene: {e}"));
        let dem = load_dem(&self.dem, &sidecar_path(&self.dem)).map_err(|e| err(&e))?;
        let boulders: BoulderField = match &self.boulders {
            Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| err(&e))?,
            None => BoulderField::default(),
        };
        let sun = Vector3::from(self.sun_direction);
        if !(sun.norm() > 0.0) {
            return Err(err(&"sun_direction must be non-zero"));
        }
        let scene = Scene::new(dem, boulders, self.hapke, sun.normalize(), self.sun_irradiance).map_err(|e| err(&e))?;
        match &self.albedo {
            Some(p) => {
                let tex = load_dem(p, &sidecar_path(p)).map_err(|e| err(&e))?;
                scene.with_albedo(tex).map_err(|e| err(&e))
            }
            None => Ok(scene),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrajectorySource {
    /// CSV with header `t,px,py,pz,qw,qx,qy,qz`.
    Csv { path: PathBuf },
    Inline { samples: Vec<PoseSample> },
}

/// Frame `i` is rendered at `start + i · step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSchedule {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl FrameSchedule {
    pub fn times(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.start + i as f64 * self.step).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub dataset_id: String,
    pub scenario: Scenario,
    pub kind: DatasetKind,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub dem: DemStage,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
    pub scene: SceneConfig,
    pub camera: CameraModel,
    pub trajectory: TrajectorySource,
    pub frames: FrameSchedule,
    /// Its `seed` field is replaced by the derived render seed.
    pub render: RenderConfig,
    #[serde(default)]
    pub occlusion_tolerance: OcclusionTolerance,
    #[serde(default)]
    pub validation: ValidationOptions,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Resolves relative input paths against `base`, normally the directory
    /// holding the config file.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DemSource::Files { low, high, .. } = &mut self.dem.source {
            fix(low);
            if let Some(h) = high {
                fix(h);
            }
        }
        if let TrajectorySource::Csv { path } = &mut self.trajectory {
            fix(path);
        }
    }

    /// The bundled miniature scene: a 64 × 64 DEM at 2 m with craters,
    /// boulders and noise, ten 128 × 128 frames of a tilted descent.
    pub fn demo() -> Self {
        let (half, cs) = (63.0, 2.0);
        let centre = Vector3::new(half, half, 0.0);
        let samples = [(0.0, Vector3::new(50.0, 52.0, 110.0)), (9.0, Vector3::new(62.0, 64.0, 70.0))]
            .into_iter()
            .map(|(t, eye)| {
                let target = centre + Vector3::new(6.0, 6.0, 0.0) + (eye - centre) * 0.1;
                let pose = Pose::look_at(eye, Vector3::new(target.x, target.y, 0.0), Vector3::y()).expect("demo pose");
                PoseSample { t, pose }
            })
            .collect();
        Self {
            seed: 2024,
            dataset: DatasetConfig {
                dataset_id: "DEMO-S1".into(),
                scenario: Scenario::Natural,
                kind: DatasetKind::Synthetic,
                description: "Miniature descent over procedural terrain".into(),
            },
            dem: DemStage {
                source: DemSource::Synthetic { ncols: 64, nrows: 64, cell_size: cs, relief_m: 4.0, wavelength_m: 60.0 },
                resample_cell_size: None,
            },
            augmentation: AugmentationConfig {
                craters: Some(SizeDistribution { density: 1500.0, r_min: 3.0, r_max: 15.0, power_exponent: 3.0 }),
                boulders: Some(SizeDistribution { density: 15000.0, r_min: 0.4, r_max: 1.6, power_exponent: 3.0 }),
                perlin: Some(PerlinConfig { amplitude: 0.3, base_wavelength: 8.0, octaves: 3 }),
            },
            scene: SceneConfig {
                hapke: HapkeParams::default(),
                sun_direction: [0.5, 0.3, 0.8124],
                sun_irradiance: 1361.0,
            },
            camera: CameraModel::from_fov(128, 128, 50f64.to_radians()).expect("demo camera"),
            trajectory: TrajectorySource::Inline { samples },
            frames: FrameSchedule { start: 0.0, step: 1.0, count: 10 },
            render: RenderConfig { supersampling: 2, gain: 6.0, ..RenderConfig::default() },
            occlusion_tolerance: OcclusionTolerance::default(),
            validation: ValidationOptions::default(),
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.into()));
        if self.frames.count == 0 {
            return bad("frames.count must be >= 1");
        }
        if !(self.frames.step > 0.0) || !self.frames.start.is_finite() {
            return bad("frames.step must be > 0 and start finite");
        }
        let s = Vector3::from(self.scene.sun_direction);
        if !(s.norm() > 0.0) || !s.iter().all(|c| c.is_finite()) {
            return bad("scene.sun_direction must be a non-zero vector");
        }
        self.camera.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(thiserror::Error, Debug)]
pub enum PipelineError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("stage \"{stage}\" failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("dataset validation failed: {}", failed_checks(.0))]
    Validation(Box<ValidationReport>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn failed_checks(r: &ValidationReport) -> String {
    r.checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>().join("; ")
}

impl PipelineError {
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Self::Stage { stage, .. } => Some(stage),
            Self::Validation(_) => Some("validate"),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Per-stage wall time and the seeds used. Not part of the dataset proper.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub complete: bool,
    pub failed_stage: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub stages: Vec<StageTiming>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub manifest: DatasetManifest,
    pub validation: ValidationReport,
    pub log: RunLog,
}

/// Sub-seeds, one per randomized stage, from the top-level seed.
pub fn stage_seeds(seed: u64) -> BTreeMap<String, u64> {
    ["dem", "augment.craters", "augment.boulders", "augment.perlin", "render"]
        .into_iter()
        .map(|n| (n.to_string(), hash::named(seed, n)))
        .collect()
}

pub fn flow_name(frame_id: u64) -> String {
    format!("flow_{frame_id:05}.flo")
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

struct Runner<'a> {
    out: &'a Path,
    log: RunLog,
}

impl Runner<'_> {
    fn stage<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T, BoxError>) -> Result<T, PipelineError> {
        fs::write(self.out.join(INCOMPLETE_MARKER), format!("{stage}\n"))?;
        let start = Instant::now();
        let result = f();
        self.log.stages.push(StageTiming { stage: stage.into(), seconds: start.elapsed().as_secs_f64() });
        result.map_err(|source| {
            self.log.failed_stage = Some(stage.into());
            PipelineError::Stage { stage, source }
        })
    }

    fn write_log(&self) -> Result<(), PipelineError> {
        let mut text = serde_json::to_string_pretty(&self.log).map_err(|e| PipelineError::Config(e.to_string()))?;
        text.push('\n');
        fs::write(self.out.join(RUN_LOG_FILE), text)?;
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BoxError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn base_dem(stage: &DemStage, seed: u64) -> Result<DemGrid, BoxError> {
    let dem = match &stage.source {
        DemSource::Synthetic { ncols, nrows, cell_size, relief_m, wavelength_m } => {
            let origin = (0.0, (*nrows as f64 - 1.0) * cell_size);
            let flat = DemGrid::constant(*ncols, *nrows, *cell_size, origin, 0.0)?;
            add_perlin(&flat, &NoiseSpec::new(*relief_m, *wavelength_m, 4, seed))?
        }
        DemSource::Files { low, high, fusion } => {
            let low_dem = load_dem(low, &sidecar_path(low))?;
            match high {
                None => low_dem,
                Some(h) => {
                    let high_dem = load_dem(h, &sidecar_path(h))?;
                    let cfg = fusion.unwrap_or_else(|| FusionConfig::for_cell_size(high_dem.cell_size()));
                    fuse(&low_dem, &high_dem, &cfg)?
                }
            }
        }
    };
    Ok(match stage.resample_cell_size {
        Some(cs) => resample(&dem, cs)?,
        None => dem,
    })
}

/// Runs every stage into `out_dir`. A validation failure still leaves the
/// full dataset on disk and is returned as [`PipelineError::Validation`].
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let seeds = stage_seeds(cfg.seed);
    let mut run = Runner { out: out_dir, log: RunLog { seeds: seeds.clone(), ..Default::default() } };
    let result = run_stages(cfg, &seeds, &mut run);
    let marker = out_dir.join(INCOMPLETE_MARKER);
    match &result {
        Ok(o) if o.validation.passed => {
            run.log.complete = true;
            fs::remove_file(&marker)?;
        }
        Ok(_) => {
            run.log.failed_stage = Some("validate".into());
            fs::write(&marker, "validate\n")?;
        }
        Err(e) => fs::write(&marker, format!("{}\n{e}\n", e.stage().unwrap_or("config")))?,
    }
    run.write_log()?;
    let outcome = result?;
    if !outcome.validation.passed {
        return Err(PipelineError::Validation(Box::new(outcome.validation)));
    }
    Ok(RunOutcome { log: run.log, ..outcome })
}

fn run_stages(cfg: &RunConfig, seeds: &BTreeMap<String, u64>, run: &mut Runner) -> Result<RunOutcome, PipelineError> {
    let out = run.out;
    let (dem_dir, frames_dir, flow_dir) = (out.join("dem"), out.join("frames"), out.join("flow"));

    let dem = run.stage("dem", || {
        let dem = base_dem(&cfg.dem, seeds["dem"])?;
        fs::create_dir_all(&dem_dir)?;
        let p = dem_dir.join("base.f32");
        dem.write(&p, &sidecar_path(&p))?;
        Ok(dem)
    })?;

    let (dem, boulders) = run.stage("augment", || {
        let aug = &cfg.augmentation;
        let region = dem.extent();
        let craters = match &aug.craters {
            Some(d) => generate_craters(&region, d, seeds["augment.craters"])?,
            None => CraterField::default(),
        };
        let mut terrain = apply_craters(&dem, &craters)?;
        if let Some(p) = aug.perlin {
            let spec = NoiseSpec::new(p.amplitude, p.base_wavelength, p.octaves, seeds["augment.perlin"]);
            terrain = add_perlin(&terrain, &spec)?;
        }
        let boulders = match &aug.boulders {
            Some(d) => generate_boulders(&region, d, seeds["augment.boulders"])?,
            None => BoulderField::default(),
        };
        let p = dem_dir.join("terrain.f32");
        terrain.write(&p, &sidecar_path(&p))?;
        write_json(&dem_dir.join("craters.json"), &craters)?;
        write_json(&dem_dir.join("boulders.json"), &boulders)?;
        Ok((terrain, boulders))
    })?;

    let render_cfg = RenderConfig { seed: seeds["render"], ..cfg.render };
    let render_log = run.stage("render", || {
        let traj = match &cfg.trajectory {
            TrajectorySource::Csv { path } => Trajectory::load(path)?,
            TrajectorySource::Inline { samples } => Trajectory::new(samples.clone())?,
        };
        // Standalone descriptions so the render and capture commands can reuse the scene.
        let scene_file = SceneFile {
            dem: "terrain.f32".into(),
            boulders: Some("boulders.json".into()),
            albedo: None,
            hapke: cfg.scene.hapke,
            sun_direction: cfg.scene.sun_direction,
            sun_irradiance: cfg.scene.sun_irradiance,
        };
        write_json(&dem_dir.join("scene.json"), &scene_file)?;
        write_json(&out.join("camera.json"), &cfg.camera)?;
        let sun = Vector3::from(cfg.scene.sun_direction).normalize();
        let scene = Scene::new(dem, boulders, cfg.scene.hapke, sun, cfg.scene.sun_irradiance)?;
        Ok(render_trajectory(&scene, &cfg.camera, &traj, &cfg.frames.times(), &render_cfg, &frames_dir)?)
    })?;

    run.stage("flow", || {
        fs::create_dir_all(&flow_dir)?;
        for pair in render_log.frames.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            // Flow uses the stored float32 depth so validation can reproduce it exactly.
            let da = DepthMap::load(&frames_dir.join(&a.depth))?;
            let db = DepthMap::load(&frames_dir.join(&b.depth))?;
            let flow = compute_flow(&da, &a.pose, &b.pose, &cfg.camera, &db, &cfg.occlusion_tolerance)?;
            write_flow(&flow_dir.join(flow_name(a.frame_id)), &flow)?;
        }
        Ok(())
    })?;

    let manifest = run.stage("manifest", || {
        let n = render_log.frames.len();
        let frames = render_log
            .frames
            .iter()
            .enumerate()
            .map(|(i, r)| FrameRecord {
                frame_id: r.frame_id,
                sequence: "traj1".into(),
                t: r.t,
                pose: Some(r.pose),
                image: format!("frames/{}", r.image),
                depth: Some(format!("frames/{}", r.depth)),
                flow_to_next: (i + 1 < n).then(|| format!("flow/{}", flow_name(r.frame_id))),
                checksums: BTreeMap::new(),
            })
            .collect();
        let header = DatasetHeader {
            dataset_id: cfg.dataset.dataset_id.clone(),
            scenario: cfg.dataset.scenario,
            kind: cfg.dataset.kind,
            description: cfg.dataset.description.clone(),
            sequences: vec![],
        };
        let snapshot = ConfigSnapshot {
            camera: Some(cfg.camera),
            occlusion_tolerance: Some(cfg.occlusion_tolerance),
            seeds: seeds.clone(),
            scene: serde_json::to_value(&cfg.scene)?,
            augmentation: serde_json::to_value(&cfg.augmentation)?,
            render: serde_json::to_value(render_cfg)?,
        };
        let m = build_manifest(header, frames, snapshot, Some(out))?;
        m.save(&out.join(MANIFEST_FILE))?;
        Ok(m)
    })?;

    let validation = run.stage("validate", || {
        let report = validate_dataset(&manifest, out, &cfg.validation);
        write_json(&out.join(VALIDATION_FILE), &report)?;
        Ok(report)
    })?;

    Ok(RunOutcome { manifest, validation, log: RunLog::default() })
}
