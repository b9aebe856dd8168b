use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use lunagen::bench::{
    catalog, catalog_entry, catalog_manifest, evaluate_predictions, validate_dataset, DatasetManifest,
    ValidationMode, ValidationOptions, ValidationReport,
};
use lunagen::capture::{backproject_textures, fit_brdf, CaptureProblem, CaptureView, FitOptions, FreeParam};
use lunagen::dem::{fuse, load_dem, resample, DemGrid, FusionConfig};
use lunagen::geom::{CameraModel, Trajectory};
use lunagen::groundtruth::{
    compute_flow, invert_los, read_landmarks, read_observations, write_flow, DepthMap, OcclusionTolerance,
    SolverOptions,
};
use lunagen::imageio::read_gray;
use lunagen::pipeline::{flow_name, run_pipeline, stage_seeds, PipelineError, RunConfig, SceneFile};
use lunagen::procedural::{
    add_perlin, apply_craters, generate_boulders, generate_craters, BoulderField, CraterField, NoiseSpec,
    SizeDistribution,
};
use lunagen::raster::sidecar_path;
use lunagen::render::{render_trajectory, RenderConfig, RenderLog};

use crate::{BenchCommand, CaptureCommand, CaptureInputs, Cli, Command, DatasetCommand, DemCommand};

/// File written next to rendered frames so later commands can reproduce the sampling.
const RENDER_CONFIG: &str = "render_config.json";

pub enum Status {
    Ok,
    ValidationFailed,
}

pub fn dispatch(cli: &Cli) -> Result<Status> {
    let seed = cli.seed.unwrap_or(0);
    let out = || cli.out.clone().ok_or_else(|| anyhow!("--out is required for this command"));
    match &cli.command {
        Command::Dem(DemCommand::Fuse { low, high, feather_m, offset_correct }) => {
            let low = read_dem(low)?;
            let high = read_dem(high)?;
            let cfg = FusionConfig {
                feather_width: feather_m.unwrap_or(20.0 * high.cell_size()),
                offset_correction: *offset_correct,
            };
            write_dem(&fuse(&low, &high, &cfg)?, &out()?)?;
        }
        Command::Dem(DemCommand::Resample { input, cell_size }) => {
            write_dem(&resample(&read_dem(input)?, *cell_size)?, &out()?)?;
        }
        Command::Augment(a) => augment(a, seed, &out()?)?,
        Command::Render(a) => render(a, seed, &out()?)?,
        Command::Flow(a) => flow(a, &out()?)?,
        Command::InvertLos(a) => {
            let obs = read_observations(open(&a.obs)?)?;
            let landmarks = read_landmarks(open(&a.landmarks)?)?;
            let initial = Trajectory::load(&a.initial)?;
            let opts = SolverOptions { max_iterations: a.max_iters, ..SolverOptions::default() };
            let result = invert_los(&obs, &landmarks, &initial, &opts)?;
            let out = out()?;
            result.trajectory.save(&out)?;
            let report = out.with_file_name(format!("{}_report.json", stem(&out)));
            write_json(&report, &result.reports)?;
            let worst = result.reports.iter().map(|r| r.rms).fold(0.0, f64::max);
            println!("{} frames inverted, worst rms {worst:.3e}", result.reports.len());
        }
        Command::Capture(CaptureCommand::Fit { inputs, free, ss, shadows, max_iters }) => {
            let free = free.split(',').map(str::parse).collect::<Result<Vec<FreeParam>, _>>().map_err(|e| anyhow!(e))?;
            let (views, camera, scene, mut render) = capture_inputs(inputs, seed)?;
            if render_config_path(&inputs.refs).is_none() {
                render.supersampling = *ss;
                render.shadows = *shadows;
            }
            let problem = CaptureProblem { references: views, camera, scene, render, free };
            let opts = FitOptions { max_iters: *max_iters, ..FitOptions::default() };
            let result = fit_brdf(&problem, &opts)?;
            if let Some(w) = &result.warning {
                eprintln!("warning: {w}");
            }
            println!("{}", serde_json::to_string(&result.params)?);
            write_json(&out()?, &result)?;
        }
        Command::Capture(CaptureCommand::Texture { inputs }) => {
            let (views, camera, scene, render) = capture_inputs(inputs, seed)?;
            let grid = backproject_textures(&views, &camera, &scene, render.gain)?;
            grid.save(&out()?)?;
            println!("{} of {} texels recovered", grid.valid_count(), grid.albedo.len());
        }
        Command::Bench(BenchCommand::Epe { pred, manifest, root }) => {
            let m = DatasetManifest::load(manifest)?;
            let root = root.clone().unwrap_or_else(|| parent(manifest));
            let report = evaluate_predictions(&m, &root, pred)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(o) = &cli.out {
                write_json(o, &report)?;
            }
        }
        Command::Dataset(DatasetCommand::Validate { manifest, root, metadata_only, samples }) => {
            let m = DatasetManifest::load(manifest)?;
            let root = root.clone().unwrap_or_else(|| parent(manifest));
            let mode = if *metadata_only { ValidationMode::MetadataOnly } else { ValidationMode::Full };
            let opts = ValidationOptions { mode, flow_samples: *samples, ..ValidationOptions::default() };
            let report = validate_dataset(&m, &root, &opts);
            print_report(&report);
            if let Some(o) = &cli.out {
                write_json(o, &report)?;
            }
            if !report.passed {
                return Ok(Status::ValidationFailed);
            }
        }
        Command::Dataset(DatasetCommand::Catalog { id }) => {
            let entries: Vec<_> = match id {
                Some(id) => vec![catalog_entry(id).ok_or_else(|| anyhow!("unknown dataset id {id}"))?],
                None => catalog().iter().collect(),
            };
            let mut ok = true;
            for e in entries {
                let m = catalog_manifest(e)?;
                let r = validate_dataset(&m, Path::new("."), &ValidationOptions::metadata_only());
                ok &= r.passed;
                let counts: Vec<String> = e.sequence_counts.iter().map(u64::to_string).collect();
                println!(
                    "{:<12} {:<8} {:<12} {:<36} {:>6} ({}) {}",
                    e.dataset_id,
                    format!("{:?}", e.scenario),
                    format!("{:?}", e.kind),
                    e.description,
                    m.frame_count,
                    counts.join("+"),
                    if r.passed { "PASS" } else { "FAIL" }
                );
                if let Some(dir) = &cli.out {
                    fs::create_dir_all(dir)?;
                    m.save(&dir.join(format!("{}.json", e.dataset_id)))?;
                }
            }
            if !ok {
                return Ok(Status::ValidationFailed);
            }
        }
        Command::Run(a) => {
            let mut cfg = match &a.config {
                Some(p) => {
                    let mut c = RunConfig::load(p)?;
                    c.resolve_paths(&parent(p));
                    c
                }
                None => RunConfig::demo(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if a.print_config {
                let text = serde_json::to_string_pretty(&cfg)? + "\n";
                match &cli.out {
                    Some(o) => fs::write(o, text)?,
                    None => print!("{text}"),
                }
                return Ok(Status::Ok);
            }
            let out = out()?;
            match run_pipeline(&cfg, &out) {
                Ok(o) => {
                    print_report(&o.validation);
                    for s in &o.log.stages {
                        println!("{:<10} {:>8.3} s", s.stage, s.seconds);
                    }
                    println!("{} frames written to {}", o.manifest.frame_count, out.display());
                }
                Err(PipelineError::Validation(report)) => {
                    print_report(&report);
                    return Ok(Status::ValidationFailed);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(Status::Ok)
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

fn parent(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn read_dem(path: &Path) -> Result<DemGrid> {
    load_dem(path, &sidecar_path(path)).with_context(|| format!("cannot load DEM {}", path.display()))
}

fn write_dem(dem: &DemGrid, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(dem.write(path, &sidecar_path(path))?)
}

fn numbers(text: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("{what}: cannot parse {text:?}"))?;
    if v.len() != n {
        bail!("{what}: expected {n} comma-separated numbers, got {}", v.len());
    }
    Ok(v)
}

fn size_distribution(text: &str, what: &str) -> Result<SizeDistribution> {
    let v = numbers(text, 4, what)?;
    Ok(SizeDistribution { density: v[0], r_min: v[1], r_max: v[2], power_exponent: v[3] })
}

fn augment(a: &crate::AugmentArgs, seed: u64, out: &Path) -> Result<()> {
    let dem = read_dem(&a.dem)?;
    let seeds = stage_seeds(seed);
    let region = dem.extent();
    let craters = match &a.craters {
        Some(t) => generate_craters(&region, &size_distribution(t, "--craters")?, seeds["augment.craters"])?,
        None => CraterField::default(),
    };
    let mut terrain = apply_craters(&dem, &craters)?;
    let mut perlin = None;
    if let Some(t) = &a.perlin {
        let v = numbers(t, 3, "--perlin")?;
        if v[2].fract() != 0.0 || v[2] < 0.0 {
            bail!("--perlin: octaves must be a non-negative integer");
        }
        let spec = NoiseSpec::new(v[0], v[1], v[2] as u32, seeds["augment.perlin"]);
        terrain = add_perlin(&terrain, &spec)?;
        perlin = Some(spec);
    }
    let boulders = match &a.boulders {
        Some(t) => generate_boulders(&region, &size_distribution(t, "--boulders")?, seeds["augment.boulders"])?,
        None => BoulderField::default(),
    };
    write_dem(&terrain, out)?;
    let base = stem(out);
    write_json(&out.with_file_name(format!("{base}_craters.json")), &craters)?;
    write_json(&out.with_file_name(format!("{base}_boulders.json")), &boulders)?;
    let record = serde_json::json!({
        "seed": seed,
        "seeds": seeds,
        "craters": a.craters,
        "boulders": a.boulders,
        "perlin": perlin,
    });
    write_json(&out.with_file_name(format!("{base}_augment.json")), &record)?;
    println!("{} craters, {} boulders", craters.craters.len(), boulders.boulders.len());
    Ok(())
}

/// Parses `t0:t1:dt` into the inclusive schedule `t0, t0 + dt, ... ≤ t1`.
fn frame_times(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("--frames: cannot parse {spec:?}"))?;
    let [t0, t1, dt] = parts[..] else { bail!("--frames: expected t0:t1:dt") };
    if !(dt > 0.0) || !(t1 >= t0) || !t0.is_finite() || !t1.is_finite() {
        bail!("--frames: need dt > 0 and t1 >= t0");
    }
    let n = ((t1 - t0) / dt + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| t0 + i as f64 * dt).collect())
}

fn render(a: &crate::RenderArgs, seed: u64, out: &Path) -> Result<()> {
    let scene = SceneFile::load(&a.scene)?.build()?;
    let traj = Trajectory::load(&a.traj)?;
    let camera: CameraModel = read_json(&a.camera)?;
    let cfg = RenderConfig {
        supersampling: a.ss,
        shadows: a.shadows,
        gain: a.gain,
        bit_depth: a.bit_depth,
        seed: stage_seeds(seed)["render"],
        jitter: true,
        read_noise_dn: a.read_noise,
    };
    let times = frame_times(&a.frames)?;
    let log = render_trajectory(&scene, &camera, &traj, &times, &cfg, out)?;
    write_json(&out.join(RENDER_CONFIG), &cfg)?;
    println!("{} frames rendered to {}", log.frames.len(), out.display());
    Ok(())
}

fn flow(a: &crate::FlowArgs, out: &Path) -> Result<()> {
    let log = RenderLog::load(&a.frames)?;
    if !log.complete {
        bail!("{} holds an incomplete render", a.frames.display());
    }
    let camera: CameraModel = read_json(&a.camera)?;
    let tol = OcclusionTolerance { abs_m: a.abs_tol, rel: a.rel_tol };
    fs::create_dir_all(out)?;
    for pair in log.frames.windows(2) {
        let (r0, r1) = (&pair[0], &pair[1]);
        let d0 = DepthMap::load(&a.frames.join(&r0.depth))?;
        let d1 = DepthMap::load(&a.frames.join(&r1.depth))?;
        let f = compute_flow(&d0, &r0.pose, &r1.pose, &camera, &d1, &tol)?;
        write_flow(&out.join(flow_name(r0.frame_id)), &f)?;
        println!("{} -> {}: {} valid pixels", r0.frame_id, r1.frame_id, f.valid_count());
    }
    Ok(())
}

fn render_config_path(refs: &Path) -> Option<PathBuf> {
    let p = refs.join(RENDER_CONFIG);
    p.is_file().then_some(p)
}

type CaptureParts = (Vec<CaptureView>, CameraModel, lunagen::render::Scene, RenderConfig);

fn capture_inputs(inputs: &CaptureInputs, seed: u64) -> Result<CaptureParts> {
    let log = RenderLog::load(&inputs.refs)?;
    let views = log
        .frames
        .iter()
        .map(|r| Ok(CaptureView { image: read_gray(&inputs.refs.join(&r.image))?, pose: r.pose }))
        .collect::<Result<Vec<_>>>()?;
    let camera: CameraModel = read_json(&inputs.camera)?;
    let scene = SceneFile::load(&inputs.scene)?.build()?;
    let mut render = match render_config_path(&inputs.refs) {
        Some(p) => read_json(&p)?,
        None => RenderConfig { seed: stage_seeds(seed)["render"], ..RenderConfig::default() },
    };
    if let Some(g) = inputs.gain {
        render.gain = g;
    }
    if let Some(v) = views.first() {
        render.bit_depth = v.image.bit_depth;
    }
    Ok((views, camera, scene, render))
}

fn print_report(r: &ValidationReport) {
    for c in &r.checks {
        println!("{} {:<18} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("{}: {}", r.dataset_id, if r.passed { "valid" } else { "INVALID" });
}
