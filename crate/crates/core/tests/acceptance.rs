//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero when a criterion fails on hardware that can meet it.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::Rng;

use lunagen::bench::{
    catalog, catalog_manifest, epe, validate_dataset, DatasetKind, ValidationOptions,
};
use lunagen::capture::{fit_brdf, CaptureProblem, CaptureView, FitOptions, FreeParam};
use lunagen::dem::{fuse, DemGrid, FusionConfig};
use lunagen::geom::{CameraModel, Pose, PoseSample, Ray, Trajectory};
use lunagen::groundtruth::{
    bearing_jacobian, bearing_residual, compute_flow, invert_los, DepthMap, FlowField, LandmarkSet, LosObservation,
    OcclusionTolerance, SolverOptions,
};
use lunagen::hash;
use lunagen::imageio::GrayImage;
use lunagen::pipeline::{run_pipeline, RunConfig, RUN_LOG_FILE};
use lunagen::procedural::{
    add_perlin, apply_craters, generate_boulders, generate_craters, BoulderField, NoiseSpec, SizeDistribution,
};
use lunagen::render::heightfield::march_brute_force;
use lunagen::render::{hapke_brdf, render_frame, trace_ray, Frame, HapkeParams, RenderConfig, Scene};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

// ---------------------------------------------------------------- 1

fn hapke_oracle() -> Outcome {
    // independent scalar: H(1) = 3 / (1 + 2·0) = 3, bracket = 1 + 9 − 1 = 9, r = (1/4π)·9/2
    let expected = 9.0 / (8.0 * PI);
    let p = HapkeParams { w: 1.0, b: 0.0, b0: 0.0, h: 0.06 };
    let r = hapke_brdf(&p, 1.0, 1.0, 0.0).unwrap();
    let oracle_err = (r - expected).abs();

    let grid = |i: usize| (i as f64 + 1.0) / 20.0;
    let (mut negatives, mut worst_sym, mut points) = (0usize, 0.0f64, 0usize);
    for b in [-0.4, 0.0, 0.6] {
        for iw in 0..20 {
            let p = HapkeParams { w: grid(iw), b, b0: 1.0, h: 0.06 };
            for i0 in 0..20 {
                for i1 in 0..20 {
                    for ig in 0..20 {
                        let g = PI * ig as f64 / 19.0;
                        let a = hapke_brdf(&p, grid(i0), grid(i1), g).unwrap();
                        let s = hapke_brdf(&p, grid(i1), grid(i0), g).unwrap();
                        negatives += (a < 0.0) as usize;
                        worst_sym = worst_sym.max((a - s).abs() / a.abs().max(1e-300));
                        points += 1;
                    }
                }
            }
        }
    }
    let passed = oracle_err <= 1e-12 && negatives == 0 && worst_sym <= 1e-12;
    outcome(
        passed,
        format!("|r - 9/(8π)| = {oracle_err:.1e}; {points} grid points, {negatives} negative, max symmetry gap {worst_sym:.1e}"),
    )
}

// ---------------------------------------------------------------- 2

fn fused_augmented_dem() -> DemGrid {
    let low = DemGrid::from_fn(52, 52, 10.0, (0.0, 510.0), |x, y| 30.0 * (x / 90.0).sin() * (y / 120.0).cos() + 0.02 * x)
        .unwrap();
    let high = DemGrid::from_fn(101, 101, 2.0, (200.0, 310.0), |x, y| {
        30.0 * (x / 90.0).sin() * (y / 120.0).cos() + 0.02 * x + 1.5 * (x / 7.0).sin() * (y / 5.0).sin() + 0.8
    })
    .unwrap();
    let fused = fuse(&low, &high, &FusionConfig::for_cell_size(2.0)).unwrap();
    let dist = SizeDistribution { density: 200.0, r_min: 3.0, r_max: 40.0, power_exponent: 3.0 };
    let craters = generate_craters(&fused.extent(), &dist, 11).unwrap();
    let dem = apply_craters(&fused, &craters).unwrap();
    add_perlin(&dem, &NoiseSpec::new(1.0, 20.0, 3, 12)).unwrap()
}

fn ray_marcher_equivalence() -> Outcome {
    let dem = fused_augmented_dem();
    if (dem.ncols(), dem.nrows()) != (256, 256) {
        return outcome(false, format!("fused DEM is {}x{}, expected 256x256", dem.ncols(), dem.nrows()));
    }
    let cs = dem.cell_size();
    let (_, hmax) = dem.min_max();
    let ext = dem.extent();
    let scene = Scene::new(dem.clone(), BoulderField::default(), HapkeParams::default(), Vector3::z(), 1.0).unwrap();
    let mut rng = hash::rng(20_240_601, &[]);
    let rays: Vec<Ray> = (0..10_000)
        .map(|_| {
            let o = Vector3::new(
                rng.random_range(ext.x_min..ext.x_max),
                rng.random_range(ext.y_min..ext.y_max),
                hmax + rng.random_range(1.0..200.0),
            );
            let az = rng.random_range(0.0..2.0 * PI);
            let el = rng.random_range(5f64.to_radians()..PI / 2.0);
            Ray::new(o, Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), -el.sin()))
        })
        .collect();
    let (mut class_mismatch, mut worst, mut hits) = (0usize, 0.0f64, 0usize);
    for r in &rays {
        let fast = trace_ray(&scene, r).map(|h| h.t);
        let slow = march_brute_force(&dem, r, 4000.0, cs / 8.0);
        match (fast, slow) {
            (Some(a), Some(b)) => {
                hits += 1;
                worst = worst.max((a - b).abs());
            }
            (None, None) => {}
            _ => class_mismatch += 1,
        }
    }
    let passed = class_mismatch == 0 && worst <= cs / 4.0;
    outcome(
        passed,
        format!("10000 rays, {hits} hits, {class_mismatch} hit/miss mismatches, max |Δt| {worst:.2e} m (limit {:.2})", cs / 4.0),
    )
}

// ---------------------------------------------------------------- 3

fn sphere_depth(c: &CameraModel, rho: f64) -> DepthMap {
    let mut v = Vec::with_capacity(c.pixel_count());
    for y in 0..c.height {
        for x in 0..c.width {
            let b = Vector3::new((x as f64 - c.cx) / c.fx, (y as f64 - c.cy) / c.fy, 1.0);
            v.push(rho / b.norm());
        }
    }
    DepthMap::new(c.width, c.height, v).unwrap()
}

fn flow_analytic() -> Outcome {
    let c = CameraModel::new(320, 240, 300.0, 310.0, 159.5, 119.5).unwrap();
    let tol = OcclusionTolerance::default();

    let (z, delta) = (120.0, 4.0);
    let depth = DepthMap::new(c.width, c.height, vec![z; c.pixel_count()]).unwrap();
    let b = Pose::new(Vector3::new(delta, 0.0, 0.0), UnitQuaternion::identity()).unwrap();
    let f = compute_flow(&depth, &Pose::identity(), &b, &c, &depth, &tol).unwrap();
    let expect = -c.fx * delta / z;
    let mut trans_err = 0.0f64;
    for i in (0..f.len()).filter(|&i| f.valid[i]) {
        trans_err = trans_err.max((f.u[i] as f64 - expect).abs()).max((f.v[i] as f64).abs());
    }
    let trans_valid = f.valid_count();

    let a = Pose::new(Vector3::new(5.0, -3.0, 2.0), UnitQuaternion::from_euler_angles(0.1, 0.04, -0.2)).unwrap();
    let b = Pose::new(a.position, a.attitude * UnitQuaternion::from_euler_angles(0.02, -0.03, 0.05)).unwrap();
    let d = sphere_depth(&c, 250.0);
    let f = compute_flow(&d, &a, &b, &c, &d, &tol).unwrap();
    let k = Matrix3::new(c.fx, 0.0, c.cx, 0.0, c.fy, c.cy, 0.0, 0.0, 1.0);
    let h = k * (b.attitude.inverse() * a.attitude).to_rotation_matrix().matrix() * k.try_inverse().unwrap();
    let mut rot_err = 0.0f64;
    for y in 0..c.height as usize {
        for x in 0..c.width as usize {
            let i = y * c.width as usize + x;
            if f.valid[i] {
                let q = h * Vector3::new(x as f64, y as f64, 1.0);
                rot_err = rot_err
                    .max((f.u[i] as f64 - (q.x / q.z - x as f64)).abs())
                    .max((f.v[i] as f64 - (q.y / q.z - y as f64)).abs());
            }
        }
    }
    let rot_valid = f.valid_count();
    let passed = trans_err < 1e-3 && rot_err < 1e-3 && trans_valid > 0 && rot_valid > c.pixel_count() / 2;
    outcome(
        passed,
        format!(
            "translation max err {trans_err:.1e} px over {trans_valid} px; rotation max err {rot_err:.1e} px over {rot_valid} px"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn bilinear(img: &[u16], w: usize, h: usize, x: f64, y: f64) -> Option<f64> {
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let (x0, y0) = ((x.floor() as usize).min(w - 2), (y.floor() as usize).min(h - 2));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |c: usize, r: usize| img[r * w + c] as f64;
    Some(
        at(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + at(x0 + 1, y0) * fx * (1.0 - fy)
            + at(x0, y0 + 1) * (1.0 - fx) * fy
            + at(x0 + 1, y0 + 1) * fx * fy,
    )
}

fn flow_image_consistency() -> Outcome {
    let dem =
        DemGrid::from_fn(161, 161, 1.0, (-80.0, 80.0), |x, y| 3.0 * (x / 11.0).sin() * (y / 14.0).cos() + 0.05 * y).unwrap();
    let sun = Vector3::new(0.6, 0.2, 0.77).normalize();
    let scene = Scene::new(dem, BoulderField::default(), HapkeParams::default(), sun, 1361.0).unwrap();
    let cam = CameraModel::from_fov(160, 160, 45f64.to_radians()).unwrap();
    let a = Pose::look_at(Vector3::new(0.0, 0.0, 70.0), Vector3::new(2.0, 3.0, 0.0), Vector3::y()).unwrap();
    let b = Pose::look_at(Vector3::new(0.8, 0.5, 68.5), Vector3::new(2.5, 3.2, 0.0), Vector3::y()).unwrap();
    let cfg = RenderConfig { supersampling: 2, shadows: true, gain: 8.0, bit_depth: 8, ..RenderConfig::default() };
    let fa: Frame = render_frame(&scene, &cam, &a, &cfg, 0).unwrap();
    let fb: Frame = render_frame(&scene, &cam, &b, &cfg, 1).unwrap();
    let flow = compute_flow(
        &DepthMap::from_frame(&fa),
        &a,
        &b,
        &cam,
        &DepthMap::from_frame(&fb),
        &OcclusionTolerance::default(),
    )
    .unwrap();
    let (w, h) = (cam.width as usize, cam.height as usize);
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !flow.valid[i] {
                continue;
            }
            if let Some(vb) = bilinear(&fb.dn, w, h, x as f64 + flow.u[i] as f64, y as f64 + flow.v[i] as f64) {
                sum += (fa.dn[i] as f64 - vb).abs();
                n += 1;
            }
        }
    }
    let mean_dn = fa.dn.iter().map(|&d| d as f64).sum::<f64>() / fa.dn.len() as f64;
    let full = cfg.max_dn();
    let rel = sum / n.max(1) as f64 / full;
    let passed = n > w * h / 2 && rel < 0.02 && mean_dn > 0.1 * full && mean_dn < 0.9 * full;
    outcome(passed, format!("{n} valid px, mean |A - warp(B)| = {:.3}% of full scale (image mean {mean_dn:.0} DN)", 100.0 * rel))
}

// ---------------------------------------------------------------- 5

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn los_round_trip() -> Outcome {
    let mut rng = hash::rng(5150, &[]);
    let landmarks = LandmarkSet {
        points: BTreeMap::from([
            (1, Vector3::new(120.0, 80.0, 3.0)),
            (2, Vector3::new(-150.0, 60.0, -5.0)),
            (3, Vector3::new(40.0, -170.0, 8.0)),
            (4, Vector3::new(-90.0, -60.0, 0.0)),
        ]),
    };
    let (mut truth, mut initial, mut obs) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..50u64 {
        let eye = Vector3::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), 2000.0 - 35.0 * k as f64);
        let look = Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), 0.0);
        let pose = Pose::look_at(eye, look, Vector3::y()).unwrap();
        for (&id, x) in &landmarks.points {
            let d = pose.world_to_camera(x).normalize();
            obs.push(LosObservation::new(k, id, d).unwrap());
        }
        let dp = random_unit(&mut rng) * 10.0;
        let dq = UnitQuaternion::from_scaled_axis(random_unit(&mut rng) * 5f64.to_radians());
        let t = k as f64;
        initial.push(PoseSample { t, pose: Pose::new(pose.position + dp, pose.attitude * dq).unwrap() });
        truth.push(pose);
    }
    let init = Trajectory::new(initial).unwrap();
    let result = invert_los(&obs, &landmarks, &init, &SolverOptions::default()).unwrap();
    let (mut pos_err, mut att_err) = (0.0f64, 0.0f64);
    for (s, t) in result.trajectory.samples().iter().zip(&truth) {
        pos_err = pos_err.max((s.pose.position - t.position).norm());
        att_err = att_err.max((t.attitude.inverse() * s.pose.attitude).angle());
    }

    // analytic Jacobian against central differences
    let mut jac_err = 0.0f64;
    for t in truth.iter().take(10) {
        for x in landmarks.points.values() {
            let obs_dir = t.world_to_camera(x).normalize();
            let j = bearing_jacobian(t, x);
            let h = 1e-6;
            let mut fd = nalgebra::SMatrix::<f64, 3, 6>::zeros();
            for i in 0..6 {
                let shift = |s: f64| {
                    let mut e = Vector3::zeros();
                    e[i % 3] = s;
                    if i < 3 {
                        Pose::new(t.position + e, t.attitude).unwrap()
                    } else {
                        Pose::new(t.position, t.attitude * UnitQuaternion::from_scaled_axis(e)).unwrap()
                    }
                };
                let step = if i < 3 { h * t.position.norm().max(1.0) } else { h };
                let col = (bearing_residual(&shift(step), x, &obs_dir) - bearing_residual(&shift(-step), x, &obs_dir))
                    / (2.0 * step);
                fd.set_column(i, &col);
            }
            for i in 0..6 {
                let (a, b) = (j.column(i), fd.column(i));
                jac_err = jac_err.max((a - b).norm() / a.norm().max(1e-300));
            }
        }
    }
    let passed = pos_err < 1e-6 && att_err < 1e-8 && jac_err < 1e-5 && result.reports.len() == 50;
    outcome(
        passed,
        format!(
            "50 frames: max position error {pos_err:.1e} m, max attitude error {att_err:.1e} rad; Jacobian vs FD max rel {jac_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn capture_problem(truth: HapkeParams, start: HapkeParams, free: Vec<FreeParam>) -> CaptureProblem {
    let dem = DemGrid::from_fn(65, 65, 2.0, (-64.0, 64.0), |x, y| 5.0 * (x / 13.0).sin() * (y / 17.0).cos()).unwrap();
    let sun = Vector3::new(0.5, 0.2, 0.84).normalize();
    let scene = Scene::new(dem, BoulderField::default(), truth, sun, 1361.0).unwrap();
    let cfg = RenderConfig { supersampling: 1, jitter: false, bit_depth: 16, gain: 500.0, ..RenderConfig::default() };
    let cam = CameraModel::from_fov(48, 48, 1.0).unwrap();
    let poses = [
        Pose::look_at(Vector3::new(-30.0, 10.0, 90.0), Vector3::zeros(), Vector3::y()).unwrap(),
        Pose::look_at(Vector3::new(35.0, 5.0, 80.0), Vector3::zeros(), Vector3::y()).unwrap(),
    ];
    let references = poses
        .iter()
        .enumerate()
        .map(|(k, &pose)| {
            let f = render_frame(&scene, &cam, &pose, &cfg, k as u64).unwrap();
            CaptureView { image: GrayImage { width: 48, height: 48, bit_depth: 16, pixels: f.dn }, pose }
        })
        .collect();
    CaptureProblem { references, camera: cam, scene: scene.with_hapke(start).unwrap(), render: cfg, free }
}

fn capture_round_trip() -> Outcome {
    let monotone = |t: &[f64]| t.windows(2).all(|w| w[1] <= w[0]);
    let one = fit_brdf(
        &capture_problem(
            HapkeParams { w: 0.3, ..Default::default() },
            HapkeParams { w: 0.5, ..Default::default() },
            vec![FreeParam::W],
        ),
        &FitOptions::default(),
    )
    .unwrap();

    let truth = HapkeParams { w: 0.2, b: -0.3, ..Default::default() };
    let pr = capture_problem(truth, HapkeParams { w: 0.4, b: 0.0, ..Default::default() }, vec![FreeParam::W, FreeParam::B]);
    let cache = pr.prepare().unwrap();
    let mut best = (f64::INFINITY, 0, 0);
    for i in 0..21 {
        for j in 0..21 {
            let p = HapkeParams { w: 0.2 + (i as f64 - 10.0) * 0.01, b: -0.3 + (j as f64 - 10.0) * 0.02, ..truth };
            let l = cache.loss(&p, pr.render.gain);
            if l < best.0 {
                best = (l, i, j);
            }
        }
    }
    let two = fit_brdf(&pr, &FitOptions::default()).unwrap();
    let (e1, ew, eb) = ((one.params.w - 0.3).abs(), (two.params.w - 0.2).abs(), (two.params.b + 0.3).abs());
    let passed = e1 < 1e-3
        && ew < 5e-3
        && eb < 5e-3
        && monotone(&one.loss_trace)
        && monotone(&two.loss_trace)
        && (best.1, best.2) == (10, 10);
    outcome(
        passed,
        format!(
            "w fit err {e1:.1e} ({} it); (w,b) fit err ({ew:.1e}, {eb:.1e}) ({} it); sweep minimum at cell ({}, {}) of 21x21",
            one.iterations, two.iterations, best.1, best.2
        ),
    )
}

// ---------------------------------------------------------------- 7

fn epe_oracle() -> Outcome {
    let (w, h) = (64u32, 48u32);
    let mut gt = FlowField::zeros(w, h);
    for i in 0..gt.len() {
        gt.u[i] = (i % 17) as f32 * 0.5 - 4.0;
        gt.v[i] = (i % 11) as f32 * 0.25;
        gt.valid[i] = i % 5 != 0;
    }
    let mut pred = gt.clone();
    pred.u.iter_mut().for_each(|u| *u += 3.0);
    pred.v.iter_mut().for_each(|v| *v += 4.0);
    let r = epe(&pred, &gt).unwrap();

    // odd offsets, then a fixed pixel permutation applied to both fields
    let mut rng = hash::rng(77, &[]);
    let mut noisy = gt.clone();
    for i in 0..noisy.len() {
        noisy.u[i] += rng.random_range(-3.0f32..3.0);
        noisy.v[i] += rng.random_range(-3.0f32..3.0);
    }
    let mut perm: Vec<usize> = (0..gt.len()).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let permute = |f: &FlowField| {
        let mut o = FlowField::zeros(w, h);
        for (dst, &src) in perm.iter().enumerate() {
            o.u[dst] = f.u[src];
            o.v[dst] = f.v[src];
            o.valid[dst] = f.valid[src];
        }
        o
    };
    let r1 = epe(&noisy, &gt).unwrap();
    let r2 = epe(&permute(&noisy), &permute(&gt)).unwrap();
    let perm_ok = (r1.mean_epe - r2.mean_epe).abs() <= 1e-12 * r1.mean_epe
        && (r1.p50, r1.p90, r1.p99, r1.frac_over_1px, r1.frac_over_3px) == (r2.p50, r2.p90, r2.p99, r2.frac_over_1px, r2.frac_over_3px);
    let passed = r.mean_epe == 5.0 && r.frac_over_3px == 1.0 && perm_ok;
    outcome(passed, format!("offset (3,4): mean EPE {} over {} px; permutation invariant: {perm_ok}", r.mean_epe, r.valid_pixels))
}

// ---------------------------------------------------------------- 8

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != RUN_LOG_FILE {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = RunConfig::demo();
    let ra = run_pipeline(&cfg, a.path()).unwrap();
    let rb = run_pipeline(&cfg, b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let differing: Vec<&String> = ta.keys().filter(|k| tb.get(*k) != ta.get(*k)).collect();
    let bytes: usize = ta.values().map(Vec::len).sum();
    let passed = ta.len() == tb.len() && differing.is_empty() && ra.validation.passed && rb.validation.passed;
    outcome(passed, format!("{} files, {bytes} bytes compared, {} differ", ta.len(), differing.len()))
}

// ---------------------------------------------------------------- 9

fn manifest_fidelity() -> Outcome {
    let mut problems = Vec::new();
    let mut rows = 0;
    for e in catalog() {
        let m = catalog_manifest(e).unwrap();
        let r = validate_dataset(&m, Path::new("."), &ValidationOptions::metadata_only());
        if !r.passed || m.frame_count != e.total_frames() {
            problems.push(e.dataset_id);
        }
        rows += 1;
    }
    let s2 = catalog_manifest(lunagen::bench::catalog_entry("NAT-DATA-S2").unwrap()).unwrap();
    let s5 = catalog_manifest(lunagen::bench::catalog_entry("NAT-DATA-S5").unwrap()).unwrap();
    let split: Vec<u64> = s5.sequences.iter().map(|s| s.frame_count).collect();
    let passed = problems.is_empty()
        && rows == 14
        && s2.frame_count == 3655
        && s2.kind == DatasetKind::Synthetic
        && s5.frame_count == 15988
        && split == [6661, 5591, 3736];
    outcome(
        passed,
        format!("{rows} rows validated; NAT-DATA-S2 {} frames; NAT-DATA-S5 {:?} = {}; failures {problems:?}", s2.frame_count, split, s5.frame_count),
    )
}

// ---------------------------------------------------------------- 10

fn performance() -> Outcome {
    let n = 1024;
    let dem = DemGrid::constant(n, n, 5.0, (0.0, 5.0 * (n - 1) as f64), 0.0).unwrap();
    let dem = add_perlin(&dem, &NoiseSpec::new(40.0, 800.0, 6, 3)).unwrap();
    let ext = dem.extent();
    let craters =
        generate_craters(&ext, &SizeDistribution { density: 20.0, r_min: 10.0, r_max: 300.0, power_exponent: 3.0 }, 1).unwrap();
    let dem = apply_craters(&dem, &craters).unwrap();
    let boulders =
        generate_boulders(&ext, &SizeDistribution { density: 2000.0, r_min: 1.0, r_max: 5.0, power_exponent: 3.0 }, 2).unwrap();
    let scene = Scene::new(dem, boulders, HapkeParams::default(), Vector3::new(1.0, 0.3, 0.6).normalize(), 1361.0).unwrap();
    let cam = CameraModel::from_fov(512, 512, 60f64.to_radians()).unwrap();
    let c = 2560.0;
    let pose = Pose::look_at(Vector3::new(c - 800.0, c, 1500.0), Vector3::new(c, c, 0.0), Vector3::y()).unwrap();
    // 2 × 2 subsamples: four samples per pixel
    let cfg = RenderConfig { supersampling: 2, shadows: true, gain: 100.0, ..RenderConfig::default() };
    let time = |threads: usize| -> (Duration, Vec<u16>) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let t = Instant::now();
        let f = pool.install(|| render_frame(&scene, &cam, &pose, &cfg, 0).unwrap());
        (t.elapsed(), f.dn)
    };
    let (t1, img1) = time(1);
    let (t4, img4) = time(4);
    let speedup = t1.as_secs_f64() / t4.as_secs_f64();
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let passed = t4.as_secs_f64() < 5.0 && speedup >= 3.0 && img1 == img4;
    outcome(
        passed,
        format!(
            "4 threads {:.2} s (limit 5), 1 thread {:.2} s, speedup {speedup:.2}x (need 3x); images identical: {}; host cores: {cores}",
            t4.as_secs_f64(),
            t1.as_secs_f64(),
            img1 == img4
        ),
    )
}

// ----------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "Hapke oracle", limit: Some(Duration::from_secs(1)), run: hapke_oracle },
        Criterion { id: 2, name: "Ray-marcher equivalence", limit: Some(Duration::from_secs(30)), run: ray_marcher_equivalence },
        Criterion { id: 3, name: "Flow analytic cases", limit: Some(Duration::from_secs(10)), run: flow_analytic },
        Criterion { id: 4, name: "Flow/image consistency", limit: Some(Duration::from_secs(30)), run: flow_image_consistency },
        Criterion { id: 5, name: "LOS inversion round trip", limit: None, run: los_round_trip },
        Criterion { id: 6, name: "Model capture round trip", limit: Some(Duration::from_secs(300)), run: capture_round_trip },
        Criterion { id: 7, name: "EPE oracle", limit: Some(Duration::from_secs(1)), run: epe_oracle },
        Criterion { id: 8, name: "Determinism", limit: None, run: determinism },
        Criterion { id: 9, name: "Manifest fidelity", limit: None, run: manifest_fidelity },
        Criterion { id: 10, name: "Performance", limit: None, run: performance },
    ];
    let filter: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut blocking = 0;
    for c in criteria.iter().filter(|c| filter.is_none_or(|f| f == c.id)) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run))
            .unwrap_or_else(|e| outcome(false, format!("panicked: {}", panic_message(&e))));
        let elapsed = start.elapsed();
        let in_time = c.limit.is_none_or(|l| elapsed < l);
        let passed = result.passed && in_time;
        let timing = match c.limit {
            Some(l) => format!("{:.2} s, limit {} s", elapsed.as_secs_f64(), l.as_secs()),
            None => format!("{:.2} s", elapsed.as_secs_f64()),
        };
        println!("{} criterion {:>2} {}: {} [{timing}]", if passed { "PASS" } else { "FAIL" }, c.id, c.name, result.detail);
        if !passed {
            // thread scaling cannot be demonstrated on fewer cores than threads requested
            if c.id == 10 && cores < 4 {
                println!("     criterion 10 needs 4 hardware threads; this host has {cores}, so the failure is reported but not fatal");
            } else {
                blocking += 1;
            }
        }
    }
    if blocking == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{blocking} criteria failed");
        ExitCode::FAILURE
    }
}

fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
}
