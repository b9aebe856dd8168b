use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BenchError, DatasetManifest};
use crate::groundtruth::{read_flo, FlowField};

/// End-point error statistics over the pixels valid in the ground truth.
/// Percentiles use the nearest-rank convention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpeReport {
    pub mean_epe: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    /// Fraction of pixels with EPE strictly above 1 px.
    pub frac_over_1px: f64,
    /// Fraction of pixels with EPE strictly above 3 px.
    pub frac_over_3px: f64,
    pub valid_pixels: u64,
}

fn check_dims(pred: &FlowField, gt: &FlowField) -> Result<(), BenchError> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(BenchError::DimensionMismatch(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    Ok(())
}

fn errors(pred: &FlowField, gt: &FlowField) -> Vec<f64> {
    (0..gt.len())
        .filter(|&i| gt.valid[i])
        .map(|i| {
            let du = pred.u[i] as f64 - gt.u[i] as f64;
            let dv = pred.v[i] as f64 - gt.v[i] as f64;
            (du * du + dv * dv).sqrt()
        })
        .collect()
}

fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn report(mut e: Vec<f64>) -> Result<EpeReport, BenchError> {
    if e.is_empty() {
        return Err(BenchError::NoValidPixels);
    }
    e.sort_by(f64::total_cmp);
    let n = e.len() as f64;
    Ok(EpeReport {
        mean_epe: e.iter().sum::<f64>() / n,
        p50: nearest_rank(&e, 50.0),
        p90: nearest_rank(&e, 90.0),
        p99: nearest_rank(&e, 99.0),
        frac_over_1px: e.iter().filter(|&&x| x > 1.0).count() as f64 / n,
        frac_over_3px: e.iter().filter(|&&x| x > 3.0).count() as f64 / n,
        valid_pixels: e.len() as u64,
    })
}

/// EPE of a dense prediction against ground truth; prediction validity is ignored.
pub fn epe(pred: &FlowField, gt: &FlowField) -> Result<EpeReport, BenchError> {
    check_dims(pred, gt)?;
    report(errors(pred, gt))
}

/// One report over all valid pixels of several `(pred, gt)` pairs.
pub fn epe_many(pairs: &[(FlowField, FlowField)]) -> Result<EpeReport, BenchError> {
    let mut all = Vec::new();
    for (p, g) in pairs {
        check_dims(p, g)?;
        all.extend(errors(p, g));
    }
    report(all)
}

/// Scores the `.flo` files in `pred_dir` against the ground-truth flows of a
/// manifest rooted at `root`. Predictions are matched by file name.
pub fn evaluate_predictions(manifest: &DatasetManifest, root: &Path, pred_dir: &Path) -> Result<EpeReport, BenchError> {
    let mut frames: Vec<_> = manifest.frames.iter().filter(|f| f.flow_to_next.is_some()).collect();
    frames.sort_by_key(|f| f.frame_id);
    let pairs: Vec<(FlowField, FlowField)> = frames
        .par_iter()
        .map(|f| {
            let rel = Path::new(f.flow_to_next.as_deref().unwrap_or_default());
            let name = rel.file_name().ok_or_else(|| BenchError::InvalidManifest(format!("frame {}: bad flow path", f.frame_id)))?;
            let pred_path = pred_dir.join(name);
            if !pred_path.exists() {
                return Err(BenchError::MissingFile { frame_id: f.frame_id, path: pred_path });
            }
            Ok((read_flo(&pred_path)?, read_flo(&root.join(rel))?))
        })
        .collect::<Result<_, _>>()?;
    epe_many(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(w: u32, h: u32, f: impl Fn(usize) -> (f32, f32, bool)) -> FlowField {
        let mut out = FlowField::zeros(w, h);
        for i in 0..out.len() {
            let (u, v, ok) = f(i);
            out.u[i] = u;
            out.v[i] = v;
            out.valid[i] = ok;
        }
        out
    }

    #[test]
    fn identity_and_constant_offset() {
        let gt = field(8, 6, |i| (i as f32 * 0.25 - 3.0, -(i as f32) * 0.5, i % 7 != 0));
        let r = epe(&gt, &gt).unwrap();
        assert_eq!((r.mean_epe, r.frac_over_1px, r.frac_over_3px, r.p99), (0.0, 0.0, 0.0, 0.0));
        let off = field(8, 6, |i| (gt.u[i] + 3.0, gt.v[i] + 4.0, false));
        let r = epe(&off, &gt).unwrap();
        assert_eq!(r.mean_epe, 5.0);
        assert_eq!(r.frac_over_3px, 1.0);
        assert_eq!(r.valid_pixels, gt.valid_count() as u64);
    }

    #[test]
    fn two_value_multiset() {
        let gt = field(10, 10, |_| (0.0, 0.0, true));
        let pred = field(10, 10, |i| (if i % 2 == 0 { 0.0 } else { 1.0 }, 0.0, true));
        let r = epe(&pred, &gt).unwrap();
        assert_eq!(r.mean_epe, 0.5);
        // nearest rank: the 50th of 100 sorted values is the last zero
        assert_eq!(r.p50, 0.0);
        assert_eq!(r.p90, 1.0);
        assert_eq!(r.frac_over_1px, 0.0);
    }

    #[test]
    fn errors_on_bad_input() {
        let a = field(2, 2, |_| (0.0, 0.0, true));
        let b = field(3, 2, |_| (0.0, 0.0, true));
        assert!(matches!(epe(&a, &b), Err(BenchError::DimensionMismatch(_))));
        let none = field(2, 2, |_| (0.0, 0.0, false));
        assert!(matches!(epe(&a, &none), Err(BenchError::NoValidPixels)));
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_monotone(
            vals in prop::collection::vec((-20.0f32..20.0, -20.0f32..20.0, -5.0f32..5.0, -5.0f32..5.0, any::<bool>()), 1..200),
            seed in any::<u64>(),
        ) {
            let n = vals.len() as u32;
            let gt = field(n, 1, |i| (vals[i].0, vals[i].1, vals[i].4 || i == 0));
            let pred = field(n, 1, |i| (vals[i].0 + vals[i].2, vals[i].1 + vals[i].3, true));
            let r = epe(&pred, &gt).unwrap();
            // a seeded shuffle applied to both fields
            let mut order: Vec<usize> = (0..vals.len()).collect();
            let mut s = seed | 1;
            for i in (1..order.len()).rev() {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                order.swap(i, (s % (i as u64 + 1)) as usize);
            }
            let gt2 = field(n, 1, |i| (gt.u[order[i]], gt.v[order[i]], gt.valid[order[i]]));
            let pred2 = field(n, 1, |i| (pred.u[order[i]], pred.v[order[i]], true));
            let r2 = epe(&pred2, &gt2).unwrap();
            prop_assert_eq!((r.p50, r.p90, r.p99, r.valid_pixels), (r2.p50, r2.p90, r2.p99, r2.valid_pixels));
            prop_assert!((r.mean_epe - r2.mean_epe).abs() <= 1e-12 * r.mean_epe.max(1.0));
            prop_assert!(r.p50 <= r.p90 && r.p90 <= r.p99);
            prop_assert!((0.0..=1.0).contains(&r.frac_over_1px) && r.frac_over_3px <= r.frac_over_1px);
        }
    }
}
