//! Hierarchical ray casting against a bilinear heightfield.
//!
//! Level 0 of the max-mipmap holds, for every quad between four neighbouring
//! nodes, the largest corner height; each coarser level keeps the maximum of
//! its 2×2 children. Traversal descends front-to-back and skips any node whose
//! maximum lies below the ray's lowest point across that node. Inside a quad
//! the bilinear surface along the ray is a quadratic in `t`, solved exactly.

use crate::dem::DemGrid;
use crate::geom::Ray;

struct Level {
    w: usize,
    h: usize,
    max: Vec<f64>,
}

pub struct MaxMipmap {
    levels: Vec<Level>,
}

impl MaxMipmap {
    pub fn build(dem: &DemGrid) -> Self {
        let (qw, qh) = (dem.ncols().saturating_sub(1), dem.nrows().saturating_sub(1));
        let mut base = Vec::with_capacity(qw * qh);
        for j in 0..qh {
            for i in 0..qw {
                let m = dem.at(i, j).max(dem.at(i + 1, j)).max(dem.at(i, j + 1)).max(dem.at(i + 1, j + 1));
                base.push(m);
            }
        }
        let mut levels = vec![Level { w: qw, h: qh, max: base }];
        while {
            let top = levels.last().unwrap();
            top.w > 1 || top.h > 1
        } {
            let prev = levels.last().unwrap();
            let (w, h) = (prev.w.div_ceil(2), prev.h.div_ceil(2));
            let mut max = vec![f64::NEG_INFINITY; w * h];
            for j in 0..prev.h {
                for i in 0..prev.w {
                    let v = prev.max[j * prev.w + i];
                    let m = &mut max[(j / 2) * w + i / 2];
                    *m = m.max(v);
                }
            }
            levels.push(Level { w, h, max });
        }
        Self { levels }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    fn is_empty(&self) -> bool {
        self.levels[0].w == 0 || self.levels[0].h == 0
    }

    pub fn max_height(&self) -> f64 {
        self.levels.last().map_or(f64::NEG_INFINITY, |l| l.max.first().copied().unwrap_or(f64::NEG_INFINITY))
    }
}

/// Ray expressed in continuous grid coordinates.
struct GridRay {
    c0: f64,
    r0: f64,
    z0: f64,
    dc: f64,
    dr: f64,
    dz: f64,
    inv_dc: f64,
    inv_dr: f64,
}

impl GridRay {
    /// `t` interval during which the ray is inside `[lo, hi]` along one axis.
    #[inline]
    fn slab(origin: f64, dir: f64, inv: f64, lo: f64, hi: f64) -> (f64, f64) {
        if dir == 0.0 {
            if origin >= lo && origin <= hi {
                (f64::NEG_INFINITY, f64::INFINITY)
            } else {
                (f64::INFINITY, f64::NEG_INFINITY)
            }
        } else {
            let a = (lo - origin) * inv;
            let b = (hi - origin) * inv;
            if a < b {
                (a, b)
            } else {
                (b, a)
            }
        }
    }

    #[inline]
    fn clip(&self, c_lo: f64, c_hi: f64, r_lo: f64, r_hi: f64, t0: f64, t1: f64) -> (f64, f64) {
        let (a0, a1) = Self::slab(self.c0, self.dc, self.inv_dc, c_lo, c_hi);
        let (b0, b1) = Self::slab(self.r0, self.dr, self.inv_dr, r_lo, r_hi);
        (t0.max(a0).max(b0), t1.min(a1).min(b1))
    }
}

#[derive(Clone, Copy)]
struct Node {
    level: u8,
    i: u32,
    j: u32,
    t0: f64,
    t1: f64,
}

/// Nearest intersection of `ray` with the heightfield surface for
/// `t ∈ [t_min, t_max]`, or `None`.
pub fn intersect(dem: &DemGrid, mip: &MaxMipmap, ray: &Ray, t_min: f64, t_max: f64) -> Option<f64> {
    if mip.is_empty() {
        return None;
    }
    let cs = dem.cell_size();
    let (c0, r0) = dem.to_grid(ray.origin.x, ray.origin.y);
    let dc = ray.direction.x / cs;
    let dr = -ray.direction.y / cs;
    let g = GridRay {
        c0,
        r0,
        z0: ray.origin.z,
        dc,
        dr,
        dz: ray.direction.z,
        inv_dc: 1.0 / dc,
        inv_dr: 1.0 / dr,
    };
    let (qw, qh) = (mip.levels[0].w, mip.levels[0].h);

    let top = mip.levels.len() - 1;
    let (t0, t1) = g.clip(0.0, qw as f64, 0.0, qh as f64, t_min, t_max);
    if !(t0 <= t1) {
        return None;
    }
    // at most three pending siblings per level plus the current node
    let mut stack = [Node { level: 0, i: 0, j: 0, t0: 0.0, t1: 0.0 }; 4 * 40];
    stack[0] = Node { level: top as u8, i: 0, j: 0, t0, t1 };
    let mut len = 1;

    while len > 0 {
        len -= 1;
        let n = stack[len];
        let level = &mip.levels[n.level as usize];
        let zmin = (g.z0 + g.dz * n.t0).min(g.z0 + g.dz * n.t1);
        if zmin > level.max[n.j as usize * level.w + n.i as usize] {
            continue;
        }
        if n.level == 0 {
            if let Some(t) = intersect_quad(dem, &g, n.i as usize, n.j as usize, n.t0, n.t1) {
                return Some(t);
            }
            continue;
        }
        let child = n.level as usize - 1;
        let cl = &mip.levels[child];
        let span = (1usize << child) as f64;
        let mut kids = [Node { level: 0, i: 0, j: 0, t0: 0.0, t1: 0.0 }; 4];
        let mut count = 0;
        for dj in 0..2u32 {
            let j = n.j * 2 + dj;
            if j as usize >= cl.h {
                continue;
            }
            for di in 0..2u32 {
                let i = n.i * 2 + di;
                if i as usize >= cl.w {
                    continue;
                }
                let c_lo = i as f64 * span;
                let r_lo = j as f64 * span;
                let (a, b) = g.clip(c_lo, (c_lo + span).min(qw as f64), r_lo, (r_lo + span).min(qh as f64), n.t0, n.t1);
                if a <= b {
                    kids[count] = Node { level: child as u8, i, j, t0: a, t1: b };
                    count += 1;
                }
            }
        }
        let kids = &mut kids[..count];
        // farthest first so the nearest child is popped next
        for a in 1..kids.len() {
            let mut b = a;
            while b > 0 && kids[b - 1].t0 < kids[b].t0 {
                kids.swap(b - 1, b);
                b -= 1;
            }
        }
        stack[len..len + count].copy_from_slice(kids);
        len += count;
    }
    None
}

/// First `t ∈ [ta, tb]` where the ray meets the bilinear patch of quad `(i, j)`.
#[inline]
fn intersect_quad(dem: &DemGrid, g: &GridRay, i: usize, j: usize, ta: f64, tb: f64) -> Option<f64> {
    let h00 = dem.at(i, j);
    let h10 = dem.at(i + 1, j);
    let h01 = dem.at(i, j + 1);
    let h11 = dem.at(i + 1, j + 1);
    let bu = h10 - h00;
    let bv = h01 - h00;
    let d = h00 - h10 - h01 + h11;
    let ua = g.c0 + g.dc * ta - i as f64;
    let va = g.r0 + g.dr * ta - j as f64;
    let za = g.z0 + g.dz * ta;
    // f(s) = z − h along the ray, s = t − ta
    let f0 = za - (h00 + bu * ua + bv * va + d * ua * va);
    if f0 <= 0.0 {
        return Some(ta);
    }
    let f1 = g.dz - (bu * g.dc + bv * g.dr + d * (ua * g.dr + va * g.dc));
    let f2 = -d * g.dc * g.dr;
    let sb = tb - ta;
    let mut best = f64::INFINITY;
    let mut consider = |s: f64| {
        if s >= 0.0 && s <= sb && s < best {
            best = s;
        }
    };
    if f2.abs() <= 1e-14 * (f1.abs() + f0.abs()).max(1e-300) {
        if f1 < 0.0 {
            consider(-f0 / f1);
        }
    } else {
        let disc = f1 * f1 - 4.0 * f2 * f0;
        if disc >= 0.0 {
            let q = -0.5 * (f1 + f1.signum() * disc.sqrt());
            if q != 0.0 {
                consider(q / f2);
                consider(f0 / q);
            }
        }
    }
    if best.is_finite() {
        return Some(ta + best);
    }
    // roots lost to rounding right at the exit boundary
    let zb = g.z0 + g.dz * tb;
    let ub = g.c0 + g.dc * tb - i as f64;
    let vb = g.r0 + g.dr * tb - j as f64;
    if zb - (h00 + bu * ub + bv * vb + d * ub * vb) <= 0.0 {
        return Some(tb);
    }
    None
}

/// Reference marcher: fixed steps of `step` along the ray, bisection on the
/// first sign change of `z − h`. Slow; used for validation.
pub fn march_brute_force(dem: &DemGrid, ray: &Ray, t_max: f64, step: f64) -> Option<f64> {
    let ext = dem.extent();
    let above = |t: f64| -> Option<bool> {
        let p = ray.at(t);
        if !ext.contains(p.x, p.y) {
            return None;
        }
        Some(p.z > dem.sample_clamped(p.x, p.y))
    };
    let mut prev: Option<(f64, bool)> = None;
    let mut t = 0.0;
    while t <= t_max {
        let cur = above(t);
        // a step that leaves the extent is shortened to the boundary so edge crossings are bracketed
        let (ts, cur) = match (prev, cur) {
            (Some((tp, true)), None) => {
                let (mut lo, mut hi) = (tp, t);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if above(mid).is_some() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                match above(lo) {
                    Some(false) => (lo, Some(false)),
                    _ => (t, cur),
                }
            }
            _ => (t, cur),
        };
        if let (Some((tp, true)), Some(false)) = (prev, cur) {
            let (mut lo, mut hi) = (tp, ts);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                match above(mid) {
                    Some(true) | None => lo = mid,
                    Some(false) => hi = mid,
                }
            }
            return Some(hi);
        }
        if prev.is_none() && cur == Some(false) && t == 0.0 {
            return Some(0.0);
        }
        prev = cur.map(|a| (t, a));
        t += step;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn ray(o: [f64; 3], d: [f64; 3]) -> Ray {
        Ray::new(Vector3::from(o), Vector3::from(d))
    }

    #[test]
    fn mipmap_levels_and_max() {
        let dem = DemGrid::from_fn(6, 5, 1.0, (0.0, 0.0), |x, y| x - y).unwrap();
        let mip = MaxMipmap::build(&dem);
        assert_eq!((mip.levels[0].w, mip.levels[0].h), (5, 4));
        assert_eq!(mip.levels.last().unwrap().max.len(), 1);
        assert_eq!(mip.max_height(), dem.min_max().1);
        assert_eq!(mip.depth(), 4);
    }

    #[test]
    fn vertical_ray_on_flat_ground() {
        let dem = DemGrid::constant(33, 33, 1.0, (-16.0, 16.0), 0.0).unwrap();
        let mip = MaxMipmap::build(&dem);
        let t = intersect(&dem, &mip, &ray([0.0, 0.0, 100.0], [0.0, 0.0, -1.0]), 0.0, f64::INFINITY).unwrap();
        assert!((t - 100.0).abs() < 1e-12);
        assert!(intersect(&dem, &mip, &ray([0.0, 0.0, 100.0], [0.0, 0.0, 1.0]), 0.0, f64::INFINITY).is_none());
    }

    #[test]
    fn inclined_plane_agrees_with_brute_force() {
        let dem = DemGrid::from_fn(41, 41, 1.0, (-20.0, 20.0), |x, _| x).unwrap();
        let mip = MaxMipmap::build(&dem);
        let r = ray([0.0, 0.0, 10.0], [0.0, 0.0, -1.0]);
        let t = intersect(&dem, &mip, &r, 0.0, f64::INFINITY).unwrap();
        assert!((t - 10.0).abs() < 1e-12);
        let tb = march_brute_force(&dem, &r, 100.0, 1.0 / 8.0).unwrap();
        assert!((t - tb).abs() < 1e-9);
        let oblique = ray([-15.0, 3.0, 30.0], [1.0, -0.2, -0.9]);
        let t = intersect(&dem, &mip, &oblique, 0.0, f64::INFINITY).unwrap();
        let p = oblique.at(t);
        assert!((p.z - p.x).abs() < 1e-9);
    }

    #[test]
    fn ray_leaving_the_grid_misses() {
        let dem = DemGrid::constant(9, 9, 1.0, (0.0, 0.0), 0.0).unwrap();
        let mip = MaxMipmap::build(&dem);
        assert!(intersect(&dem, &mip, &ray([-1.0, -1.0, 5.0], [-1.0, 0.0, -0.01]), 0.0, f64::INFINITY).is_none());
        let hit = intersect(&dem, &mip, &ray([-3.0, -4.0, 5.0], [1.0, 0.0, -1.0]), 0.0, f64::INFINITY).unwrap();
        assert!((hit - 5.0 * 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn grazing_ridge_is_found() {
        // a single tall spike must block a ray passing just below its top
        let dem = DemGrid::from_fn(65, 65, 1.0, (0.0, 0.0), |x, y| if x == 40.0 && y == -32.0 { 10.0 } else { 0.0 })
            .unwrap();
        let mip = MaxMipmap::build(&dem);
        let r = ray([0.0, -32.0, 9.5], [1.0, 0.0, 0.0]);
        let t = intersect(&dem, &mip, &r, 0.0, f64::INFINITY).unwrap();
        let tb = march_brute_force(&dem, &r, 80.0, 1.0 / 8.0).unwrap();
        assert!((t - tb).abs() < 1e-6, "{t} vs {tb}");
        assert!(intersect(&dem, &mip, &ray([0.0, -32.0, 10.5], [1.0, 0.0, 0.0]), 0.0, f64::INFINITY).is_none());
    }

    #[test]
    fn brute_force_brackets_crossing_at_the_edge() {
        // the ray dips under the flat ground 0.05 m before the east edge, well inside one coarse step
        let dem = DemGrid::constant(9, 9, 1.0, (0.0, 0.0), 0.0).unwrap();
        let r = ray([0.0, -4.0, 7.95], [1.0, 0.0, -1.0]);
        let tb = march_brute_force(&dem, &r, 50.0, 0.5).unwrap();
        assert!((tb - 7.95 * 2f64.sqrt()).abs() < 1e-9);
    }
}
