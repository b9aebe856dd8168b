//! Hemispherical boulders and a uniform 2-D grid for ray queries.

use nalgebra::Vector3;

use crate::dem::DemGrid;
use crate::geom::Ray;
use crate::procedural::BoulderField;

/// Boulder whose flat base sits at the terrain height under its center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeatedBoulder {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl SeatedBoulder {
    /// Nearest `t ∈ [t_min, t_max]` on the upper hemisphere.
    #[inline]
    pub fn intersect(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<f64> {
        let oc = ray.origin - self.center;
        let b = oc.dot(&ray.direction);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        for t in [-b - sq, -b + sq] {
            if t >= t_min && t <= t_max && ray.origin.z + ray.direction.z * t >= self.center.z {
                return Some(t);
            }
        }
        None
    }

    pub fn normal_at(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.center).normalize()
    }
}

pub struct BoulderIndex {
    boulders: Vec<SeatedBoulder>,
    x0: f64,
    y0: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    /// CSR layout: boulders of cell `k` are `items[starts[k]..starts[k+1]]`.
    starts: Vec<u32>,
    items: Vec<u32>,
    z_low: f64,
    z_high: f64,
}

impl BoulderIndex {
    pub fn build(dem: &DemGrid, field: &BoulderField) -> Self {
        let boulders: Vec<SeatedBoulder> = field
            .boulders
            .iter()
            .map(|b| SeatedBoulder {
                center: Vector3::new(b.center[0], b.center[1], dem.sample_clamped(b.center[0], b.center[1])),
                radius: b.radius,
            })
            .collect();
        if boulders.is_empty() {
            return Self {
                boulders,
                x0: 0.0,
                y0: 0.0,
                cell: 1.0,
                nx: 0,
                ny: 0,
                starts: vec![0],
                items: vec![],
                z_low: 0.0,
                z_high: 0.0,
            };
        }
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        let (mut z_low, mut z_high) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut rsum = 0.0;
        for b in &boulders {
            x0 = x0.min(b.center.x - b.radius);
            x1 = x1.max(b.center.x + b.radius);
            y0 = y0.min(b.center.y - b.radius);
            y1 = y1.max(b.center.y + b.radius);
            z_low = z_low.min(b.center.z);
            z_high = z_high.max(b.center.z + b.radius);
            rsum += b.radius;
        }
        let span = (x1 - x0).max(y1 - y0);
        let cell = (4.0 * rsum / boulders.len() as f64).max(span / 1024.0).max(1e-6);
        let nx = ((x1 - x0) / cell).floor() as usize + 1;
        let ny = ((y1 - y0) / cell).floor() as usize + 1;
        let cell_of = |x: f64, y: f64| {
            (((x - x0) / cell).floor().clamp(0.0, (nx - 1) as f64) as usize, ((y - y0) / cell).floor().clamp(0.0, (ny - 1) as f64) as usize)
        };
        let mut counts = vec![0u32; nx * ny + 1];
        let ranges: Vec<_> = boulders
            .iter()
            .map(|b| {
                let (i0, j0) = cell_of(b.center.x - b.radius, b.center.y - b.radius);
                let (i1, j1) = cell_of(b.center.x + b.radius, b.center.y + b.radius);
                (i0, j0, i1, j1)
            })
            .collect();
        for &(i0, j0, i1, j1) in &ranges {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    counts[j * nx + i + 1] += 1;
                }
            }
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut items = vec![0u32; *starts.last().unwrap() as usize];
        for (idx, &(i0, j0, i1, j1)) in ranges.iter().enumerate() {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let k = j * nx + i;
                    items[fill[k] as usize] = idx as u32;
                    fill[k] += 1;
                }
            }
        }
        Self { boulders, x0, y0, cell, nx, ny, starts, items, z_low, z_high }
    }

    pub fn boulders(&self) -> &[SeatedBoulder] {
        &self.boulders
    }

    pub fn is_empty(&self) -> bool {
        self.boulders.is_empty()
    }

    /// Nearest boulder hit `(t, index)` in `[t_min, t_max]`.
    pub fn intersect(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<(f64, u32)> {
        if self.boulders.is_empty() {
            return None;
        }
        let (o, d) = (ray.origin, ray.direction);
        // restrict to the vertical band that can contain boulders
        let (mut t0, mut t1) = (t_min, t_max);
        if d.z != 0.0 {
            let a = (self.z_low - o.z) / d.z;
            let b = (self.z_high - o.z) / d.z;
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        } else if o.z < self.z_low || o.z > self.z_high {
            return None;
        }
        // and to the grid rectangle
        let (gx1, gy1) = (self.x0 + self.nx as f64 * self.cell, self.y0 + self.ny as f64 * self.cell);
        for (oo, dd, lo, hi) in [(o.x, d.x, self.x0, gx1), (o.y, d.y, self.y0, gy1)] {
            if dd == 0.0 {
                if oo < lo || oo > hi {
                    return None;
                }
            } else {
                let a = (lo - oo) / dd;
                let b = (hi - oo) / dd;
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        if !(t0 <= t1) {
            return None;
        }
        let start = ray.at(t0);
        let mut i = (((start.x - self.x0) / self.cell).floor().max(0.0) as usize).min(self.nx - 1) as i64;
        let mut j = (((start.y - self.y0) / self.cell).floor().max(0.0) as usize).min(self.ny - 1) as i64;
        let step_i: i64 = if d.x > 0.0 { 1 } else { -1 };
        let step_j: i64 = if d.y > 0.0 { 1 } else { -1 };
        let next_boundary = |k: i64, step: i64, rel_origin: f64, dir: f64| {
            if dir == 0.0 {
                f64::INFINITY
            } else {
                (self.cell * (k + (step > 0) as i64) as f64 - rel_origin) / dir
            }
        };
        let mut t_next_i = next_boundary(i, step_i, o.x - self.x0, d.x);
        let mut t_next_j = next_boundary(j, step_j, o.y - self.y0, d.y);
        let dt_i = if d.x == 0.0 { f64::INFINITY } else { self.cell / d.x.abs() };
        let dt_j = if d.y == 0.0 { f64::INFINITY } else { self.cell / d.y.abs() };

        let mut best: Option<(f64, u32)> = None;
        loop {
            let k = j as usize * self.nx + i as usize;
            for &idx in &self.items[self.starts[k] as usize..self.starts[k + 1] as usize] {
                let limit = best.map_or(t_max, |b| b.0);
                if let Some(t) = self.boulders[idx as usize].intersect(ray, t_min, limit) {
                    if best.is_none_or(|b| t < b.0) {
                        best = Some((t, idx));
                    }
                }
            }
            let t_exit = t_next_i.min(t_next_j);
            if best.is_some_and(|b| b.0 <= t_exit) || t_exit > t1 {
                break;
            }
            if t_next_i < t_next_j {
                i += step_i;
                t_next_i += dt_i;
            } else {
                j += step_j;
                t_next_j += dt_j;
            }
            if i < 0 || j < 0 || i >= self.nx as i64 || j >= self.ny as i64 {
                break;
            }
        }
        best
    }
}
