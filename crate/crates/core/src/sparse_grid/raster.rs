//! Rasterization of segments and oriented boxes onto a voxel lattice.

use std::collections::HashSet;

use super::{cell_min, VoxelCoord};
use crate::geom::{clip_polygon_to_rect, polygon_area, OrientedBox, Vec3};

/// Exact test: does the closed segment `[p0, p1]` meet the half-open cell box?
pub fn segment_hits_cell(origin: &Vec3, size: f64, p0: &Vec3, p1: &Vec3, c: VoxelCoord) -> bool {
    let lo = cell_min(origin, size, c);
    let hi = cell_min(origin, size, c.offset(1, 1, 1));
    // Parameter interval with per-end openness.
    let (mut t_lo, mut lo_open) = (0.0f64, false);
    let (mut t_hi, mut hi_open) = (1.0f64, false);
    for a in 0..3 {
        let d = p1[a] - p0[a];
        if d == 0.0 {
            if !(lo[a] <= p0[a] && p0[a] < hi[a]) {
                return false;
            }
            continue;
        }
        let ta = (lo[a] - p0[a]) / d;
        let tb = (hi[a] - p0[a]) / d;
        // Lower face is inclusive, upper face exclusive.
        let (enter, enter_open, exit, exit_open) = if d > 0.0 {
            (ta, false, tb, true)
        } else {
            (tb, true, ta, false)
        };
        if enter > t_lo || (enter == t_lo && enter_open) {
            t_lo = enter;
            lo_open = enter_open;
        }
        if exit < t_hi || (exit == t_hi && exit_open) {
            t_hi = exit;
            hi_open = exit_open;
        }
    }
    t_lo < t_hi || (t_lo == t_hi && !lo_open && !hi_open)
}

/// Cells met by the closed segment, sorted lexicographically.
///
/// A 3D DDA walk proposes cells; every proposal and its 26 neighbours are
/// confirmed with [`segment_hits_cell`], so ties at shared faces, edges and
/// corners resolve exactly as the half-open predicate says.
pub fn segment_cells(origin: &Vec3, size: f64, p0: &Vec3, p1: &Vec3) -> Vec<VoxelCoord> {
    let a = (p0 - origin) / size;
    let b = (p1 - origin) / size;
    let mut cell = [a.x.floor() as i64, a.y.floor() as i64, a.z.floor() as i64];
    let end = [b.x.floor() as i64, b.y.floor() as i64, b.z.floor() as i64];
    let d = b - a;

    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for ax in 0..3 {
        if d[ax] > 0.0 {
            step[ax] = 1;
            t_max[ax] = ((cell[ax] + 1) as f64 - a[ax]) / d[ax];
            t_delta[ax] = 1.0 / d[ax];
        } else if d[ax] < 0.0 {
            step[ax] = -1;
            t_max[ax] = (cell[ax] as f64 - a[ax]) / d[ax];
            t_delta[ax] = -1.0 / d[ax];
        }
    }

    let max_steps: i64 = (0..3).map(|ax| (end[ax] - cell[ax]).abs()).sum::<i64>() + 3;
    let mut visited = vec![cell];
    for _ in 0..max_steps {
        if cell == end {
            break;
        }
        let ax = (0..3)
            .min_by(|&x, &y| t_max[x].total_cmp(&t_max[y]))
            .unwrap_or(0);
        if t_max[ax] > 1.0 {
            break;
        }
        cell[ax] += step[ax];
        t_max[ax] += t_delta[ax];
        visited.push(cell);
    }

    let mut candidates = HashSet::with_capacity(visited.len() * 27);
    for c in &visited {
        for di in -1..=1 {
            for dj in -1..=1 {
                for dk in -1..=1 {
                    candidates.insert([c[0] + di, c[1] + dj, c[2] + dk]);
                }
            }
        }
    }
    let mut out: Vec<VoxelCoord> = candidates
        .into_iter()
        .map(|[i, j, k]| VoxelCoord::new(i as i32, j as i32, k as i32))
        .filter(|&c| segment_hits_cell(origin, size, p0, p1, c))
        .collect();
    if out.is_empty() {
        // Rounding can leave a degenerate segment between cells; fall back to the start cell.
        out.push(VoxelCoord::new(
            a.x.floor() as i32,
            a.y.floor() as i32,
            a.z.floor() as i32,
        ));
    }
    out.sort_unstable();
    out
}

/// Exact fraction of cell `c` covered by a yaw-only box.
///
/// The box is a vertical prism, so the overlap volume factors into the
/// footprint ∩ cell-square area times the z-interval overlap.
pub fn box_occupancy_fraction(origin: &Vec3, size: f64, obox: &OrientedBox, c: VoxelCoord) -> f64 {
    let lo = cell_min(origin, size, c);
    let hi = cell_min(origin, size, c.offset(1, 1, 1));
    let z0 = lo.z.max(obox.center.z - obox.half_extents.z);
    let z1 = hi.z.min(obox.center.z + obox.half_extents.z);
    if z1 <= z0 {
        return 0.0;
    }
    let clipped = clip_polygon_to_rect(&obox.footprint(), [lo.x, lo.y], [hi.x, hi.y]);
    let area = polygon_area(&clipped).abs();
    let cell_area = (hi.x - lo.x) * (hi.y - lo.y);
    ((area / cell_area) * ((z1 - z0) / (hi.z - lo.z))).clamp(0.0, 1.0)
}

/// All cells with a nonzero occupied fraction, sorted by coordinate.
pub fn box_cell_fractions(origin: &Vec3, size: f64, obox: &OrientedBox) -> Vec<(VoxelCoord, f64)> {
    let bb = obox.aabb();
    let lo: Vec<i32> = (0..3)
        .map(|a| ((bb.min[a] - origin[a]) / size).floor() as i32)
        .collect();
    let hi: Vec<i32> = (0..3)
        .map(|a| ((bb.max[a] - origin[a]) / size).floor() as i32)
        .collect();
    let mut out = Vec::new();
    for i in lo[0]..=hi[0] {
        for j in lo[1]..=hi[1] {
            for k in lo[2]..=hi[2] {
                let c = VoxelCoord::new(i, j, k);
                let f = box_occupancy_fraction(origin, size, obox, c);
                if f > 0.0 {
                    out.push((c, f));
                }
            }
        }
    }
    out
}
