use std::collections::{HashMap, HashSet};

use crate::geom::Aabb;
use crate::sparse_grid::{SemanticVoxel, SparseVoxelGrid, VoxelCoord};
use crate::Vec3;

/// Cells per brick edge in the empty-space skipping level.
pub const BRICK: i64 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub coord: VoxelCoord,
    /// Ray parameter of the entry face along the unit direction (0 when the
    /// origin is inside the hit cell).
    pub distance: f64,
    pub voxel: SemanticVoxel,
}

/// Read-only raycast index over a sparse grid: hashed cells plus a brick
/// occupancy set for skipping empty space.
#[derive(Debug, Clone)]
pub struct RayGrid {
    origin: Vec3,
    size: f64,
    cells: HashMap<[i64; 3], SemanticVoxel>,
    bricks: HashSet<[i64; 3]>,
    bounds: Option<([i64; 3], [i64; 3])>,
}

fn brick_of(c: [i64; 3]) -> [i64; 3] {
    c.map(|v| v.div_euclid(BRICK))
}

/// Visits lattice cells pierced by `o + t·d` for `t ∈ [t0, t1]`, in order.
/// Cell `i` spans `[origin + (i·scale)·size, origin + ((i+1)·scale)·size)`
/// per axis; indices are clamped to `[lo, hi]`. `visit` gets the cell and its
/// parameter range and returns true to stop. Returns true if stopped.
#[allow(clippy::too_many_arguments)]
fn walk(
    origin: &Vec3,
    size: f64,
    scale: i64,
    lo: [i64; 3],
    hi: [i64; 3],
    o: &Vec3,
    d: &Vec3,
    t0: f64,
    t1: f64,
    mut visit: impl FnMut([i64; 3], f64, f64) -> bool,
) -> bool {
    let h = size * scale as f64;
    let p = o + d * t0;
    let mut idx = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let boundary = |a: usize, i: i64, s: i64| origin[a] + ((i + (s > 0) as i64) * scale) as f64 * size;
    for a in 0..3 {
        idx[a] = (((p[a] - origin[a]) / h).floor() as i64).clamp(lo[a], hi[a]);
        if d[a] != 0.0 {
            step[a] = if d[a] > 0.0 { 1 } else { -1 };
            t_max[a] = (boundary(a, idx[a], step[a]) - o[a]) / d[a];
        }
    }
    let mut t_enter = t0;
    loop {
        let axis = (0..3).min_by(|&a, &b| t_max[a].total_cmp(&t_max[b])).unwrap_or(0);
        let t_exit = t_max[axis].min(t1);
        if visit(idx, t_enter, t_exit) {
            return true;
        }
        if t_max[axis] >= t1 {
            return false;
        }
        idx[axis] += step[axis];
        if idx[axis] < lo[axis] || idx[axis] > hi[axis] {
            return false;
        }
        t_enter = t_enter.max(t_max[axis]);
        t_max[axis] = (boundary(axis, idx[axis], step[axis]) - o[axis]) / d[axis];
    }
}

impl RayGrid {
    pub fn new(grid: &SparseVoxelGrid) -> Self {
        let mut cells = HashMap::with_capacity(grid.len());
        let mut bricks = HashSet::new();
        let mut bounds: Option<([i64; 3], [i64; 3])> = None;
        for (c, v) in grid.iter() {
            let ci = [c.i as i64, c.j as i64, c.k as i64];
            cells.insert(ci, v);
            bricks.insert(brick_of(ci));
            bounds = Some(match bounds {
                None => (ci, ci),
                Some((lo, hi)) => (
                    [lo[0].min(ci[0]), lo[1].min(ci[1]), lo[2].min(ci[2])],
                    [hi[0].max(ci[0]), hi[1].max(ci[1]), hi[2].max(ci[2])],
                ),
            });
        }
        Self {
            origin: grid.origin(),
            size: grid.voxel_size(),
            cells,
            bricks,
            bounds,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    fn cell_aabb(&self, c: [i64; 3]) -> Aabb {
        let lo = Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) * self.size + self.origin;
        let hi = Vec3::new((c[0] + 1) as f64, (c[1] + 1) as f64, (c[2] + 1) as f64) * self.size + self.origin;
        Aabb::new(lo, hi)
    }

    /// Nearest occupied cell along `o + t·d`, `t ∈ [0, max_range]`. `d` must be unit length.
    pub fn cast(&self, o: &Vec3, d: &Vec3, max_range: f64) -> Option<RayHit> {
        let (lo, hi) = self.bounds?;
        if !(max_range > 0.0) {
            return None;
        }
        let world = Aabb::new(self.cell_aabb(lo).min, self.cell_aabb(hi).max);
        let (ta, tb) = world.ray_interval(o, d)?;
        let (ta, tb) = (ta.max(0.0), tb.min(max_range));
        if ta > tb {
            return None;
        }
        let (blo, bhi) = (brick_of(lo), brick_of(hi));
        let mut hit = None;
        walk(&self.origin, self.size, BRICK, blo, bhi, o, d, ta, tb, |b, be, bx| {
            if !self.bricks.contains(&b) {
                return false;
            }
            let clo = [0, 1, 2].map(|a| (b[a] * BRICK).max(lo[a]));
            let chi = [0, 1, 2].map(|a| (b[a] * BRICK + BRICK - 1).min(hi[a]));
            walk(&self.origin, self.size, 1, clo, chi, o, d, be, bx, |c, _, _| {
                let Some(voxel) = self.cells.get(&c) else {
                    return false;
                };
                let coord = VoxelCoord::new(c[0] as i32, c[1] as i32, c[2] as i32);
                match self.cell_aabb(c).ray_interval(o, d) {
                    Some((e, x)) if x >= 0.0 && e.max(0.0) <= max_range => {
                        hit = Some(RayHit {
                            coord,
                            distance: e.max(0.0),
                            voxel: *voxel,
                        });
                        true
                    }
                    _ => false,
                }
            })
        });
        hit
    }
}

/// One-off cast that indexes `grid` first; build a [`RayGrid`] for repeated casts.
pub fn raycast_dda(grid: &SparseVoxelGrid, origin: &Vec3, direction: &Vec3, max_range: f64) -> Option<RayHit> {
    let d = direction.try_normalize(0.0)?;
    RayGrid::new(grid).cast(origin, &d, max_range)
}
