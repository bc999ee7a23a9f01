use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{sample_chunk, Constraint, Denoiser, LatentCube, NoiseSchedule, OverlapMask, SamplerConfig, SamplerError};
use crate::conditions::{ChunkFrame, ConditionVolume};
use crate::rng;
use crate::sparse_grid::{GridError, SparseVoxelGrid};

/// Chunk position on the ground-plane chunk lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChunkIndex {
    pub x: i32,
    pub y: i32,
}

impl ChunkIndex {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    /// 4-neighbours in a fixed order: +x, −x, +y, −y.
    pub fn neighbors(&self) -> [ChunkIndex; 4] {
        [
            Self::new(self.x + 1, self.y),
            Self::new(self.x - 1, self.y),
            Self::new(self.x, self.y + 1),
            Self::new(self.x, self.y - 1),
        ]
    }
}

/// Placed latent chunks. Chunk `(cx, cy)` has its min corner at
/// `base.origin + (cx, cy, 0) · stride_cells · latent_voxel_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkLayout {
    pub base: ChunkFrame,
    pub channels: usize,
    pub stride_cells: usize,
    pub chunks: BTreeMap<ChunkIndex, LatentCube>,
    pub order: Vec<ChunkIndex>,
}

impl ChunkLayout {
    pub fn new(base: ChunkFrame, channels: usize, stride_m: f64) -> Result<Self, SamplerError> {
        let s = base.latent_voxel_size;
        let cells = (stride_m / s).round();
        if !(stride_m > 0.0 && stride_m <= base.extent() + 1e-9) || (cells * s - stride_m).abs() > 1e-6 || cells < 1.0 {
            return Err(SamplerError::InvalidRequest(format!(
                "stride {stride_m} m must be a positive multiple of {s} m no larger than the chunk extent"
            )));
        }
        Ok(Self {
            base,
            channels,
            stride_cells: cells as usize,
            chunks: BTreeMap::new(),
            order: Vec::new(),
        })
    }

    pub fn stride_m(&self) -> f64 {
        self.stride_cells as f64 * self.base.latent_voxel_size
    }

    pub fn frame_of(&self, idx: ChunkIndex) -> ChunkFrame {
        let step = self.stride_m();
        let mut f = self.base;
        f.origin.x += idx.x as f64 * step;
        f.origin.y += idx.y as f64 * step;
        f
    }

    /// Global ground-lattice offset of a chunk's local cell (0, 0).
    fn cell_offset(&self, idx: ChunkIndex) -> (i64, i64) {
        let s = self.stride_cells as i64;
        (idx.x as i64 * s, idx.y as i64 * s)
    }

    /// Overlap mask and existing values for a new chunk, gathered from
    /// already-placed chunks in placement order.
    pub fn overlap_for(&self, idx: ChunkIndex) -> Option<(OverlapMask, LatentCube)> {
        let n = self.base.n;
        let mut mask = OverlapMask::zeros(n);
        let mut existing = LatentCube::zeros(self.frame_of(idx), self.channels);
        let (gx, gy) = self.cell_offset(idx);
        for placed in &self.order {
            let (px, py) = self.cell_offset(*placed);
            let cube = &self.chunks[placed];
            let (dx, dy) = (gx - px, gy - py);
            if dx.abs() >= n as i64 || dy.abs() >= n as i64 {
                continue;
            }
            for i in 0..n as i64 {
                let pi = i + dx;
                if !(0..n as i64).contains(&pi) {
                    continue;
                }
                for j in 0..n as i64 {
                    let pj = j + dy;
                    if !(0..n as i64).contains(&pj) {
                        continue;
                    }
                    for k in 0..n {
                        let cell = (i as usize * n + j as usize) * n + k;
                        if mask.values[cell] != 0 {
                            continue;
                        }
                        mask.values[cell] = 1;
                        existing
                            .cell_mut(i as usize, j as usize, k)
                            .copy_from_slice(cube.cell(pi as usize, pj as usize, k));
                    }
                }
            }
        }
        (mask.fixed_count() > 0).then_some((mask, existing))
    }

    pub fn insert(&mut self, idx: ChunkIndex, cube: LatentCube) {
        if self.chunks.insert(idx, cube).is_none() {
            self.order.push(idx);
        }
    }

    /// Decodes every chunk with `decode` and merges them (earlier chunks win).
    pub fn decode_world(
        &self,
        decode: impl Fn(&LatentCube) -> Result<SparseVoxelGrid, GridError>,
    ) -> Result<Option<SparseVoxelGrid>, GridError> {
        let mut world: Option<SparseVoxelGrid> = None;
        for idx in &self.order {
            let g = decode(&self.chunks[idx])?;
            world = Some(match world {
                None => g,
                Some(w) => w.union(&g)?,
            });
        }
        Ok(world)
    }

    /// Bytes of every latent in placement order (for determinism checks).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for idx in &self.order {
            out.extend_from_slice(&idx.x.to_le_bytes());
            out.extend_from_slice(&idx.y.to_le_bytes());
            for v in &self.chunks[idx].data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

pub struct OutpaintRequest<'a> {
    /// Requested chunks; the first is the origin when the layout is empty.
    pub chunks: &'a [ChunkIndex],
    pub seed: u64,
    pub sampler: SamplerConfig,
}

/// Breadth-first generation order over the request, seeded from the layout's
/// placed chunks (or the first requested chunk).
fn bfs_order(layout: &ChunkLayout, request: &[ChunkIndex]) -> Result<Vec<ChunkIndex>, SamplerError> {
    let wanted: BTreeSet<ChunkIndex> = request
        .iter()
        .copied()
        .filter(|c| !layout.chunks.contains_key(c))
        .collect();
    let mut seeds: Vec<ChunkIndex> = layout.order.clone();
    let mut order = Vec::new();
    let mut seen: BTreeSet<ChunkIndex> = seeds.iter().copied().collect();
    if seeds.is_empty() {
        let Some(first) = request.first() else {
            return Ok(order);
        };
        seeds.push(*first);
        seen.insert(*first);
        order.push(*first);
    }
    let mut queue: VecDeque<ChunkIndex> = seeds.into_iter().collect();
    while let Some(c) = queue.pop_front() {
        for nb in c.neighbors() {
            if wanted.contains(&nb) && seen.insert(nb) {
                order.push(nb);
                queue.push_back(nb);
            }
        }
    }
    let missing: Vec<ChunkIndex> = wanted.iter().filter(|c| !seen.contains(c)).copied().collect();
    if !missing.is_empty() {
        return Err(SamplerError::Disconnected(missing));
    }
    Ok(order)
}

/// Grows `layout` over the requested chunks. Each new chunk is sampled with
/// the latent of its already-placed neighbours held fixed; every chunk draws
/// from an RNG stream keyed by `(seed, chunk index)`.
pub fn outpaint_scene(
    layout: &mut ChunkLayout,
    request: &OutpaintRequest<'_>,
    conditions: &dyn Fn(ChunkIndex, &ChunkFrame) -> Result<ConditionVolume, SamplerError>,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
) -> Result<Vec<ChunkIndex>, SamplerError> {
    let order = bfs_order(layout, request.chunks)?;
    for &idx in &order {
        let frame = layout.frame_of(idx);
        let cond = conditions(idx, &frame)?;
        if cond.frame() != &frame {
            return Err(SamplerError::ShapeMismatch(format!("conditions for {idx:?} built on another frame")));
        }
        let mut rng = rng::stream(request.seed, &[idx.x as i64, idx.y as i64]);
        let overlap = layout.overlap_for(idx);
        let constraint = overlap.as_ref().map(|(mask, existing)| Constraint { mask, existing });
        let cube = sample_chunk(&cond, denoiser, schedule, &request.sampler, layout.channels, constraint, &mut rng)?;
        layout.insert(idx, cube);
    }
    Ok(order)
}
