//! Sparse semantic voxel world.
//!
//! Cells are addressed by signed lattice indices. Cell `(i, j, k)` spans the
//! half-open box `[origin + i·s, origin + (i+1)·s)` per axis. Storage is an
//! ordered map keyed by the packed 3×21-bit coordinate, so iteration is
//! always lexicographic in `(i, j, k)`.

mod blob;
mod label;
mod raster;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Aabb, Vec3};

pub use blob::{read_blob, write_blob, BLOB_MAGIC, BLOB_VERSION};
pub use label::SemanticLabel;
pub use raster::{box_cell_fractions, box_occupancy_fraction, segment_cells, segment_hits_cell};

const COORD_BITS: u32 = 21;
const COORD_BIAS: i64 = 1 << (COORD_BITS - 1);
pub const COORD_MIN: i32 = -(1 << (COORD_BITS - 1));
pub const COORD_MAX: i32 = (1 << (COORD_BITS - 1)) - 1;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("voxel size must be positive and finite, got {0}")]
    InvalidVoxelSize(f64),
    #[error("coordinate {0:?} is outside the addressable lattice")]
    CoordOutOfRange(VoxelCoord),
    #[error("label {label:?} with instance {instance:?} violates the vehicle/instance rule")]
    InstanceMismatch {
        label: SemanticLabel,
        instance: Option<u32>,
    },
    #[error("grids are incommensurate: {0}")]
    Incommensurate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed grid blob: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoxelCoord {
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

impl VoxelCoord {
    pub const fn new(i: i32, j: i32, k: i32) -> Self {
        Self { i, j, k }
    }

    pub fn in_range(&self) -> bool {
        [self.i, self.j, self.k]
            .iter()
            .all(|&v| (COORD_MIN..=COORD_MAX).contains(&v))
    }

    /// Packs into 63 bits, preserving lexicographic order.
    pub fn pack(&self) -> Option<u64> {
        if !self.in_range() {
            return None;
        }
        let f = |v: i32| (v as i64 + COORD_BIAS) as u64;
        Some((f(self.i) << (2 * COORD_BITS)) | (f(self.j) << COORD_BITS) | f(self.k))
    }

    pub fn unpack(key: u64) -> Self {
        let mask = (1u64 << COORD_BITS) - 1;
        let f = |v: u64| ((v & mask) as i64 - COORD_BIAS) as i32;
        Self::new(f(key >> (2 * COORD_BITS)), f(key >> COORD_BITS), f(key))
    }

    pub fn offset(&self, di: i32, dj: i32, dk: i32) -> Self {
        Self::new(self.i + di, self.j + dj, self.k + dk)
    }

    pub fn get(&self, axis: usize) -> i32 {
        match axis {
            0 => self.i,
            1 => self.j,
            _ => self.k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SemanticVoxel {
    label: SemanticLabel,
    instance_id: Option<u32>,
}

impl SemanticVoxel {
    /// Vehicle labels require an instance id; every other label forbids one.
    pub fn new(label: SemanticLabel, instance_id: Option<u32>) -> Result<Self, GridError> {
        if label.is_vehicle() != instance_id.is_some() {
            return Err(GridError::InstanceMismatch {
                label,
                instance: instance_id,
            });
        }
        Ok(Self { label, instance_id })
    }

    /// Convenience for non-vehicle labels. Panics on vehicle labels.
    pub fn stuff(label: SemanticLabel) -> Self {
        Self::new(label, None).expect("vehicle labels need an instance id")
    }

    pub fn label(&self) -> SemanticLabel {
        self.label
    }

    pub fn instance_id(&self) -> Option<u32> {
        self.instance_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelGrid {
    origin: Vec3,
    voxel_size: f64,
    cells: BTreeMap<u64, SemanticVoxel>,
}

impl SparseVoxelGrid {
    pub fn new(origin: Vec3, voxel_size: f64) -> Result<Self, GridError> {
        if !(voxel_size.is_finite() && voxel_size > 0.0) {
            return Err(GridError::InvalidVoxelSize(voxel_size));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(GridError::InvalidArgument("origin must be finite".into()));
        }
        Ok(Self {
            origin,
            voxel_size,
            cells: BTreeMap::new(),
        })
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn query(&self, coord: VoxelCoord) -> Option<SemanticVoxel> {
        coord.pack().and_then(|key| self.cells.get(&key).copied())
    }

    pub fn contains(&self, coord: VoxelCoord) -> bool {
        coord.pack().is_some_and(|key| self.cells.contains_key(&key))
    }

    /// Inserts or overwrites; returns the previous voxel.
    pub fn insert(&mut self, coord: VoxelCoord, voxel: SemanticVoxel) -> Result<Option<SemanticVoxel>, GridError> {
        let key = coord.pack().ok_or(GridError::CoordOutOfRange(coord))?;
        Ok(self.cells.insert(key, voxel))
    }

    pub fn remove(&mut self, coord: VoxelCoord) -> Option<SemanticVoxel> {
        coord.pack().and_then(|key| self.cells.remove(&key))
    }

    /// Sorted lexicographic iteration.
    pub fn iter(&self) -> impl Iterator<Item = (VoxelCoord, SemanticVoxel)> + '_ {
        self.cells.iter().map(|(&k, &v)| (VoxelCoord::unpack(k), v))
    }

    pub fn retain(&mut self, mut keep: impl FnMut(VoxelCoord, &SemanticVoxel) -> bool) {
        self.cells.retain(|&k, v| keep(VoxelCoord::unpack(k), v));
    }

    /// Cell containing a world point.
    pub fn coord_of(&self, p: &Vec3) -> VoxelCoord {
        let f = |a: usize| ((p[a] - self.origin[a]) / self.voxel_size).floor() as i32;
        VoxelCoord::new(f(0), f(1), f(2))
    }

    pub fn cell_min(&self, c: VoxelCoord) -> Vec3 {
        cell_min(&self.origin, self.voxel_size, c)
    }

    pub fn cell_center(&self, c: VoxelCoord) -> Vec3 {
        self.cell_min(c) + Vec3::repeat(0.5 * self.voxel_size)
    }

    pub fn cell_aabb(&self, c: VoxelCoord) -> Aabb {
        cell_aabb(&self.origin, self.voxel_size, c)
    }

    /// Inclusive lattice bounds of the occupied cells.
    pub fn bounds(&self) -> Option<(VoxelCoord, VoxelCoord)> {
        let mut it = self.iter();
        let (first, _) = it.next()?;
        let (mut lo, mut hi) = (first, first);
        for (c, _) in it {
            lo = VoxelCoord::new(lo.i.min(c.i), lo.j.min(c.j), lo.k.min(c.k));
            hi = VoxelCoord::new(hi.i.max(c.i), hi.j.max(c.j), hi.k.max(c.k));
        }
        Some((lo, hi))
    }

    /// World box enclosing all occupied cells.
    pub fn world_bounds(&self) -> Option<Aabb> {
        let (lo, hi) = self.bounds()?;
        Some(Aabb::new(self.cell_min(lo), self.cell_min(hi.offset(1, 1, 1))))
    }

    /// Marks every cell whose half-open box meets the closed segment `[p0, p1]`.
    pub fn voxelize_segment(&mut self, p0: &Vec3, p1: &Vec3, voxel: SemanticVoxel) -> Result<usize, GridError> {
        if !(p0.iter().chain(p1.iter()).all(|v| v.is_finite())) {
            return Err(GridError::InvalidArgument("segment endpoints must be finite".into()));
        }
        let cells = segment_cells(&self.origin, self.voxel_size, p0, p1);
        for &c in &cells {
            self.insert(c, voxel)?;
        }
        Ok(cells.len())
    }

    /// Marks cells whose occupied volume fraction is at least `min_fraction`.
    pub fn voxelize_box(
        &mut self,
        obox: &crate::geom::OrientedBox,
        voxel: SemanticVoxel,
        min_fraction: f64,
    ) -> Result<usize, GridError> {
        if !(min_fraction > 0.0 && min_fraction <= 1.0) {
            return Err(GridError::InvalidArgument(format!("min_fraction {min_fraction} not in (0, 1]")));
        }
        if obox.half_extents.iter().any(|&h| !(h > 0.0)) {
            return Err(GridError::InvalidArgument("box half extents must be positive".into()));
        }
        let mut n = 0;
        for (c, frac) in box_cell_fractions(&self.origin, self.voxel_size, obox) {
            if frac >= min_fraction {
                self.insert(c, voxel)?;
                n += 1;
            }
        }
        Ok(n)
    }

    /// Splits every voxel into its 8 children at half the voxel size.
    pub fn subdivide(&self) -> Result<Self, GridError> {
        let mut out = Self::new(self.origin, 0.5 * self.voxel_size)?;
        for (c, v) in self.iter() {
            for (a, b, d) in itertools_product() {
                out.insert(VoxelCoord::new(2 * c.i + a, 2 * c.j + b, 2 * c.k + d), v)?;
            }
        }
        Ok(out)
    }

    /// Keeps voxels whose centers lie in the half-open box.
    pub fn crop(&self, aabb: &Aabb) -> Self {
        let mut out = Self {
            origin: self.origin,
            voxel_size: self.voxel_size,
            cells: BTreeMap::new(),
        };
        for (&key, &v) in &self.cells {
            let c = VoxelCoord::unpack(key);
            if aabb.contains_half_open(&self.cell_center(c)) {
                out.cells.insert(key, v);
            }
        }
        out
    }

    /// Lattice offset that maps `other`'s coordinates into `self`'s lattice.
    pub fn lattice_offset(&self, other: &Self) -> Result<VoxelCoord, GridError> {
        if (self.voxel_size - other.voxel_size).abs() > 1e-12 * self.voxel_size {
            return Err(GridError::Incommensurate(format!(
                "voxel sizes {} vs {}",
                self.voxel_size, other.voxel_size
            )));
        }
        let mut off = [0i32; 3];
        for a in 0..3 {
            let d = (other.origin[a] - self.origin[a]) / self.voxel_size;
            let r = d.round();
            if (d - r).abs() > 1e-6 {
                return Err(GridError::Incommensurate(format!("origins differ by {d} cells on axis {a}")));
            }
            off[a] = r as i32;
        }
        Ok(VoxelCoord::new(off[0], off[1], off[2]))
    }

    /// Merge in `self`'s frame; on coordinate conflicts `self` wins.
    pub fn union(&self, other: &Self) -> Result<Self, GridError> {
        let off = self.lattice_offset(other)?;
        let mut out = self.clone();
        for (c, v) in other.iter() {
            let key = c
                .offset(off.i, off.j, off.k)
                .pack()
                .ok_or(GridError::CoordOutOfRange(c))?;
            out.cells.entry(key).or_insert(v);
        }
        Ok(out)
    }
}

fn itertools_product() -> impl Iterator<Item = (i32, i32, i32)> {
    (0..2).flat_map(|a| (0..2).flat_map(move |b| (0..2).map(move |d| (a, b, d))))
}

pub(crate) fn cell_min(origin: &Vec3, size: f64, c: VoxelCoord) -> Vec3 {
    Vec3::new(
        origin.x + c.i as f64 * size,
        origin.y + c.j as f64 * size,
        origin.z + c.k as f64 * size,
    )
}

pub(crate) fn cell_aabb(origin: &Vec3, size: f64, c: VoxelCoord) -> Aabb {
    Aabb::new(cell_min(origin, size, c), cell_min(origin, size, c.offset(1, 1, 1)))
}
