//! Binary grid blob.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    [u8; 4]   "IVXW"
//! version  u32       1
//! size     f64       voxel size (m)
//! origin   3 × f64   world origin (m)
//! count    u64       number of records
//! records  count × { i: i32, j: i32, k: i32, label: u8, instance: i32 (-1 = none) }
//! ```
//!
//! Records are written in sorted coordinate order.

use std::io::{Read, Write};

use super::{GridError, SemanticLabel, SemanticVoxel, SparseVoxelGrid, VoxelCoord};
use crate::geom::Vec3;

pub const BLOB_MAGIC: &[u8; 4] = b"IVXW";
pub const BLOB_VERSION: u32 = 1;

pub fn write_blob<W: Write>(grid: &SparseVoxelGrid, mut w: W) -> Result<(), GridError> {
    w.write_all(BLOB_MAGIC)?;
    w.write_all(&BLOB_VERSION.to_le_bytes())?;
    w.write_all(&grid.voxel_size().to_le_bytes())?;
    for v in grid.origin().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(grid.len() as u64).to_le_bytes())?;
    let mut rec = Vec::with_capacity(17 * grid.len());
    for (c, v) in grid.iter() {
        rec.extend_from_slice(&c.i.to_le_bytes());
        rec.extend_from_slice(&c.j.to_le_bytes());
        rec.extend_from_slice(&c.k.to_le_bytes());
        rec.push(v.label().as_u8());
        let inst = v.instance_id().map_or(-1i32, |id| id as i32);
        rec.extend_from_slice(&inst.to_le_bytes());
    }
    w.write_all(&rec)?;
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], GridError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| GridError::Malformed(format!("truncated: {e}")))?;
    Ok(buf)
}

pub fn read_blob<R: Read>(mut r: R) -> Result<SparseVoxelGrid, GridError> {
    if &take::<4, _>(&mut r)? != BLOB_MAGIC {
        return Err(GridError::Malformed("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != BLOB_VERSION {
        return Err(GridError::Malformed(format!("unsupported version {version}")));
    }
    let size = f64::from_le_bytes(take(&mut r)?);
    let mut origin = Vec3::zeros();
    for a in 0..3 {
        origin[a] = f64::from_le_bytes(take(&mut r)?);
    }
    let count = u64::from_le_bytes(take(&mut r)?);
    let mut grid = SparseVoxelGrid::new(origin, size)?;
    for _ in 0..count {
        let rec: [u8; 17] = take(&mut r)?;
        let f = |o: usize| i32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
        let c = VoxelCoord::new(f(0), f(4), f(8));
        let label = SemanticLabel::from_u8(rec[12])
            .ok_or_else(|| GridError::Malformed(format!("unknown label {}", rec[12])))?;
        let inst = f(13);
        let inst = if inst < 0 { None } else { Some(inst as u32) };
        if grid.insert(c, SemanticVoxel::new(label, inst)?)?.is_some() {
            return Err(GridError::Malformed(format!("duplicate coordinate {c:?}")));
        }
    }
    Ok(grid)
}
