use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::{Gaussian3D, GaussianError};
use crate::buffers::Camera;
use crate::sparse_grid::{SparseVoxelGrid, VoxelCoord};
use crate::Vec3;

pub const Z_NEAR: f64 = 0.5;
pub const Z_FAR: f64 = 300.0;
pub const SCALE_MIN: f64 = 1e-4;
pub const SCALE_MAX: f64 = 50.0;

pub const VOXEL_GAUSSIANS: usize = 4;
/// RGB 3, rotation 4, scale 3, opacity 1, relative position 3.
pub const VOXEL_CHANNELS: usize = 14;
pub const VOXEL_PARAMS: usize = VOXEL_GAUSSIANS * VOXEL_CHANNELS;

pub const PIXEL_GAUSSIANS: usize = 2;
/// RGB 3, rotation 4, scale 3, opacity 1, depth 1.
pub const PIXEL_CHANNELS: usize = 12;
pub const PIXEL_PARAMS: usize = PIXEL_GAUSSIANS * PIXEL_CHANNELS;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn scale_from_raw(raw: f64) -> f64 {
    raw.exp().clamp(SCALE_MIN, SCALE_MAX)
}

/// `z = (1 − ω)·z_near + ω·z_far` with `ω = sigmoid(raw)`.
pub fn depth_from_raw(raw: f64, z_near: f64, z_far: f64) -> f64 {
    let w = sigmoid(raw);
    (1.0 - w) * z_near + w * z_far
}

/// Inverse of [`depth_from_raw`] for `z ∈ (z_near, z_far)`.
pub fn raw_from_depth(z: f64, z_near: f64, z_far: f64) -> f64 {
    logit((z - z_near) / (z_far - z_near))
}

fn quat(raw: &[f64]) -> UnitQuaternion<f64> {
    let q = Quaternion::new(raw[0], raw[1], raw[2], raw[3]);
    if q.norm() > 1e-12 && q.coords.iter().all(|v| v.is_finite()) {
        UnitQuaternion::from_quaternion(q)
    } else {
        UnitQuaternion::identity()
    }
}

/// Shared activations for the first 11 channels; returns the Gaussian at `position`.
fn activate(raw: &[f64], position: Vec3) -> Gaussian3D {
    Gaussian3D {
        position,
        color: [sigmoid(raw[0]), sigmoid(raw[1]), sigmoid(raw[2])],
        rotation: quat(&raw[3..7]),
        scale: Vec3::new(scale_from_raw(raw[7]), scale_from_raw(raw[8]), scale_from_raw(raw[9])),
        opacity: sigmoid(raw[10]),
    }
}

/// Raw voxel-branch output: 56 values for each listed voxel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGaussianParams {
    pub coords: Vec<VoxelCoord>,
    pub raw: Vec<f64>,
}

impl VoxelGaussianParams {
    pub fn validate(&self) -> Result<(), GaussianError> {
        if self.raw.len() != self.coords.len() * VOXEL_PARAMS {
            return Err(GaussianError::ShapeMismatch(format!(
                "{} raw values for {} voxels",
                self.raw.len(),
                self.coords.len()
            )));
        }
        Ok(())
    }
}

/// Raw pixel-branch output: 24 values per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelGaussianParams {
    pub width: usize,
    pub height: usize,
    pub raw: Vec<f64>,
}

impl PixelGaussianParams {
    pub fn validate(&self) -> Result<(), GaussianError> {
        if self.raw.len() != self.width * self.height * PIXEL_PARAMS {
            return Err(GaussianError::ShapeMismatch(format!(
                "{} raw values for {}x{} pixels",
                self.raw.len(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.raw[p * PIXEL_PARAMS..(p + 1) * PIXEL_PARAMS]
    }
}

/// Four Gaussians per voxel, each at `voxel centre + tanh(raw)·voxel_size`.
/// `lattice` supplies the voxel frame (origin and size).
pub fn decode_voxel_gaussians(
    params: &VoxelGaussianParams,
    lattice: &SparseVoxelGrid,
) -> Result<Vec<Gaussian3D>, GaussianError> {
    params.validate()?;
    let s = lattice.voxel_size();
    let mut out = Vec::with_capacity(params.coords.len() * VOXEL_GAUSSIANS);
    for (v, c) in params.coords.iter().enumerate() {
        let center = lattice.cell_center(*c);
        for g in 0..VOXEL_GAUSSIANS {
            let raw = &params.raw[v * VOXEL_PARAMS + g * VOXEL_CHANNELS..][..VOXEL_CHANNELS];
            let offset = Vec3::new(raw[11].tanh(), raw[12].tanh(), raw[13].tanh()) * s;
            out.push(activate(raw, center + offset));
        }
    }
    Ok(out)
}

/// Two Gaussians per selected pixel, placed along the pixel ray at camera
/// depth `z` (so the ray parameter is `z / cos(ray, optical axis)`).
/// Returns `(pixel index, Gaussian)` pairs; `keep` selects pixels (all when `None`).
pub fn decode_pixel_gaussians(
    params: &PixelGaussianParams,
    camera: &Camera,
    z_near: f64,
    z_far: f64,
    keep: Option<&[bool]>,
) -> Result<Vec<(usize, Gaussian3D)>, GaussianError> {
    params.validate()?;
    let k = camera.intrinsics;
    if (params.width, params.height) != (k.width, k.height) {
        return Err(GaussianError::ShapeMismatch("pixel params do not match camera".into()));
    }
    if keep.is_some_and(|m| m.len() != k.pixel_count()) {
        return Err(GaussianError::ShapeMismatch("keep mask does not match camera".into()));
    }
    let o = camera.position();
    let fwd = camera.forward();
    let mut out = Vec::new();
    for p in 0..k.pixel_count() {
        if keep.is_some_and(|m| !m[p]) {
            continue;
        }
        let d = camera.ray_dir(p % k.width, p / k.width);
        let cos = d.dot(&fwd);
        for g in 0..PIXEL_GAUSSIANS {
            let raw = &params.pixel(p)[g * PIXEL_CHANNELS..][..PIXEL_CHANNELS];
            let z = depth_from_raw(raw[11], z_near, z_far);
            out.push((p, activate(raw, o + d * (z / cos))));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_parameterization_limits() {
        assert_eq!(depth_from_raw(0.0, Z_NEAR, Z_FAR), 150.25);
        assert!((depth_from_raw(-50.0, Z_NEAR, Z_FAR) - Z_NEAR).abs() < 1e-12);
        assert!((depth_from_raw(raw_from_depth(42.0, Z_NEAR, Z_FAR), Z_NEAR, Z_FAR) - 42.0).abs() < 1e-9);
    }
}
