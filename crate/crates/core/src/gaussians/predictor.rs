use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::decode::{
    depth_from_raw, logit, raw_from_depth, PixelGaussianParams, VoxelGaussianParams, PIXEL_CHANNELS, PIXEL_GAUSSIANS,
    PIXEL_PARAMS, VOXEL_CHANNELS, VOXEL_GAUSSIANS, VOXEL_PARAMS, Z_FAR, Z_NEAR,
};
use super::scene::FrameInput;
use super::GaussianError;
use crate::formats::read_f32_le;
use crate::sparse_grid::SparseVoxelGrid;

/// Row-major RGB image with channels in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn constant(width: usize, height: usize, c: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![c; width * height],
        }
    }

    pub fn load(path: &Path) -> Result<Self, GaussianError> {
        let img = image::open(path)
            .map_err(|e| GaussianError::Malformed {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
            .into_rgb16();
        let (w, h) = img.dimensions();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data: img.pixels().map(|p| p.0.map(|v| v as f64 / 65535.0)).collect(),
        })
    }

    /// 8-bit PNG, values clamped to [0, 1].
    pub fn save(&self, path: &Path) -> Result<(), GaussianError> {
        let raw: Vec<u8> = self
            .data
            .iter()
            .flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .ok_or_else(|| GaussianError::ShapeMismatch("image buffer".into()))?
            .save(path)
            .map_err(|e| GaussianError::Malformed {
                path: path.display().to_string(),
                message: e.to_string(),
            })
    }
}

/// Source of raw Gaussian parameters for both branches.
pub trait AttributePredictor: Sync {
    fn predict_pixels(&self, frame: &FrameInput) -> Result<PixelGaussianParams, GaussianError>;

    /// Parameters for every voxel of `grid`, in grid iteration order.
    fn predict_voxels(&self, grid: &SparseVoxelGrid, frames: &[FrameInput]) -> Result<VoxelGaussianParams, GaussianError>;
}

/// Deterministic stand-in for trained networks: colors come from the
/// images, depth from the (masked) depth buffer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicPredictor {
    pub opacity: f64,
    /// Voxel Gaussian scale as a fraction of the voxel size.
    pub voxel_scale: f64,
    /// Raw opacity of the second pixel Gaussian.
    pub secondary_opacity_raw: f64,
}

impl Default for HeuristicPredictor {
    fn default() -> Self {
        Self {
            opacity: 0.9,
            voxel_scale: 0.7,
            secondary_opacity_raw: -20.0,
        }
    }
}

fn color_raw(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| logit(v.clamp(1e-4, 1.0 - 1e-4)))
}

impl AttributePredictor for HeuristicPredictor {
    fn predict_pixels(&self, frame: &FrameInput) -> Result<PixelGaussianParams, GaussianError> {
        let b = &frame.buffers;
        let (w, h) = (b.width(), b.height());
        let depth = frame.depth.as_deref().unwrap_or(&b.depth);
        if frame.image.width != w || frame.image.height != h || depth.len() != w * h {
            return Err(GaussianError::ShapeMismatch("image and buffers are not aligned".into()));
        }
        let fx = b.camera.intrinsics.fx;
        let mut raw = vec![0.0; w * h * PIXEL_PARAMS];
        for p in 0..w * h {
            let z = depth[p];
            let d_raw = if z > Z_NEAR && z < Z_FAR { raw_from_depth(z, Z_NEAR, Z_FAR) } else { 0.0 };
            let scale = depth_from_raw(d_raw, Z_NEAR, Z_FAR) / fx;
            let c = color_raw(frame.image.data[p]);
            for g in 0..PIXEL_GAUSSIANS {
                let o = &mut raw[p * PIXEL_PARAMS + g * PIXEL_CHANNELS..][..PIXEL_CHANNELS];
                o[..3].copy_from_slice(&c);
                o[3..7].copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
                o[7..10].fill(scale.ln());
                o[10] = if g == 0 { logit(self.opacity) } else { self.secondary_opacity_raw };
                o[11] = d_raw;
            }
        }
        Ok(PixelGaussianParams { width: w, height: h, raw })
    }

    fn predict_voxels(&self, grid: &SparseVoxelGrid, frames: &[FrameInput]) -> Result<VoxelGaussianParams, GaussianError> {
        let s = grid.voxel_size();
        let tol = 2.0 * 3f64.sqrt() * s;
        let mut coords = Vec::with_capacity(grid.len());
        let mut raw = Vec::with_capacity(grid.len() * VOXEL_PARAMS);
        for (c, _) in grid.iter() {
            let center = grid.cell_center(c);
            let (mut sum, mut n) = ([0.0; 3], 0usize);
            for f in frames {
                let b = &f.buffers;
                let Some((u, v, z)) = b.camera.project(&center) else {
                    continue;
                };
                if u < 0.0 || v < 0.0 || u >= b.width() as f64 || v >= b.height() as f64 {
                    continue;
                }
                let p = v as usize * b.width() + u as usize;
                if b.depth[p] > 0.0 && (b.depth[p] - z).abs() <= tol {
                    let px = f.image.data[p];
                    (0..3).for_each(|a| sum[a] += px[a]);
                    n += 1;
                }
            }
            let color = if n > 0 { sum.map(|v| v / n as f64) } else { [0.5; 3] };
            let cr = color_raw(color);
            coords.push(c);
            for _ in 0..VOXEL_GAUSSIANS {
                let mut g = [0.0; VOXEL_CHANNELS];
                g[..3].copy_from_slice(&cr);
                g[3] = 1.0;
                g[7..10].fill((self.voxel_scale * s).ln());
                g[10] = logit(self.opacity);
                raw.extend_from_slice(&g);
            }
        }
        Ok(VoxelGaussianParams { coords, raw })
    }
}

/// Reads parameters produced by an external model: `voxels.f32` holds
/// `N × 56` little-endian f32 values in grid iteration order and
/// `frame_NNNNN_pixels.f32` holds `H × W × 24` values per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FilePredictor {
    pub dir: PathBuf,
}

impl AttributePredictor for FilePredictor {
    fn predict_pixels(&self, frame: &FrameInput) -> Result<PixelGaussianParams, GaussianError> {
        let b = &frame.buffers;
        let raw = read_f32_le(&self.dir.join(format!("frame_{:05}_pixels.f32", b.frame)))?;
        let p = PixelGaussianParams {
            width: b.width(),
            height: b.height(),
            raw,
        };
        p.validate().map_err(|e| GaussianError::Predictor(format!("frame {}: {e}", b.frame)))?;
        Ok(p)
    }

    fn predict_voxels(&self, grid: &SparseVoxelGrid, _frames: &[FrameInput]) -> Result<VoxelGaussianParams, GaussianError> {
        let raw = read_f32_le(&self.dir.join("voxels.f32"))?;
        let p = VoxelGaussianParams {
            coords: grid.iter().map(|(c, _)| c).collect(),
            raw,
        };
        p.validate().map_err(|e| GaussianError::Predictor(format!("voxels: {e}")))?;
        Ok(p)
    }
}
