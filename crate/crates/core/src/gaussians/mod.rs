//! Gaussian scenes: per-voxel and per-pixel Gaussian decoding, dynamic
//! object extraction, scene composition, a sky model and a reference splat
//! renderer.

mod decode;
mod ply;
mod predictor;
mod scene;
mod sky;
mod splat;

pub use decode::{
    decode_pixel_gaussians, decode_voxel_gaussians, depth_from_raw, logit, raw_from_depth, scale_from_raw, sigmoid,
    PixelGaussianParams, VoxelGaussianParams, PIXEL_CHANNELS, PIXEL_GAUSSIANS, PIXEL_PARAMS, SCALE_MAX, SCALE_MIN,
    VOXEL_CHANNELS, VOXEL_GAUSSIANS, VOXEL_PARAMS, Z_FAR, Z_NEAR,
};
pub use ply::{read_ply, write_ply};
pub use predictor::{AttributePredictor, FilePredictor, HeuristicPredictor, RgbImage};
pub use scene::{
    composite_scene, extract_dynamic_object, load_scene, save_scene, transform_dynamic, CompositeSettings,
    static_grid, FrameGaussians, FrameInput, GaussianScene, SceneManifest, SceneObject, DYNAMIC_BOX_DILATION,
    PIXEL_BRANCH_STRIDE,
    VOXEL_BRANCH_SIZE,
};
pub use sky::{sky_encode, sky_eval, Sky, SkyModelParams, SkyShader, SKY_DIM, SKY_PATCH};
pub use splat::{
    project_gaussian, render_splats, ProjectedGaussian, SplatImage, ALPHA_MAX, ALPHA_MIN, LOW_PASS, NEAR_PLANE,
};

use nalgebra::{Isometry3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::formats::FormatError;
use crate::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum GaussianError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown instance {0}")]
    UnknownInstance(u32),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed file {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("predictor: {0}")]
    Predictor(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Grid(#[from] crate::sparse_grid::GridError),
    #[error(transparent)]
    Buffer(#[from] crate::buffers::BufferError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian3D {
    pub position: Vec3,
    pub rotation: UnitQuaternion<f64>,
    /// Standard deviations along the local axes, metres.
    pub scale: Vec3,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Gaussian3D {
    pub fn isotropic(position: Vec3, scale: f64, opacity: f64, color: [f64; 3]) -> Self {
        Self {
            position,
            rotation: UnitQuaternion::identity(),
            scale: Vec3::repeat(scale),
            opacity,
            color,
        }
    }

    /// Rigidly moved copy.
    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        Self {
            position: iso.transform_point(&self.position.into()).coords,
            rotation: iso.rotation * self.rotation,
            ..*self
        }
    }

    /// World-space covariance `R S² Rᵀ`.
    pub fn covariance(&self) -> nalgebra::Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s2 = nalgebra::Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }
}
