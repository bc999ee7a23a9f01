//! Guidance buffers: semantic, coordinate, depth, instance and mid-ground
//! images rendered by raycasting the voxel world along a camera trajectory.

mod camera;
mod export;
mod palette;
mod raycast;
mod render;

pub use camera::{Camera, Intrinsics, TimedCamera, Trajectory, TRAJECTORY_VERSION};
pub use export::{read_buffer_set, write_buffer_set, BufferSidecar};
pub use palette::{instance_color, instance_ramp, miss_color, rescale, semantic_color, voxel_color, Rgb, RAMP_LEN};
pub use raycast::{raycast_dda, RayGrid, RayHit, BRICK};
pub use render::{
    mask_depth_patches, mid_ground_mask, normalize_coordinate, render_buffers, render_frame, window_centroids,
    DynamicObject, GuidanceBufferSet, PosedScene, RenderSettings, SceneHit, SceneRaycaster, DEFAULT_COORD_SCALE,
    DEFAULT_DEPTH_PATCH, DEFAULT_MAX_RANGE, DEFAULT_WINDOW,
};

use crate::formats::FormatError;

#[derive(Debug, thiserror::Error)]
pub enum BufferError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("image {path}: {message}")]
    Image { path: String, message: String },
    #[error(transparent)]
    Format(#[from] FormatError),
}
