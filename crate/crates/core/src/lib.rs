//! Unbounded semantic voxel worlds and everything rendered from them.
//!
//! The crate is organised bottom-up:
//!
//! * [`sparse_grid`] stores the semantic voxel world and rasterizes polylines
//!   and oriented boxes into it.
//! * [`conditions`] builds the dense condition volume (HD map, road surface,
//!   box headings) for one latent chunk.
//! * [`outpaint`] runs DDIM sampling with v-prediction and classifier-free
//!   guidance, and grows a world chunk by chunk with masked latent blending.
//! * [`buffers`] raycasts the world along camera trajectories into semantic,
//!   coordinate, depth, instance and mid-ground buffers.
//! * [`gaussians`] decodes voxel/pixel Gaussian parameterizations, composes
//!   static and dynamic Gaussian scenes, models the sky and renders splats.
//! * [`lidar`] casts LiDAR beams against Gaussian scenes.
//!
//! Learned components (denoiser, latent decoder, Gaussian attribute
//! predictors) sit behind traits with deterministic toy implementations.

pub mod buffers;
pub mod conditions;
pub mod exec;
pub mod formats;
pub mod gaussians;
pub mod geom;
pub mod lidar;
pub mod outpaint;
pub mod rng;
pub mod sparse_grid;

pub use exec::Execution;
pub use geom::Vec3;
