//! Command-line pipeline and interactive drive service for voxworld scenes.
//!
//! Verbs: `generate`, `outpaint`, `render-buffers`, `compose`, `lidar-sim`,
//! `serve` and `export-ply`. See the README for the bundle layout, the
//! streaming protocol and exit codes.

pub mod bundle;
pub mod config;
pub mod drive;
pub mod error;
pub mod pipeline;
pub mod protocol;
pub mod serve;

pub use error::{CliError, Result};
