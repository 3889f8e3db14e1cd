//! File formats, synthetic scenes, profiles and reports around
//! [`anchorzip_core`]. The `anchorzip` binary is a thin layer over this.

pub mod distortion;
pub mod error;
pub mod formats;
pub mod profile;
pub mod report;
pub mod selftest;
pub mod synth;

pub use error::{AppError, AppResult};
