//! Codec core for anchor-based 3D Gaussian-splat scenes.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs: reading and writing files, the command line and
//! synthetic scene generation live in the `anchorzip` companion crate.
//!
//! Pipeline, encoder side:
//!
//! 1. [`naap`] optionally prunes low-importance anchors and merges their
//!    offsets, scaling and opacity into the nearest surviving anchor.
//! 2. [`geometry`] quantizes positions on the fine voxel grid, orders the
//!    anchors along a Morton curve and range-codes per-axis deltas.
//! 3. [`hierarchy`] splits the quantized anchors into a coarse level (one
//!    anchor per coarse voxel) and a fine level that inherits from it.
//! 4. Level-1 attributes are coded under a context-free per-channel prior;
//!    level-2 attributes under Gaussians predicted by the [`ggconv`] context
//!    model from decoded level-1 data and a k-NN graph over level-2 positions.
//! 5. [`codec`] assembles the container with the serialized model.
//!
//! The [`entropy`] module owns quantization, the discretized probability
//! models, the range coder and context-model fitting.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod codec;
pub mod entropy;
pub mod error;
pub mod geometry;
pub mod ggconv;
pub mod hierarchy;
pub mod math;
pub mod naap;
pub mod spatial;
pub mod types;

pub use codec::{decode, encode, rate_report, CodecProfile, EncodeOutput, RateReport};
pub use error::{Error, Result};
pub use types::{Anchor, AnchorCloud};
