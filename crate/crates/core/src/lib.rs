//! Siamese tracking on hyperspectral video at desk scale.
//!
//! The crate is organized as a pipeline:
//! - [`numeric`]: dense matrices, a reverse-mode tape, transformer blocks,
//!   checkpoints, and a finite-difference gradient harness.
//! - [`data`]: spectral cubes, band padding, synthetic sequence generation,
//!   and the on-disk cube format.
//! - [`tokenizer`]: patch extraction, dual-branch embedding, the learnable
//!   spatial-spectral fusion gate, and RGB weight inflation.
//! - [`model`]: configuration, parameter init, the tracking transformer,
//!   training, and inference over sequences.
//! - [`metrics`]: overlap/precision curves and result serialization.

pub mod data;
pub mod error;
pub mod geom;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod tokenizer;

pub use error::{Error, Result};
pub use geom::Bbox;
