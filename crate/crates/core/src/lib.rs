//! Figure-ground motion segmentation from motion energy or optical flow.
//!
//! The crate bundles a fixed-weight V1 → MT motion energy model, a
//! procedural video generator with analytic ground truth, random-dot
//! kinematograms, a Lucas-Kanade flow baseline, a small coarse-to-fine
//! segmentation network with hand-written gradients, and the evaluation
//! tooling used to compare them.

pub mod dataset;
pub mod dots;
pub mod error;
pub mod eval;
pub mod filter;
pub mod flow;
pub mod gradcheck;
pub mod image_io;
pub mod model;
pub mod motion_energy;
pub mod seg;
pub mod shape;
pub mod stimuli;
pub mod texture;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Mask, VideoVolume};
