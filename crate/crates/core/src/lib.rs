//! Feature-based RGB-D tracking for dynamic scenes: camera tracking that
//! ignores moving content, multi-view depth-consistency detection of moving
//! objects fused with semantic masks, background inpainting from earlier
//! keyframes, evaluation metrics, and a synthetic RGB-D scene generator used
//! as ground truth.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod dynaseg;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod inpaint;
pub mod pipeline;
pub mod features;
pub mod raster;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};
