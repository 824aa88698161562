//! Flow-guided normalized-cut video object segmentation.
//!
//! Patch features from an image backbone and from flow renderings are turned
//! into a thresholded affinity graph, split by the second generalized
//! eigenvector of `(D - W) y = λ D y`, refined with a dense CRF, scored, and
//! improved by self-training a linear probe on its own masks.
//!
//! The `parallel` feature (on by default) runs the data-parallel loops on
//! rayon; without it the same code runs sequentially with identical output.

// `!(x > 0.0)` is used on purpose so that NaN fails parameter checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affinity;
pub mod error;
pub mod flowviz;
pub mod maskpipe;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod selftrain;
pub mod spectral;
pub mod tensor_io;

pub use error::{Error, Result};
