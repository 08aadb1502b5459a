//! Recurrent instance-level video object segmentation.
//!
//! Each tracked object gets its own pair of networks: a two-stream binary
//! segmentation net (appearance + optical-flow magnitude, both conditioned on
//! the previous prediction warped into the current frame) and a localization
//! net that regresses a bounding box from RoI-pooled appearance features. The
//! box restricts the segmentation to suppress far-away outliers, and the
//! per-object probability maps are fused by an argmax into one label map.
//!
//! The crate is `no_std` (with `alloc`) and performs no IO. File formats, the
//! dataset layout and the command line live in the `maskrnn` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_op_in_unsafe_fn)]

extern crate alloc;

mod error;
pub mod math;

pub mod data;
pub mod flow;
pub mod fusion;
pub mod image;
pub mod locnet;
pub mod metrics;
pub mod pipeline;
pub mod segnet;
pub mod tensor;
pub mod vision;

pub use error::{Error, Result};
pub use image::{BinaryMask, FlowField, Frame, Grid, LabelMask, ProbMap};
