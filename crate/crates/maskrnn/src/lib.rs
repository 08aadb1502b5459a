//! File formats, dataset directories and the command-line front end around
//! [`maskrnn_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod flo;
pub mod overlay;
pub mod parallel;
pub mod png_io;
pub mod report;

pub use error::{Error, Result};
