//! Shared image/video transformer with object tokens supervised by
//! hand-object graphs, a frame-clip consistency loss and keyframe
//! localization, trained and evaluated on deterministic synthetic data.

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod frames;
pub mod gradcheck;
pub mod haog;
pub mod losses;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
