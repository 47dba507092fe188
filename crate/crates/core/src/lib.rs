//! Detection and removal of out-of-body frames in endoscopic video.

pub mod baselines;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod loss;
pub mod model;
pub mod nn;
pub mod preprocess;
pub mod pretext;
pub mod rng;
pub mod scrub;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
