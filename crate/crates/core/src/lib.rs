pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod explain;
pub mod graph;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
