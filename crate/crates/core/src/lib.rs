pub mod cli;
pub mod codec;
pub mod error;
pub mod experiment;
pub mod explain;
pub mod formats;
pub mod fusion;
pub mod image;
pub mod mapping;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod shapley;
pub mod synth;

pub use error::{Error, Result};
