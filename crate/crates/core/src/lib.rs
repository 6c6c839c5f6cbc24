pub mod baselines;
pub mod cli;
pub mod coherence;
pub mod denoiser;
pub mod error;
pub mod io;
mod kernels;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod preprocess;
pub mod raster;
pub mod rng;
pub mod simulator;
pub mod tensor;

pub use error::{Error, Result};
