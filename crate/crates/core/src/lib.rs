//! Cell image classifier combining KAN feed-forward layers, a global-local
//! attention encoder and spatial/channel reconstruction convolution, built
//! on a small reverse-mode autodiff engine.

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod glae;
pub mod gradcheck;
pub mod kan;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scconv;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
