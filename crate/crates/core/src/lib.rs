pub mod autograd;
pub mod benchmark;
pub mod dataset;
pub mod error;
pub mod figure;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod optim;
pub mod stft;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
