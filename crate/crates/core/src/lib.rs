//! Working-memory geometry toolkit: procedural stimuli, N-back tasks,
//! recurrent models with exact gradients, activation recording, linear
//! decoding and representational geometry analyses.

pub mod artifact;
pub mod decode;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod optimize;
pub mod pipeline;
pub mod recurrent;
pub mod scalar;
pub mod stimulus;
pub mod task;
pub mod trace;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model = recurrent::RecurrentModel<f32>;
pub type Model64 = recurrent::RecurrentModel<f64>;
pub type Frontend = stimulus::PerceptualFrontend<f32>;
pub type Decoder = decode::LinearDecoder<f64>;
pub type Decoders = decode::DecoderSet<f64>;
