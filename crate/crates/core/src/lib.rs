//! Artifact-free dilated memory-block networks for audio, their strided
//! autoencoder baselines, differentiable auditory surrogates and the metrics
//! used to quantify tonal, aliasing and imaging artifacts.

pub mod analysis;
pub mod arch;
pub mod auditory;
pub mod corpus;
pub mod error;
pub mod kv;
pub mod nn;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
pub use nn::{Activation, FeatureMap, ParamStore};
pub use signal::{AudioBuffer, Frame, Spectrum, Window};
