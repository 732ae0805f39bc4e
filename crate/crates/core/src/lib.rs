//! Spiking neural network engine built around a closed-form leaky
//! integrate-and-fire neuron: dense-tensor autodiff, five attention
//! mechanisms over segmented time series, the reference architectures,
//! training, dataset handling, and a FLOPs/energy profiler.

pub mod attention;
pub mod checks;
pub mod data;
pub mod error;
pub mod lif;
pub mod model;
pub mod profiler;
pub mod tensor;
pub mod train;

pub use error::{Result, SnnError};
