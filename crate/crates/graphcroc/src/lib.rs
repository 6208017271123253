//! Graph autoencoder toolkit built around cross-correlation decoding.

pub mod attack;
pub mod autodiff;
pub mod cli;
pub mod layers;
pub mod data;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod theory;
pub mod train;

pub use autodiff::{Gradients, Tape, Tensor};
pub use matrix::Matrix;
