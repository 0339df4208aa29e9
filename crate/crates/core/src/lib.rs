//! Spiking forward model of a soft trunk arm and motor inference by
//! gradient descent through the network inputs.
//!
//! The crate is organized bottom-up: neuron dynamics, the recurrent
//! network and its backward pass, arm kinematics, encoding and datasets,
//! optimizers, training and inference.

pub mod binio;
pub mod checkpoint;
pub mod dataset;
pub mod encoding;
pub mod grad;
pub mod inference;
pub mod kinematics;
pub mod matrix;
pub mod model;
pub mod network;
pub mod neuron;
pub mod optim;
pub mod train;

pub use matrix::Matrix;
