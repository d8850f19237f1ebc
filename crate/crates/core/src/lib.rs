//! A small from-scratch CNN training stack built around the reborn
//! activation block.

pub mod activations;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod models;
pub mod optim;
pub mod pgm;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::{concat_channels, Tensor};
