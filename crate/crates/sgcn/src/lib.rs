//! Relation extraction with self-determined graph convolutional networks.
//!
//! The crate is self-contained: a reverse-mode autodiff tape, the model
//! layers built on it, dataset loading and preprocessing, a synthetic task
//! generator, training, and scoring. Everything is generic over the float
//! width through [`scalar::Scalar`]; training normally runs in `f32`,
//! gradient verification in `f64`.

pub mod autodiff;
pub mod data;
pub mod eval;
pub mod model;
pub mod scalar;
pub mod train;
pub mod util;
