//! Residual encoder-decoder subspace clustering.
//!
//! A convolutional encoder-decoder with skip connections whose latent maps
//! all pass through one shared self-expressive layer, trained end to end on
//! reconstruction plus self-expression loss. The learned coefficient matrix
//! becomes an affinity for normalized spectral clustering.

pub mod array;
pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod linalg;
pub mod clustering;
pub mod data;
pub mod diagnostics;
pub mod model;
pub mod trainer;
pub mod rng;

pub use array::Array;
pub use error::{Error, Result};
