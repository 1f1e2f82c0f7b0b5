//! Fault detection on tabular process data: a denoising autoencoder learns a
//! compact latent space, a kernel SVM classifies in it, and Kernel SHAP
//! attributes latent dimensions back to input sensors.

pub mod data;
pub mod error;
pub mod evaluate;
pub mod explain;
pub mod network;
pub mod numerics;
pub mod pipeline;
pub mod svm;
pub mod training;

pub use error::{ClaireError, Result};
