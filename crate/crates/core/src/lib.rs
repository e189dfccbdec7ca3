//! Scale-agnostic super-resolution for MR-like images.
//!
//! An EDSR-style encoder maps a low-resolution image to a latent feature
//! grid; a coordinate MLP decodes any continuous location by blending its
//! outputs at the four surrounding grid cells. Training minimizes an L1
//! consistency loss plus a weighted L2 pull toward a denoised target.

pub mod autodiff;
pub mod denoise;
pub mod error;
pub mod image;
pub mod metrics;
pub mod models;
pub mod mri_sim;
pub mod resample;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use image::ImageGrid;
pub use tensor::Tensor;
