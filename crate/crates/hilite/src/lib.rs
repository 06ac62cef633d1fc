//! Non-learned building blocks for specular highlight removal on
//! document images: Laplacian-pyramid decomposition, residual-based
//! highlight location priors, full-reference image metrics, diffusion
//! forward-process math with a pluggable denoiser, and dataset quality
//! control for paired highlight/highlight-free images.

pub mod diffusion;
pub mod imagecore;
pub mod metrics;
pub mod prior;
pub mod pyramid;
pub mod qc;

pub use imagecore::{GrayImage, ImageBuffer};
pub use prior::{BinaryMask, SoftMask};
pub use pyramid::Pyramid;
