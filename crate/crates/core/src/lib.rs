//! Stereo image super-resolution with a symmetric bi-directional parallax
//! attention module, inline occlusion handling, and residual losses.
//!
//! The crate is organized as a small dependency chain:
//!
//! * [`tensor`]: dense rank-1..4 f32 tensors and the numeric kernels
//!   (convolution, batched matmul, softmax, pixel shuffle, ...).
//! * [`imaging`]: PNG I/O, bicubic rescaling, residual images, PSNR/SSIM.
//! * [`bipam`]: whitening, parallax score maps, bi-directional attention,
//!   feature conversion and occlusion-aware fusion.
//! * [`occlusion`]: cycle-consistency probabilities and valid masks.
//! * [`losses`]: the training objective terms as evaluable functionals.
//! * [`network`]: the full super-resolution forward pass plus the binary
//!   weight archive it runs from.
//! * [`synthetic`]: procedural stereo scenes with exact disparity and
//!   occlusion ground truth, used as oracles for everything above.

pub mod bipam;
pub mod error;
pub mod imaging;
pub mod losses;
pub mod network;
pub mod occlusion;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
