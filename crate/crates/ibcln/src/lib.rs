//! Cascaded ConvLSTM reflection removal toolkit.
//!
//! Removes glass reflections from single photographs with a pair of
//! convolutional-LSTM encoder/decoder sub-networks that iteratively refine a
//! transmission estimate and its complementary residual reflection. The crate
//! covers the full research loop:
//!
//! - [`imaging`]: color-space-correct raster primitives (gamma transfer,
//!   clipping, PNG I/O, patching, downsampling),
//! - [`synthesis`]: linear-space synthetic data generation and
//!   residual-reflection ground truth,
//! - [`model`]: the twin sub-networks, cascade recurrence and the patch
//!   discriminator,
//! - [`losses`]: the four objective terms and their weighted combination,
//! - [`training`]: the optimization loop with ablation switches,
//! - [`evaluation`]: PSNR/SSIM metrics, benchmark tables and time-step sweeps,
//! - [`cli`]: the `ibcln` command-line entry points.
//!
//! All blending and residual arithmetic happens in linear color space; images
//! are gamma-decoded on load and re-encoded only when written back to disk.

pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod losses;
pub mod model;
pub mod perceptual;
pub mod synthesis;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
