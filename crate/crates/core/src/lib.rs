//! Dual-branch vision transformer for three-class image forensics
//! (GAN, computer graphics, camera photographs).
//!
//! One branch sees the RGB image; the other sees YCbCr planes whose chroma
//! has been enriched with the error left behind by a simulated JPEG pass.
//! The RGB feature is average-pooled, concatenated with the YCbCr feature
//! and classified by a small dense head.
//!
//! Module map:
//!
//! - [`imaging`]: color conversion, JPEG degradation, noise, chroma enrichment, PPM/PGM I/O
//! - [`nn`]: tensors, tape-based reverse-mode autodiff, Adam, checkpoints
//! - [`vit`]: transformer encoder and attention rollout
//! - [`fusion`]: the two-branch model and its preprocessing
//! - [`data`]: dataset loading, splitting, synthetic generator
//! - [`train`]: training loop
//! - [`eval`]: metrics, robustness sweeps, DET curves, feature export

pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod imaging;
pub mod kv;
pub mod nn;
pub mod train;
pub mod vit;

pub use error::{Error, Result};
