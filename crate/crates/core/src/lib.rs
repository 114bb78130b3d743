//! Compact neural video delivery.
//!
//! One super-resolution backbone is shared by every chunk of a video, and each
//! chunk gets a tiny private set of channel-wise modulation parameters
//! ([`cafm::CafmSet`]). This crate holds the numerical side of the system:
//! frames and bicubic degradation, the four backbones with hand-written
//! backward passes, the modulation layer, the training regimes, feature-space
//! analysis, PSNR, and the binary delivery bundle.
//!
//! The crate is `no_std` and only needs `alloc`. Enable the `std` feature to
//! let the matrix kernels pick SIMD paths at runtime.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod bundle;
pub mod cafm;
pub mod error;
pub mod eval;
pub mod frame;
pub mod media;
pub mod metrics;
pub mod nn;
pub mod rate;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use frame::{FeatureMap, Frame, Tensor};
