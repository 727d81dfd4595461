//! Core kernels for predicting sparse virtual (beamspace) channel covariance
//! matrices of a multi-basestation mmWave street deployment.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! - [`scene`]: a deterministic image-source street model producing per
//!   basestation propagation paths,
//! - [`channel`]: wideband delay-tap and frequency-domain channels, spatial
//!   covariance and the unitary DFT (virtual domain) factorization,
//! - [`pilot`]: omni-combined uplink pilot reception and signature assembly,
//! - [`dataset`]: grid sweeps, record assembly, normalization and splitting,
//! - [`metrics`]: NMSE, constant and nearest-neighbour baselines,
//! - [`gan`]: the conditional generator/discriminator pair, losses, Adam,
//!   training and prediction.
//!
//! File formats, the CLI and parallel dataset builds live in the `covgan`
//! companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod channel;
pub mod dataset;
pub mod gan;
pub mod linalg;
pub mod metrics;
pub mod pilot;
pub mod rng;
pub mod scene;

pub use num_complex::Complex64;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
