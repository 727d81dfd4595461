//! File formats, parallel dataset builds, training drivers, evaluation and
//! the `covgan` command line on top of `covgan-core`.

pub mod build;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod eval;
pub mod format;
pub mod image;
pub mod io;
pub mod manifest;
pub mod train;
