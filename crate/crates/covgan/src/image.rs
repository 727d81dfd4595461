//! Binary portable graymap export of covariance planes.

use std::path::Path;

use covgan_core::channel::VirtualCovariance;

use crate::io::atomic_write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Plane {
    Real,
    Imag,
}

/// 8-bit pixels of one plane, min-max scaled per image; a constant plane is
/// mid-gray.
pub fn plane_pixels(r: &VirtualCovariance, plane: Plane) -> Vec<u8> {
    let values: Vec<f64> = r
        .r_g
        .as_slice()
        .iter()
        .map(|c| match plane {
            Plane::Real => c.re,
            Plane::Imag => c.im,
        })
        .collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![128; values.len()];
    }
    values.iter().map(|v| (255.0 * (v - lo) / (hi - lo)).round() as u8).collect()
}

/// P5 file image.
pub fn encode_pgm(r: &VirtualCovariance, plane: Plane) -> Vec<u8> {
    let m = r.dim();
    let mut out = format!("P5\n{m} {m}\n255\n").into_bytes();
    out.extend(plane_pixels(r, plane));
    out
}

pub fn write_pgm(path: &Path, r: &VirtualCovariance, plane: Plane) -> std::io::Result<()> {
    atomic_write(path, &encode_pgm(r, plane))
}
