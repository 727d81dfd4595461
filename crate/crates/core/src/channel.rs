//! Wideband geometric channel, spatial covariance and the virtual domain.
//!
//! Path loss is already folded into the path gains by [`crate::scene`], so the
//! delay-`d` tap at a basestation is
//! `h_d = √M · Σ_ℓ gain_ℓ · p(d·T_s − τ̃_ℓ) · a(θ_ℓ)`, with delays referenced to
//! the earliest path. The frequency response follows the `D`-term DFT sum
//! evaluated on the `K` subcarrier grid.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use num_traits::Zero;
use thiserror::Error;

use crate::linalg::CMatrix;
use crate::scene::PathSet;

/// Hermitian tolerance for covariance inputs, relative to the Frobenius norm.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Truncated-energy tolerance for [`delay_channel`].
pub const DELAY_OVERFLOW_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("array needs at least 2 antennas and positive spacing")]
    BadArray,
    #[error("OFDM config needs 1 <= D <= K and T_s > 0")]
    BadOfdm,
    #[error("pulse rolloff must be in [0, 1] and span >= 1")]
    BadPulse,
    #[error("path energy beyond the {taps}-tap window is {fraction:e} of the total")]
    DelayOverflow { taps: usize, fraction: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input is not Hermitian (relative residual {0:e})")]
    NotHermitian(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayConfig {
    pub m_antennas: usize,
    pub spacing_wavelengths: f64,
}

impl ArrayConfig {
    pub fn new(m_antennas: usize) -> Result<Self, ChannelError> {
        let cfg = Self { m_antennas, spacing_wavelengths: 0.5 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.m_antennas < 2 || !(self.spacing_wavelengths > 0.0) {
            return Err(ChannelError::BadArray);
        }
        Ok(())
    }

    /// AoA whose array response equals `√M` times DFT column `m`.
    ///
    /// Returns `None` when the grid frequency is not visible for this spacing.
    pub fn on_grid_angle(&self, m: usize) -> Option<f64> {
        let mm = self.m_antennas as f64;
        // a(θ)_p = e^{j2πp·s·sinθ} must equal e^{−j2πpm/M}; fold m/M into (−½, ½].
        let mut f = -(m as f64) / mm;
        f -= f.round();
        if f <= -0.5 {
            f += 1.0;
        }
        let s = f / self.spacing_wavelengths;
        if s.abs() >= 1.0 {
            return None;
        }
        Some(s.asin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfdmConfig {
    pub k_subcarriers: usize,
    pub d_taps: usize,
    pub sample_period_s: f64,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self { k_subcarriers: 64, d_taps: 64, sample_period_s: 2e-9 }
    }
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.d_taps < 1 || self.d_taps > self.k_subcarriers || !(self.sample_period_s > 0.0) {
            return Err(ChannelError::BadOfdm);
        }
        Ok(())
    }
}

/// Raised-cosine pulse in units of the sample period, peak `p(0) = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseShape {
    pub rolloff: f64,
    pub span_taps: usize,
}

impl Default for PulseShape {
    fn default() -> Self {
        Self { rolloff: 0.8, span_taps: 8 }
    }
}

impl PulseShape {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(0.0..=1.0).contains(&self.rolloff) || self.span_taps < 1 {
            return Err(ChannelError::BadPulse);
        }
        Ok(())
    }

    /// `p(t)` with `t` in sample periods; zero outside `|t| <= span_taps`.
    pub fn eval(&self, t: f64) -> f64 {
        if t.abs() > self.span_taps as f64 {
            return 0.0;
        }
        let sinc = if t == 0.0 { 1.0 } else { (PI * t).sin() / (PI * t) };
        let b = self.rolloff;
        let denom = 1.0 - (2.0 * b * t).powi(2);
        if b > 0.0 && denom.abs() < 1e-10 {
            // Removable singularity at |t| = 1/(2β).
            let x = 1.0 / (2.0 * b);
            let sinc_x = (PI * x).sin() / (PI * x);
            return PI / 4.0 * sinc_x;
        }
        sinc * (PI * b * t).cos() / denom
    }
}

/// `a(θ)_m = e^{j2π·m·spacing·sinθ}`.
pub fn array_response(theta: f64, cfg: &ArrayConfig) -> Vec<Complex64> {
    let step = 2.0 * PI * cfg.spacing_wavelengths * theta.sin();
    (0..cfg.m_antennas)
        .map(|m| Complex64::from_polar(1.0, step * m as f64))
        .collect()
}

/// D x M delay-tap channel; row `d` is the delay-`d` channel vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayTapChannel {
    pub taps: CMatrix,
}

/// K x M frequency-domain channel; row `k` is the subcarrier-`k` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqChannel {
    pub h: CMatrix,
}

impl FreqChannel {
    pub fn subcarrier(&self, k: usize) -> &[Complex64] {
        self.h.row(k)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self { h: self.h.scale(s) }
    }
}

/// Antenna-domain spatial covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub r: CMatrix,
}

/// Covariance expressed in the unitary DFT basis.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualCovariance {
    pub r_g: CMatrix,
}

impl VirtualCovariance {
    pub fn dim(&self) -> usize {
        self.r_g.rows()
    }

    pub fn diagonal_power(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.r_g[(i, i)].re).collect()
    }
}

pub fn delay_channel(
    paths: &PathSet,
    array: &ArrayConfig,
    ofdm: &OfdmConfig,
    pulse: &PulseShape,
) -> Result<DelayTapChannel, ChannelError> {
    array.validate()?;
    ofdm.validate()?;
    pulse.validate()?;
    let m = array.m_antennas;
    let d_taps = ofdm.d_taps;
    let mut taps = CMatrix::zeros(d_taps, m);
    let Some(t0) = paths.min_delay() else {
        return Ok(DelayTapChannel { taps });
    };

    let sqrt_m = (m as f64).sqrt();
    let span = pulse.span_taps as f64;
    let mut kept = 0.0;
    let mut lost = 0.0;
    for p in &paths.paths {
        let rel = (p.delay_s - t0) / ofdm.sample_period_s;
        let a = array_response(p.aoa_rad, array);
        let w = p.gain.norm_sqr();
        let first = (rel - span).ceil().max(0.0) as usize;
        let last = (rel + span).floor() as usize;
        for d in first..=last {
            let pv = pulse.eval(d as f64 - rel);
            if d >= d_taps {
                lost += w * pv * pv;
                continue;
            }
            kept += w * pv * pv;
            if pv == 0.0 {
                continue;
            }
            let coef = p.gain * (sqrt_m * pv);
            let start = d * m;
            let row = &mut taps.as_mut_slice()[start..start + m];
            for (t, ai) in row.iter_mut().zip(&a) {
                *t += coef * ai;
            }
        }
    }
    let total = kept + lost;
    if total > 0.0 && lost > DELAY_OVERFLOW_TOL * total {
        return Err(ChannelError::DelayOverflow { taps: d_taps, fraction: lost / total });
    }
    Ok(DelayTapChannel { taps })
}

/// `h_k = Σ_{d<D} h_d e^{−j2πkd/K}`.
pub fn freq_channel(taps: &DelayTapChannel, ofdm: &OfdmConfig) -> Result<FreqChannel, ChannelError> {
    ofdm.validate()?;
    let k_sub = ofdm.k_subcarriers;
    let d_taps = taps.taps.rows();
    if d_taps != ofdm.d_taps {
        return Err(ChannelError::DimensionMismatch { expected: ofdm.d_taps, got: d_taps });
    }
    let m = taps.taps.cols();
    // Twiddles indexed by (k·d) mod K keep every phase exact to one rounding.
    let twiddle: Vec<Complex64> = (0..k_sub)
        .map(|i| Complex64::from_polar(1.0, -2.0 * PI * i as f64 / k_sub as f64))
        .collect();
    let mut h = CMatrix::zeros(k_sub, m);
    for d in 0..d_taps {
        let tap = taps.taps.row(d);
        if tap.iter().all(|x| x.is_zero()) {
            continue;
        }
        for k in 0..k_sub {
            let w = twiddle[(k * d) % k_sub];
            let row = &mut h.as_mut_slice()[k * m..(k + 1) * m];
            for (o, t) in row.iter_mut().zip(tap) {
                *o += t * w;
            }
        }
    }
    Ok(FreqChannel { h })
}

/// Subcarrier average `(1/K) Σ_k h_k h_kᴴ`.
pub fn covariance(h: &FreqChannel) -> Covariance {
    let k_sub = h.h.rows();
    let m = h.h.cols();
    let mut r = CMatrix::zeros(m, m);
    for k in 0..k_sub {
        let v = h.h.row(k);
        for i in 0..m {
            let vi = v[i];
            for j in i..m {
                r[(i, j)] += vi * v[j].conj();
            }
        }
    }
    let inv = 1.0 / k_sub.max(1) as f64;
    for i in 0..m {
        for j in i..m {
            let x = r[(i, j)] * inv;
            r[(i, j)] = x;
            r[(j, i)] = x.conj();
        }
        let d = r[(i, i)].re;
        r[(i, i)] = Complex64::new(d, 0.0);
    }
    Covariance { r }
}

/// Unitary DFT basis; column `m` is `(1/√M)·[e^{−j2πpm/M}]_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct DftBasis {
    pub u: CMatrix,
}

impl DftBasis {
    pub fn dim(&self) -> usize {
        self.u.rows()
    }
}

pub fn dft_basis(m: usize) -> Result<DftBasis, ChannelError> {
    if m < 2 {
        return Err(ChannelError::BadArray);
    }
    let scale = 1.0 / (m as f64).sqrt();
    let u = CMatrix::from_fn(m, m, |p, q| {
        Complex64::from_polar(scale, -2.0 * PI * ((p * q) % m) as f64 / m as f64)
    });
    Ok(DftBasis { u })
}

/// `g = Uᴴ h`.
pub fn virtual_channel(h_k: &[Complex64], basis: &DftBasis) -> Result<Vec<Complex64>, ChannelError> {
    if h_k.len() != basis.dim() {
        return Err(ChannelError::DimensionMismatch { expected: basis.dim(), got: h_k.len() });
    }
    Ok(basis.u.adjoint_mul_vec(h_k))
}

fn check_square(r: &CMatrix, basis: &DftBasis) -> Result<(), ChannelError> {
    if !r.is_square() || r.rows() != basis.dim() {
        return Err(ChannelError::DimensionMismatch { expected: basis.dim(), got: r.rows() });
    }
    let res = r.hermitian_residual();
    if res > HERMITIAN_TOL {
        return Err(ChannelError::NotHermitian(res));
    }
    Ok(())
}

/// `R_g = Uᴴ R U`.
pub fn to_virtual(r: &Covariance, basis: &DftBasis) -> Result<VirtualCovariance, ChannelError> {
    check_square(&r.r, basis)?;
    let r_g = basis.u.adjoint().matmul(&r.r).matmul(&basis.u);
    Ok(VirtualCovariance { r_g: r_g.hermitian_part() })
}

/// `R = U R_g Uᴴ`.
pub fn from_virtual(r_g: &VirtualCovariance, basis: &DftBasis) -> Result<Covariance, ChannelError> {
    check_square(&r_g.r_g, basis)?;
    let r = basis.u.matmul(&r_g.r_g).matmul(&basis.u.adjoint());
    Ok(Covariance { r: r.hermitian_part() })
}

/// Zero-valued D x M tap block, handy for hand-built test channels.
pub fn zero_taps(d_taps: usize, m: usize) -> DelayTapChannel {
    DelayTapChannel { taps: CMatrix::zeros(d_taps, m) }
}

/// Per-antenna tap energy `Σ_d ‖h_d‖²`.
pub fn tap_energy(taps: &DelayTapChannel) -> f64 {
    taps.taps.frobenius_sq()
}

/// `Σ_k ‖h_k‖²`.
pub fn freq_energy(h: &FreqChannel) -> f64 {
    h.h.frobenius_sq()
}
