//! Omni-combined uplink pilot reception and the multi-BS signature.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use num_traits::Zero;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::channel::FreqChannel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PilotError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("pilot symbols must have unit modulus")]
    NonUnitPilot,
    #[error("SNR is undefined for a zero channel")]
    ZeroChannelSnr,
    #[error("ragged signature input: basestation {index} has {got} samples, expected {expected}")]
    Ragged { index: usize, expected: usize, got: usize },
    #[error("signature needs at least one basestation")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotConfig {
    pub symbols: Vec<Complex64>,
    /// `None` means noiseless reception.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl PilotConfig {
    /// All-ones pilots, noiseless.
    pub fn unit(k_subcarriers: usize) -> Self {
        Self {
            symbols: vec![Complex64::new(1.0, 0.0); k_subcarriers],
            snr_db: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PilotError> {
        if self.symbols.iter().any(|s| (s.norm() - 1.0).abs() > 1e-12) {
            return Err(PilotError::NonUnitPilot);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    pub w: Vec<Complex64>,
}

/// `e₁`: only the first receive element is active.
pub fn omni_combiner(m: usize) -> Combiner {
    let mut w = vec![Complex64::zero(); m.max(1)];
    w[0] = Complex64::new(1.0, 0.0);
    Combiner { w }
}

/// `y_k = wᵀ h_k s_k + v_k`, with `v_k` circular complex Gaussian whose
/// variance makes `mean_k |wᵀ h_k s_k|² / σ²` equal the configured SNR.
pub fn receive<R: Rng + ?Sized>(
    h: &FreqChannel,
    w: &Combiner,
    cfg: &PilotConfig,
    rng: &mut R,
) -> Result<Vec<Complex64>, PilotError> {
    let k_sub = h.h.rows();
    if h.h.cols() != w.w.len() {
        return Err(PilotError::DimensionMismatch { expected: h.h.cols(), got: w.w.len() });
    }
    if cfg.symbols.len() != k_sub {
        return Err(PilotError::DimensionMismatch { expected: k_sub, got: cfg.symbols.len() });
    }
    cfg.validate()?;
    let mut y: Vec<Complex64> = (0..k_sub)
        .map(|k| {
            let hk = h.subcarrier(k);
            let wh: Complex64 = w.w.iter().zip(hk).map(|(wi, hi)| wi * hi).sum();
            wh * cfg.symbols[k]
        })
        .collect();

    if let Some(snr_db) = cfg.snr_db {
        let signal = y.iter().map(|v| v.norm_sqr()).sum::<f64>() / k_sub.max(1) as f64;
        if signal == 0.0 {
            return Err(PilotError::ZeroChannelSnr);
        }
        let sigma2 = signal / libm::pow(10.0, snr_db / 10.0);
        let std = libm::sqrt(sigma2 / 2.0);
        for v in &mut y {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += Complex64::new(re * std, im * std);
        }
    }
    Ok(y)
}

/// Concatenated pilot observations of all basestations, BS-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub n_bs: usize,
    pub k_sub: usize,
    pub y_complex: Vec<Complex64>,
}

impl Signature {
    /// `[Re(y); Im(y)]`, length `2·N·K`.
    pub fn to_real(&self) -> Vec<f64> {
        self.y_complex
            .iter()
            .map(|v| v.re)
            .chain(self.y_complex.iter().map(|v| v.im))
            .collect()
    }

    pub fn from_real(n_bs: usize, k_sub: usize, y_real: &[f64]) -> Result<Self, PilotError> {
        let n = n_bs * k_sub;
        if y_real.len() != 2 * n {
            return Err(PilotError::DimensionMismatch { expected: 2 * n, got: y_real.len() });
        }
        let y_complex = (0..n).map(|i| Complex64::new(y_real[i], y_real[n + i])).collect();
        Ok(Self { n_bs, k_sub, y_complex })
    }

    pub fn real_width(&self) -> usize {
        2 * self.y_complex.len()
    }
}

pub fn concat_signature(per_bs: &[Vec<Complex64>]) -> Result<Signature, PilotError> {
    let first = per_bs.first().ok_or(PilotError::Empty)?;
    let k_sub = first.len();
    let mut y_complex = Vec::with_capacity(per_bs.len() * k_sub);
    for (index, v) in per_bs.iter().enumerate() {
        if v.len() != k_sub {
            return Err(PilotError::Ragged { index, expected: k_sub, got: v.len() });
        }
        y_complex.extend_from_slice(v);
    }
    Ok(Signature { n_bs: per_bs.len(), k_sub, y_complex })
}
