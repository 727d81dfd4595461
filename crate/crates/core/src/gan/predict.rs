//! Covariance prediction from signatures with a trained generator.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use super::model::{Generator, ModelError};
use super::real::Real;
use super::train::{gather_conditions, sample_latent};
use crate::channel::VirtualCovariance;
use crate::dataset::CovImage;
use crate::linalg::project_psd;
use crate::rng::{stream, Domain};

/// How the latent input is chosen at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZPolicy {
    #[default]
    FixedZero,
    /// One normal draw per sample from the `Sample` stream of `seed`,
    /// indexed by the sample's position.
    Seeded { seed: u64 },
    /// Mean of the normalized outputs for `n` seeded draws.
    Average { n: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictError {
    #[error("covariance normalization constant must be positive and finite, got {0}")]
    BadNorm(f64),
    #[error("average-of-n policy needs n >= 1")]
    ZeroDraws,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Inference batch size; outputs do not depend on it.
const CHUNK: usize = 128;

#[derive(Debug, Clone, Copy)]
pub struct Predictor<'a, T> {
    pub generator: &'a Generator<T>,
    pub norm_cov: f64,
    pub policy: ZPolicy,
    pub psd: bool,
}

impl<'a, T: Real> Predictor<'a, T> {
    pub fn new(generator: &'a Generator<T>, norm_cov: f64) -> Self {
        Self { generator, norm_cov, policy: ZPolicy::FixedZero, psd: false }
    }

    pub fn with_policy(mut self, policy: ZPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_psd(mut self, psd: bool) -> Self {
        self.psd = psd;
        self
    }

    fn latent(&self, draw: usize, first: u64, batch: usize) -> Vec<T> {
        let z_dim = self.generator.spec().z_dim;
        let seed = match self.policy {
            ZPolicy::FixedZero => return vec![T::zero(); z_dim * batch],
            ZPolicy::Seeded { seed } | ZPolicy::Average { seed, .. } => seed,
        };
        // Per-sample streams keep each draw independent of batching.
        let mut z = vec![T::zero(); z_dim * batch];
        for j in 0..batch {
            let stream_index = ((first + j as u64) << 8) | draw as u64;
            let col: Vec<T> = sample_latent(&mut stream(seed, Domain::Sample, stream_index), z_dim);
            for (f, v) in col.into_iter().enumerate() {
                z[f * batch + j] = v;
            }
        }
        z
    }

    /// Normalized `M x M x 2` images for normalized signatures; `first_index`
    /// is the sample position of `signatures[0]` for seeded policies.
    pub fn images(&self, signatures: &[&[f32]], first_index: u64) -> Result<Vec<CovImage>, PredictError> {
        let draws = match self.policy {
            ZPolicy::FixedZero | ZPolicy::Seeded { .. } => 1,
            ZPolicy::Average { n: 0, .. } => return Err(PredictError::ZeroDraws),
            ZPolicy::Average { n, .. } => n,
        };
        self.images_for(signatures, first_index, 0..draws)
    }

    /// Images for the single latent draw `draw` of the policy's seed, one of
    /// the members averaged by [`ZPolicy::Average`].
    pub fn draw_images(&self, signatures: &[&[f32]], first_index: u64, draw: usize) -> Result<Vec<CovImage>, PredictError> {
        self.images_for(signatures, first_index, draw..draw + 1)
    }

    fn images_for(
        &self,
        signatures: &[&[f32]],
        first_index: u64,
        draws: core::ops::Range<usize>,
    ) -> Result<Vec<CovImage>, PredictError> {
        let count = draws.len();
        let m = self.generator.spec().m;
        let plane = m * m;
        let mut out = Vec::with_capacity(signatures.len());
        for (c, chunk) in signatures.chunks(CHUNK).enumerate() {
            let b = chunk.len();
            let first = first_index + (c * CHUNK) as u64;
            let cond: Vec<T> = gather_conditions(chunk);
            let mut acc = vec![0.0f64; 2 * plane * b];
            for draw in draws.clone() {
                let img = self.generator.infer(&self.latent(draw, first, b), &cond, b)?;
                for (a, v) in acc.iter_mut().zip(&img) {
                    *a += v.to_f64().unwrap_or(f64::NAN);
                }
            }
            let inv = 1.0 / count as f64;
            for j in 0..b {
                let mut pixels = Vec::with_capacity(2 * plane);
                for p in 0..2 {
                    let src = &acc[(p * b + j) * plane..(p * b + j + 1) * plane];
                    pixels.extend(src.iter().map(|&v| (v * inv) as f32));
                }
                out.push(CovImage { m, pixels });
            }
        }
        Ok(out)
    }

    /// De-normalized, Hermitian-symmetrized covariance estimates.
    pub fn predict(&self, signatures: &[&[f32]], first_index: u64) -> Result<Vec<VirtualCovariance>, PredictError> {
        if !(self.norm_cov > 0.0 && self.norm_cov.is_finite()) {
            return Err(PredictError::BadNorm(self.norm_cov));
        }
        let images = self.images(signatures, first_index)?;
        Ok(self.finish(&images))
    }

    /// De-normalizes and symmetrizes normalized images.
    pub fn finish(&self, images: &[CovImage]) -> Vec<VirtualCovariance> {
        images
            .iter()
            .map(|img| {
                let r = img.to_matrix(self.norm_cov).hermitian_part();
                VirtualCovariance { r_g: if self.psd { project_psd(&r) } else { r } }
            })
            .collect()
    }

    pub fn predict_one(&self, signature: &[f32], index: u64) -> Result<VirtualCovariance, PredictError> {
        Ok(self.predict(&[signature], index)?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::model::GanSpec;
    use crate::linalg::is_psd;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn generator() -> Generator<f32> {
        let spec = GanSpec { g_base: 4, d_base: 4, cond_dim: 4, ..GanSpec::new(8, 1, 2, 3) };
        Generator::new(spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    fn sigs() -> Vec<Vec<f32>> {
        (0..5).map(|i| vec![0.1 * i as f32, 0.5, -0.3, 0.2]).collect()
    }

    #[test]
    fn fixed_zero_is_deterministic_and_hermitian() {
        let g = generator();
        let s = sigs();
        let refs: Vec<&[f32]> = s.iter().map(|v| v.as_slice()).collect();
        let p = Predictor::new(&g, 2.5);
        let a = p.predict(&refs, 0).unwrap();
        let b = p.predict(&refs, 7).unwrap();
        assert_eq!(a, b);
        for r in &a {
            assert!(r.r_g.hermitian_residual() < 1e-12);
        }
        assert_eq!(p.predict_one(refs[3], 3).unwrap(), a[3]);
    }

    #[test]
    fn seeded_policy_is_batch_independent() {
        let g = generator();
        let s = sigs();
        let refs: Vec<&[f32]> = s.iter().map(|v| v.as_slice()).collect();
        let p = Predictor::new(&g, 1.0).with_policy(ZPolicy::Seeded { seed: 9 });
        let all = p.predict(&refs, 0).unwrap();
        assert_eq!(p.predict(&refs[2..], 2).unwrap()[0], all[2]);
        assert_ne!(all[0], Predictor::new(&g, 1.0).predict(&refs, 0).unwrap()[0]);
    }

    #[test]
    fn psd_flag_projects() {
        let g = generator();
        let s = sigs();
        let p = Predictor::new(&g, 1.0).with_psd(true);
        let r = p.predict_one(&s[1], 0).unwrap();
        assert!(is_psd(&r.r_g, 1e-8));
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = generator();
        let s = sigs();
        assert_eq!(Predictor::new(&g, 0.0).predict(&[&s[0]], 0), Err(PredictError::BadNorm(0.0)));
        let p = Predictor::new(&g, 1.0).with_policy(ZPolicy::Average { n: 0, seed: 1 });
        assert_eq!(p.predict(&[&s[0]], 0), Err(PredictError::ZeroDraws));
        let short = [0.0f32; 3];
        assert!(matches!(Predictor::new(&g, 1.0).predict(&[&short], 0), Err(PredictError::Model(_))));
    }
}
