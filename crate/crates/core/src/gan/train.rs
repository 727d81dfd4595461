//! Alternating discriminator/generator updates over mini-batches.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use super::adam::{Adam, AdamConfig};
use super::loss::{bce_logits, generator_logits, GeneratorLoss};
use super::model::{Gan, ModelError};
use super::real::Real;
use crate::dataset::DatasetRecord;
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    BadConfig(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("record {index} does not match the model: {what}")]
    RecordShape { index: usize, what: &'static str },
    #[error("non-finite {what} at epoch {epoch}, step {step}; update not applied")]
    NonFinite { what: &'static str, epoch: usize, step: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub generator_loss: GeneratorLoss,
    /// Weight of an optional image reconstruction term added to the generator
    /// objective; 0 trains on the adversarial loss alone.
    pub recon_weight: f64,
    pub recon_kind: ReconKind,
}

/// Form of the reconstruction term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ReconKind {
    /// Mean squared pixel error over the batch.
    #[default]
    Squared,
    /// Batch mean of per-sample `||fake - real||^2 / ||real||^2`.
    Relative,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 256,
            epochs: 200,
            seed: 0,
            generator_loss: GeneratorLoss::NonSaturating,
            recon_weight: 0.0,
            recon_kind: ReconKind::Squared,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::BadConfig("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::BadConfig("Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(TrainError::BadConfig("Adam epsilon must be positive"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be at least 1"));
        }
        if !(self.recon_weight >= 0.0 && self.recon_weight.is_finite()) {
            return Err(TrainError::BadConfig("reconstruction weight must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    /// Alternation rounds in one epoch over `n` records.
    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// Sample-weighted means over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub batches: usize,
}

/// A mini-batch in the networks' channel-major layout.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub size: usize,
    /// `[2NK][B]`.
    pub cond: Vec<T>,
    /// `[2][B][M][M]`.
    pub images: Vec<T>,
}

impl<T: Real> Batch<T> {
    pub fn gather(records: &[DatasetRecord], indices: &[usize]) -> Self {
        let b = indices.len();
        let sig_w = records[indices[0]].signature.len();
        let plane = records[indices[0]].image.m * records[indices[0]].image.m;
        let mut cond = vec![T::zero(); sig_w * b];
        let mut images = vec![T::zero(); 2 * plane * b];
        for (j, &i) in indices.iter().enumerate() {
            let r = &records[i];
            for (f, &v) in r.signature.iter().enumerate() {
                cond[f * b + j] = T::lit(v as f64);
            }
            for p in 0..2 {
                let dst = &mut images[(p * b + j) * plane..(p * b + j + 1) * plane];
                for (d, &v) in dst.iter_mut().zip(&r.image.pixels[p * plane..(p + 1) * plane]) {
                    *d = T::lit(v as f64);
                }
            }
        }
        Self { size: b, cond, images }
    }
}

/// Signature-only batch for inference: `[2NK][B]`.
pub fn gather_conditions<T: Real>(signatures: &[&[f32]]) -> Vec<T> {
    let b = signatures.len();
    let w = signatures.first().map_or(0, |s| s.len());
    let mut cond = vec![T::zero(); w * b];
    for (j, s) in signatures.iter().enumerate() {
        for (f, &v) in s.iter().enumerate() {
            cond[f * b + j] = T::lit(v as f64);
        }
    }
    cond
}

pub fn sample_latent<T: Real, R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<T> {
    (0..len)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::lit(z)
        })
        .collect()
}

fn all_finite<T: Real>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Owns the model and both optimizer states.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub gan: Gan<T>,
    pub cfg: TrainConfig,
    opt_g: Adam<T>,
    opt_d: Adam<T>,
    epoch: usize,
    step: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(gan: Gan<T>, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        Ok(Self { gan, cfg, opt_g: Adam::new(cfg.adam()), opt_d: Adam::new(cfg.adam()), epoch: 0, step: 0 })
    }

    /// Builds a freshly initialized model from the `Init` stream of the seed.
    pub fn init(spec: super::model::GanSpec, cfg: TrainConfig) -> Result<Self, TrainError> {
        let mut rng = stream(cfg.seed, Domain::Init, 0);
        Self::new(Gan::new(spec, &mut rng)?, cfg)
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn into_gan(self) -> Gan<T> {
        self.gan
    }

    fn check_records(&self, records: &[DatasetRecord]) -> Result<(), TrainError> {
        if records.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let spec = self.gan.spec();
        for (index, r) in records.iter().enumerate() {
            if r.signature.len() != spec.cond_width() {
                return Err(TrainError::RecordShape { index, what: "signature width" });
            }
            if r.image.m != spec.m || r.image.pixels.len() != spec.image_len() {
                return Err(TrainError::RecordShape { index, what: "image size" });
            }
        }
        Ok(())
    }

    /// One pass over `records` in a seeded shuffled order.
    pub fn train_epoch(&mut self, records: &[DatasetRecord]) -> Result<EpochStats, TrainError> {
        self.check_records(records)?;
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut stream(self.cfg.seed, Domain::Shuffle, self.epoch as u64));
        let (mut sum_d, mut sum_g) = (0.0, 0.0);
        let mut batches = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch = Batch::gather(records, chunk);
            let (ld, lg) = self.train_step(&batch)?;
            sum_d += ld * chunk.len() as f64;
            sum_g += lg * chunk.len() as f64;
            batches += 1;
        }
        let n = records.len() as f64;
        let stats = EpochStats { epoch: self.epoch, loss_d: sum_d / n, loss_g: sum_g / n, batches };
        self.epoch += 1;
        Ok(stats)
    }

    /// One discriminator update followed by one generator update. Returns the
    /// batch discriminator and generator losses.
    pub fn train_step(&mut self, batch: &Batch<T>) -> Result<(f64, f64), TrainError> {
        let b = batch.size;
        let spec = *self.gan.spec();
        let mut zr = stream(self.cfg.seed, Domain::Latent, self.step);
        let z: Vec<T> = sample_latent(&mut zr, spec.z_dim * b);
        let Gan { generator, discriminator } = &mut self.gan;

        let fake = generator.forward(&z, &batch.cond, b)?;

        for p in discriminator.params_mut() {
            p.zero_grad();
        }
        let real_logits = discriminator.forward(&batch.images, &batch.cond, b)?;
        let (loss_real, d_real) = bce_logits(&real_logits, true);
        discriminator.backward(&d_real);
        let fake_logits = discriminator.forward(&fake, &batch.cond, b)?;
        let (loss_fake, d_fake) = bce_logits(&fake_logits, false);
        discriminator.backward(&d_fake);
        let loss_d = loss_real + loss_fake;
        if !loss_d.is_finite() || discriminator.params().iter().any(|p| !all_finite(&p.grad)) {
            return Err(TrainError::NonFinite { what: "discriminator loss", epoch: self.epoch, step: self.step });
        }
        self.opt_d.step(&mut discriminator.params_mut());

        for p in discriminator.params_mut() {
            p.zero_grad();
        }
        for p in generator.params_mut() {
            p.zero_grad();
        }
        let logits = discriminator.forward(&fake, &batch.cond, b)?;
        let (mut loss_g, d_logits) = generator_logits(&logits, self.cfg.generator_loss);
        let mut d_img = discriminator.backward(&d_logits);
        if self.cfg.recon_weight > 0.0 {
            loss_g += recon_term(&fake, &batch.images, b, self.cfg.recon_weight, self.cfg.recon_kind, &mut d_img);
        }
        generator.backward(&d_img);
        if !loss_g.is_finite() || generator.params().iter().any(|p| !all_finite(&p.grad)) {
            return Err(TrainError::NonFinite { what: "generator loss", epoch: self.epoch, step: self.step });
        }
        self.opt_g.step(&mut generator.params_mut());
        self.step += 1;
        Ok((loss_d, loss_g))
    }
}

/// Adds the reconstruction gradient into `d_img` and returns the term's value.
/// Images are `[2][B][plane]`.
fn recon_term<T: Real>(fake: &[T], real: &[T], b: usize, w: f64, kind: ReconKind, d_img: &mut [T]) -> f64 {
    let plane = fake.len() / (2 * b);
    // per-sample divisor
    let denom: Vec<f64> = match kind {
        ReconKind::Squared => vec![fake.len() as f64; b],
        ReconKind::Relative => (0..b)
            .map(|j| {
                let e: f64 = (0..2)
                    .flat_map(|p| &real[(p * b + j) * plane..(p * b + j + 1) * plane])
                    .map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2))
                    .sum();
                b as f64 * e.max(1e-30)
            })
            .collect(),
    };
    let mut total = 0.0;
    for (idx, ((d, &f), &r)) in d_img.iter_mut().zip(fake).zip(real).enumerate() {
        let j = (idx / plane) % b;
        let e = f - r;
        total += (e * e).to_f64().unwrap_or(f64::NAN) / denom[j];
        *d += T::lit(2.0 * w / denom[j]) * e;
    }
    w * total
}
