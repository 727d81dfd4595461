//! Finite-difference verification of the analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;

use super::loss::{bce_logits, generator_logits, GeneratorLoss};
use super::model::{Gan, GanSpec, ModelError};
use super::train::sample_latent;
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub spec: GanSpec,
    pub batch: usize,
    /// Fraction of coordinates sampled per loss.
    pub sample_fraction: f64,
    /// Lower bound on the number of sampled coordinates per loss.
    pub min_samples: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Fraction of samples that must be within `tolerance`.
    pub pass_fraction: f64,
    pub seed: u64,
    /// Use all-zero real images.
    pub zero_images: bool,
    /// Multiplier applied to the initial weights. Activations of the default
    /// initialization sit within a few `step` of the rectifier kinks, where
    /// central differences are meaningless.
    pub init_scale: f64,
    /// Test hook: breaks the leaky-ReLU backward slope of the discriminator.
    pub fault_slope: Option<f64>,
}

impl GradCheckConfig {
    /// `M = 8`, `Z = 4` with narrow layers.
    pub fn tiny() -> Self {
        Self {
            spec: GanSpec { g_base: 4, d_base: 4, cond_dim: 4, ..GanSpec::new(8, 1, 3, 4) },
            batch: 3,
            sample_fraction: 0.01,
            min_samples: 50,
            step: 1e-4,
            tolerance: 1e-3,
            pass_fraction: 0.99,
            seed: 0,
            zero_images: false,
            init_scale: 10.0,
            fault_slope: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    LossD,
    LossG,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub target: Target,
    /// Parameter name, or `"input"` for a real-image pixel.
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
    pub passed: usize,
    pub pass_rate: f64,
    pub max_rel_error: f64,
    pub all_finite: bool,
    pub pass: bool,
}

/// `|a − n| / max(|a|, |n|, 1e-7)`.
pub fn relative_error(a: f64, n: f64) -> f64 {
    let d = libm::fabs(a - n);
    if d == 0.0 {
        return 0.0;
    }
    d / libm::fabs(a).max(libm::fabs(n)).max(1e-7)
}

struct Fixture {
    real: Vec<f64>,
    cond: Vec<f64>,
    z: Vec<f64>,
    batch: usize,
}

fn loss_d(gan: &mut Gan<f64>, fx: &Fixture, real: &[f64]) -> Result<f64, ModelError> {
    let fake = gan.generator.forward(&fx.z, &fx.cond, fx.batch)?;
    let lr = bce_logits(&gan.discriminator.forward(real, &fx.cond, fx.batch)?, true).0;
    let lf = bce_logits(&gan.discriminator.forward(&fake, &fx.cond, fx.batch)?, false).0;
    Ok(lr + lf)
}

fn loss_g(gan: &mut Gan<f64>, fx: &Fixture) -> Result<f64, ModelError> {
    let fake = gan.generator.forward(&fx.z, &fx.cond, fx.batch)?;
    let logits = gan.discriminator.forward(&fake, &fx.cond, fx.batch)?;
    Ok(generator_logits(&logits, GeneratorLoss::NonSaturating).0)
}

/// Returns analytic gradients of `loss_d` (discriminator params) and the
/// real-image gradient, in the order of `discriminator.params()`.
fn grads_d(gan: &mut Gan<f64>, fx: &Fixture) -> Result<(Vec<Vec<f64>>, Vec<f64>), ModelError> {
    gan.zero_grad();
    let fake = gan.generator.forward(&fx.z, &fx.cond, fx.batch)?;
    let logits = gan.discriminator.forward(&fx.real, &fx.cond, fx.batch)?;
    let d_input = gan.discriminator.backward(&bce_logits(&logits, true).1);
    let logits = gan.discriminator.forward(&fake, &fx.cond, fx.batch)?;
    gan.discriminator.backward(&bce_logits(&logits, false).1);
    Ok((gan.discriminator.params().iter().map(|p| p.grad.clone()).collect(), d_input))
}

/// Analytic gradients of `loss_g` for every parameter in `gan.params()` order.
fn grads_g(gan: &mut Gan<f64>, fx: &Fixture) -> Result<Vec<Vec<f64>>, ModelError> {
    gan.zero_grad();
    let fake = gan.generator.forward(&fx.z, &fx.cond, fx.batch)?;
    let logits = gan.discriminator.forward(&fake, &fx.cond, fx.batch)?;
    let d_img = gan.discriminator.backward(&generator_logits(&logits, GeneratorLoss::NonSaturating).1);
    gan.generator.backward(&d_img);
    Ok(gan.params().iter().map(|p| p.grad.clone()).collect())
}

fn pick<R: Rng + ?Sized>(rng: &mut R, total: usize, cfg: &GradCheckConfig) -> Vec<usize> {
    let want = libm::ceil(cfg.sample_fraction * total as f64) as usize;
    let n = want.max(cfg.min_samples).min(total);
    let mut idx = sample(rng, total, n).into_vec();
    idx.sort_unstable();
    idx
}

/// Maps a flat coordinate to (tensor, element) given tensor lengths.
fn locate(lens: &[usize], mut flat: usize) -> (usize, usize) {
    for (t, &l) in lens.iter().enumerate() {
        if flat < l {
            return (t, flat);
        }
        flat -= l;
    }
    unreachable!("coordinate past the last tensor")
}

pub fn gradient_check(cfg: &GradCheckConfig) -> Result<GradCheckReport, ModelError> {
    let spec = cfg.spec;
    let b = cfg.batch;
    let mut gan: Gan<f64> = Gan::new(spec, &mut stream(cfg.seed, Domain::Init, 0))?;
    gan.discriminator.fault_slope = cfg.fault_slope;
    for p in gan.params_mut() {
        p.value.iter_mut().for_each(|v| *v *= cfg.init_scale);
    }
    let mut rng = stream(cfg.seed, Domain::Sample, 0);
    let real: Vec<f64> = if cfg.zero_images {
        alloc::vec![0.0; spec.image_len() * b]
    } else {
        (0..spec.image_len() * b).map(|_| rng.random_range(-1.0..1.0)).collect()
    };
    let cond = (0..spec.cond_width() * b).map(|_| rng.random_range(-1.0..1.0)).collect();
    let z = sample_latent(&mut rng, spec.z_dim * b);
    let fx = Fixture { real, cond, z, batch: b };
    let h = cfg.step;
    let mut samples = Vec::new();

    let (gd, g_input) = grads_d(&mut gan.clone(), &fx)?;
    let g_all = grads_g(&mut gan.clone(), &fx)?;
    let all_finite = gd.iter().chain(&g_all).flatten().chain(&g_input).all(|v| v.is_finite());

    let n_gen = gan.generator.params().len();
    let d_lens: Vec<usize> = gan.discriminator.params().iter().map(|p| p.len()).collect();
    for flat in pick(&mut rng, d_lens.iter().sum(), cfg) {
        let (t, i) = locate(&d_lens, flat);
        let probe = |delta: f64| -> Result<f64, ModelError> {
            let mut g = gan.clone();
            g.discriminator.params_mut()[t].value[i] += delta;
            loss_d(&mut g, &fx, &fx.real)
        };
        let numeric = (probe(h)? - probe(-h)?) / (2.0 * h);
        let analytic = gd[t][i];
        let tensor = gan.discriminator.params()[t].name.clone();
        samples.push(GradSample { target: Target::LossD, tensor, index: i, analytic, numeric, rel_error: relative_error(analytic, numeric) });
    }

    for i in pick(&mut rng, fx.real.len(), cfg) {
        let probe = |delta: f64| -> Result<f64, ModelError> {
            let mut img = fx.real.clone();
            img[i] += delta;
            loss_d(&mut gan.clone(), &fx, &img)
        };
        let numeric = (probe(h)? - probe(-h)?) / (2.0 * h);
        let analytic = g_input[i];
        samples.push(GradSample {
            target: Target::LossD,
            tensor: String::from("input"),
            index: i,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }

    let lens: Vec<usize> = gan.params().iter().map(|p| p.len()).collect();
    for flat in pick(&mut rng, lens.iter().sum(), cfg) {
        let (t, i) = locate(&lens, flat);
        let probe = |delta: f64| -> Result<f64, ModelError> {
            let mut g = gan.clone();
            if t < n_gen {
                g.generator.params_mut()[t].value[i] += delta;
            } else {
                g.discriminator.params_mut()[t - n_gen].value[i] += delta;
            }
            loss_g(&mut g, &fx)
        };
        let numeric = (probe(h)? - probe(-h)?) / (2.0 * h);
        let analytic = g_all[t][i];
        let tensor = gan.params()[t].name.clone();
        samples.push(GradSample { target: Target::LossG, tensor, index: i, analytic, numeric, rel_error: relative_error(analytic, numeric) });
    }

    let passed = samples.iter().filter(|s| s.rel_error < cfg.tolerance).count();
    let pass_rate = passed as f64 / samples.len().max(1) as f64;
    let max_rel_error = samples.iter().fold(0.0f64, |a, s| a.max(s.rel_error));
    Ok(GradCheckReport {
        pass: all_finite && pass_rate >= cfg.pass_fraction,
        samples,
        passed,
        pass_rate,
        max_rel_error,
        all_finite,
    })
}
