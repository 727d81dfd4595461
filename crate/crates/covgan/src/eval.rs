//! NMSE evaluation, baselines and dataset-size sweeps.

use std::time::Instant;

use covgan_core::dataset::DatasetRecord;
use covgan_core::gan::{GanSpec, Generator, PredictError, Predictor, TrainConfig, ZPolicy};
use covgan_core::metrics::{knn_predict, mean, median, nmse, MeanBaseline, MetricsError};
use covgan_core::rng::{stream, Domain};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::DataBinding;
use crate::train::{run_training, DriverError, TrainOptions};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error("training size {size} exceeds the {available} available records")]
    SizeTooLarge { size: usize, available: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Train(#[from] Box<DriverError>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmseSummary {
    pub per_sample: Vec<f64>,
    pub mean: f64,
    pub median: f64,
}

impl NmseSummary {
    pub fn from_values(per_sample: Vec<f64>) -> Result<Self, EvalError> {
        if per_sample.is_empty() {
            return Err(EvalError::Empty);
        }
        Ok(Self { mean: mean(&per_sample), median: median(&per_sample), per_sample })
    }
}

/// Per-sample NMSE of the generator (fixed-zero latent) on `records`.
pub fn model_nmse(generator: &Generator<f32>, records: &[DatasetRecord], norm_cov: f64) -> Result<NmseSummary, EvalError> {
    policy_nmse(generator, records, norm_cov, ZPolicy::FixedZero)
}

pub fn policy_nmse(
    generator: &Generator<f32>,
    records: &[DatasetRecord],
    norm_cov: f64,
    policy: ZPolicy,
) -> Result<NmseSummary, EvalError> {
    let sigs: Vec<&[f32]> = records.iter().map(|r| r.signature.as_slice()).collect();
    let preds = Predictor::new(generator, norm_cov).with_policy(policy).predict(&sigs, 0)?;
    let values = preds
        .iter()
        .zip(records)
        .map(|(p, r)| nmse(p, &r.image.to_virtual(norm_cov)))
        .collect::<Result<Vec<_>, _>>()?;
    NmseSummary::from_values(values)
}

pub fn mean_baseline_nmse(train: &[DatasetRecord], test: &[DatasetRecord], norm_cov: f64) -> Result<NmseSummary, EvalError> {
    let pred = MeanBaseline::fit(train)?.predict(norm_cov);
    let values = test.iter().map(|r| nmse(&pred, &r.image.to_virtual(norm_cov))).collect::<Result<Vec<_>, _>>()?;
    NmseSummary::from_values(values)
}

pub fn knn_baseline_nmse(
    train: &[DatasetRecord],
    test: &[DatasetRecord],
    k: usize,
    norm_cov: f64,
) -> Result<NmseSummary, EvalError> {
    let values = test
        .iter()
        .map(|r| nmse(&knn_predict(train, &r.signature, k, norm_cov)?, &r.image.to_virtual(norm_cov)))
        .collect::<Result<Vec<_>, _>>()?;
    NmseSummary::from_values(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePoint {
    pub size: usize,
    pub seeds: Vec<u64>,
    /// Mean test NMSE per seed.
    pub per_seed: Vec<f64>,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: Option<NmseSummary>,
    pub baseline_mean: NmseSummary,
    pub baseline_knn: Option<NmseSummary>,
    pub knn_k: usize,
    pub sizes: Vec<SizePoint>,
    /// Whether the median NMSE never increases with size (reported, not
    /// enforced).
    pub curve_monotone: Option<bool>,
    pub runtime_s: f64,
}

/// First `size` records of a seeded permutation of `train`; smaller sizes are
/// prefixes of larger ones under one seed.
pub fn subsample(train: &[DatasetRecord], size: usize, seed: u64) -> Result<Vec<DatasetRecord>, EvalError> {
    if size > train.len() {
        return Err(EvalError::SizeTooLarge { size, available: train.len() });
    }
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut stream(seed, Domain::Sample, u64::MAX));
    Ok(idx[..size].iter().map(|&i| train[i].clone()).collect())
}

/// Trains one model per (size, seed) and reports mean test NMSE per seed and
/// the median across seeds. `seed` replaces `cfg.seed` for each run.
#[allow(clippy::too_many_arguments)]
pub fn curve_nmse_vs_size(
    train: &[DatasetRecord],
    test: &[DatasetRecord],
    sizes: &[usize],
    spec: GanSpec,
    cfg: TrainConfig,
    seeds: &[u64],
    data: &DataBinding,
    mut progress: impl FnMut(usize, u64, f64),
) -> Result<Vec<SizePoint>, EvalError> {
    if let Some(&size) = sizes.iter().find(|&&s| s > train.len()) {
        return Err(EvalError::SizeTooLarge { size, available: train.len() });
    }
    let opts = TrainOptions { data: data.clone(), checkpoint_every: None, checkpoint_path: None, validate_every: 0 };
    let mut points = Vec::new();
    for &size in sizes {
        let mut per_seed = Vec::new();
        for &seed in seeds {
            let sub = subsample(train, size, seed)?;
            let run_cfg = TrainConfig { seed, ..cfg };
            let (trainer, _) = run_training(&sub, &[], spec, run_cfg, &opts, |_| {}).map_err(Box::new)?;
            let v = model_nmse(&trainer.gan.generator, test, data.norm_cov)?.mean;
            progress(size, seed, v);
            per_seed.push(v);
        }
        points.push(SizePoint { size, seeds: seeds.to_vec(), median: median(&per_seed), per_seed });
    }
    Ok(points)
}

pub fn is_non_increasing(points: &[SizePoint]) -> bool {
    let mut sorted: Vec<&SizePoint> = points.iter().collect();
    sorted.sort_by_key(|p| p.size);
    sorted.windows(2).all(|w| w[1].median <= w[0].median)
}

/// Timer helper for reports.
pub struct Stopwatch(Instant);

impl Stopwatch {
    pub fn start() -> Self {
        Self(Instant::now())
    }

    pub fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
