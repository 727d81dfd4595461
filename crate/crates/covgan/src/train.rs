//! Training driver: per-epoch logging, validation and periodic checkpoints.

use std::path::PathBuf;
use std::time::Instant;

use covgan_core::dataset::DatasetRecord;
use covgan_core::gan::{GanSpec, TrainConfig, TrainError, Trainer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{write_checkpoint, Checkpoint, CheckpointError, DataBinding};
use crate::eval::model_nmse;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{source}; last good checkpoint: {}", last_checkpoint.as_ref().map_or("none".to_string(), |p| p.display().to_string()))]
    Aborted { source: TrainError, last_checkpoint: Option<PathBuf>, log: TrainLog },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("validation failed: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    /// Alternation rounds in the epoch.
    pub batches: usize,
    pub val_nmse: Option<f64>,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub data: DataBinding,
    /// Write a checkpoint after every `k` epochs (and after the last).
    pub checkpoint_every: Option<usize>,
    pub checkpoint_path: Option<PathBuf>,
    /// Evaluate validation NMSE every `k` epochs; 0 disables.
    pub validate_every: usize,
}

pub fn checkpoint_of(trainer: &Trainer<f32>, data: &DataBinding) -> Checkpoint {
    Checkpoint {
        spec: *trainer.gan.spec(),
        train: trainer.cfg,
        data: data.clone(),
        epochs_done: trainer.epochs_done(),
        gan: trainer.gan.clone(),
    }
}

/// Trains from a fresh seeded initialization. `on_epoch` sees every log
/// entry as it is produced.
pub fn run_training(
    train: &[DatasetRecord],
    val: &[DatasetRecord],
    spec: GanSpec,
    cfg: TrainConfig,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&LogEntry),
) -> Result<(Trainer<f32>, TrainLog), DriverError> {
    let mut trainer: Trainer<f32> = Trainer::init(spec, cfg)?;
    let mut log = TrainLog::default();
    let mut last_checkpoint = None;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let stats = match trainer.train_epoch(train) {
            Ok(s) => s,
            Err(e @ TrainError::NonFinite { .. }) => {
                return Err(DriverError::Aborted { source: e, last_checkpoint, log });
            }
            Err(e) => return Err(e.into()),
        };
        let do_val = opts.validate_every > 0 && !val.is_empty() && ((epoch + 1) % opts.validate_every == 0 || epoch + 1 == cfg.epochs);
        let val_nmse = if do_val {
            Some(model_nmse(&trainer.gan.generator, val, opts.data.norm_cov).map_err(|e| DriverError::Validation(e.to_string()))?.mean)
        } else {
            None
        };
        let entry = LogEntry { epoch, loss_d: stats.loss_d, loss_g: stats.loss_g, batches: stats.batches, val_nmse, wall_s: start.elapsed().as_secs_f64() };
        on_epoch(&entry);
        log.entries.push(entry);
        if let (Some(k), Some(path)) = (opts.checkpoint_every, &opts.checkpoint_path) {
            if k > 0 && ((epoch + 1) % k == 0 || epoch + 1 == cfg.epochs) {
                write_checkpoint(path, &checkpoint_of(&trainer, &opts.data))?;
                last_checkpoint = Some(path.clone());
            }
        }
    }
    Ok((trainer, log))
}
