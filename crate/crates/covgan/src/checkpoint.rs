//! Self-describing model checkpoints.
//!
//! Layout: `b"CKP1"`, header length as `u32` LE, UTF-8 JSON header, then the
//! `f32` LE values of every tensor listed in the header, in order.

use std::path::Path;

use covgan_core::gan::{Gan, GanSpec, GeneratorLoss, ReconKind, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::DatasetHeader;
use crate::io::atomic_write;

pub const MAGIC: &[u8; 4] = b"CKP1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: expected CKP1")]
    BadMagic,
    #[error("truncated checkpoint: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("tensor list does not match the architecture: {0}")]
    Tensors(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecRecord {
    pub m: usize,
    pub n_bs: usize,
    pub k_sub: usize,
    pub z_dim: usize,
    pub g_base: usize,
    pub d_base: usize,
    pub cond_dim: usize,
}

impl From<GanSpec> for SpecRecord {
    fn from(s: GanSpec) -> Self {
        Self { m: s.m, n_bs: s.n_bs, k_sub: s.k_sub, z_dim: s.z_dim, g_base: s.g_base, d_base: s.d_base, cond_dim: s.cond_dim }
    }
}

impl From<SpecRecord> for GanSpec {
    fn from(s: SpecRecord) -> Self {
        Self { m: s.m, n_bs: s.n_bs, k_sub: s.k_sub, z_dim: s.z_dim, g_base: s.g_base, d_base: s.d_base, cond_dim: s.cond_dim }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossRecord {
    NonSaturating,
    Saturating,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconRecord {
    #[default]
    Squared,
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub generator_loss: LossRecord,
    pub recon_weight: f64,
    #[serde(default)]
    pub recon_kind: ReconRecord,
}

impl From<TrainConfig> for TrainRecord {
    fn from(c: TrainConfig) -> Self {
        Self {
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            adam_eps: c.adam_eps,
            batch_size: c.batch_size,
            epochs: c.epochs,
            seed: c.seed,
            generator_loss: match c.generator_loss {
                GeneratorLoss::NonSaturating => LossRecord::NonSaturating,
                GeneratorLoss::Saturating => LossRecord::Saturating,
            },
            recon_weight: c.recon_weight,
            recon_kind: match c.recon_kind {
                ReconKind::Squared => ReconRecord::Squared,
                ReconKind::Relative => ReconRecord::Relative,
            },
        }
    }
}

impl From<TrainRecord> for TrainConfig {
    fn from(c: TrainRecord) -> Self {
        Self {
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            adam_eps: c.adam_eps,
            batch_size: c.batch_size,
            epochs: c.epochs,
            seed: c.seed,
            generator_loss: match c.generator_loss {
                LossRecord::NonSaturating => GeneratorLoss::NonSaturating,
                LossRecord::Saturating => GeneratorLoss::Saturating,
            },
            recon_weight: c.recon_weight,
            recon_kind: match c.recon_kind {
                ReconRecord::Squared => ReconKind::Squared,
                ReconRecord::Relative => ReconKind::Relative,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Provenance of the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataBinding {
    /// Hex SHA-256 of the dataset header JSON.
    pub dataset_digest: String,
    pub scene_digest: String,
    pub norm_sig: f64,
    pub norm_cov: f64,
    /// One-based.
    pub target_bs: usize,
}

impl DataBinding {
    pub fn from_header(h: &DatasetHeader) -> Self {
        use sha2::{Digest, Sha256};
        Self {
            dataset_digest: hex::encode(Sha256::digest(h.json())),
            scene_digest: h.scene_digest.clone(),
            norm_sig: h.norm_sig,
            norm_cov: h.norm_cov,
            target_bs: h.target_bs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: SpecRecord,
    pub train: TrainRecord,
    pub data: DataBinding,
    pub epochs_done: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: GanSpec,
    pub train: TrainConfig,
    pub data: DataBinding,
    pub epochs_done: usize,
    pub gan: Gan<f32>,
}

/// Parameters then batch-norm buffers, generator first.
fn tensors(gan: &Gan<f32>) -> Vec<(String, Vec<usize>, &[f32])> {
    let mut v: Vec<_> = gan.params().into_iter().map(|p| (p.name.clone(), p.shape.clone(), p.value.as_slice())).collect();
    v.extend(gan.buffers().into_iter().map(|b| (b.name.clone(), vec![b.value.len()], b.value.as_slice())));
    v
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let t = tensors(&ck.gan);
    let header = CheckpointHeader {
        spec: ck.spec.into(),
        train: ck.train.into(),
        data: ck.data.clone(),
        epochs_done: ck.epochs_done,
        tensors: t.iter().map(|(name, shape, _)| TensorEntry { name: name.clone(), shape: shape.clone() }).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, values) in &t {
        for v in *values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated { expected: 8, found: bytes.len() as u64 });
    }
    let len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let start = 8 + len;
    if bytes.len() < start {
        return Err(CheckpointError::Truncated { expected: start as u64, found: bytes.len() as u64 });
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[8..start]).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let spec: GanSpec = header.spec.into();
    // Values are overwritten below; the seed only fixes the shapes.
    let mut gan: Gan<f32> =
        Gan::new(spec, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let expected: Vec<TensorEntry> =
        tensors(&gan).into_iter().map(|(name, shape, _)| TensorEntry { name, shape }).collect();
    if expected != header.tensors {
        return Err(CheckpointError::Tensors(format!(
            "{} tensors listed, architecture has {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let total: usize = expected.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let need = start as u64 + 4 * total as u64;
    if (bytes.len() as u64) < need {
        return Err(CheckpointError::Truncated { expected: need, found: bytes.len() as u64 });
    }
    if bytes.len() as u64 > need {
        return Err(CheckpointError::Tensors(format!("{} trailing bytes", bytes.len() as u64 - need)));
    }
    let mut values = bytes[start..].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    for p in gan.params_mut() {
        p.value.iter_mut().for_each(|v| *v = values.next().expect("length checked"));
    }
    for b in gan.buffers_mut() {
        b.value.iter_mut().for_each(|v| *v = values.next().expect("length checked"));
    }
    Ok(Checkpoint { spec, train: header.train.into(), data: header.data, epochs_done: header.epochs_done, gan })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    atomic_write(path, &encode(ck))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let spec = GanSpec { g_base: 4, d_base: 4, cond_dim: 4, ..GanSpec::new(8, 1, 2, 3) };
        let mut gan = Gan::new(spec, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        for b in gan.buffers_mut() {
            b.value.iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 + i as f32 / 3.0);
        }
        Checkpoint {
            spec,
            train: TrainConfig { seed: 3, recon_weight: 0.5, ..TrainConfig::default() },
            data: DataBinding {
                dataset_digest: "00".repeat(32),
                scene_digest: "11".repeat(32),
                norm_sig: 1.25e-3,
                norm_cov: 7.0e-9,
                target_bs: 1,
            },
            epochs_done: 17,
            gan,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = encode(&ck);
        let back = decode(&bytes).unwrap();
        assert_eq!(encode(&back), bytes);
        assert_eq!(back.gan.params(), ck.gan.params());
        assert_eq!(back.gan.buffers(), ck.gan.buffers());
        assert_eq!(back.train, ck.train);
        assert_eq!(back.data, ck.data);
        assert_eq!(back.epochs_done, 17);
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode(&sample());
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(decode(&bad), Err(CheckpointError::BadMagic)));
        assert!(matches!(decode(&bytes[..bytes.len() - 4]), Err(CheckpointError::Truncated { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(CheckpointError::Tensors(_))));
    }
}
