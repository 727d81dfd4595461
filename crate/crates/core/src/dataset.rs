//! Grid sweeps and (signature, virtual covariance image) records.
//!
//! Records hold single-precision values, matching the on-disk layout of the
//! companion crate. Images are plane-major: the `M x M` real plane in row
//! major order, then the imaginary plane.

use alloc::vec::Vec;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::channel::{
    covariance, delay_channel, dft_basis, freq_channel, to_virtual, ArrayConfig, ChannelError, DftBasis,
    OfdmConfig, PulseShape, VirtualCovariance,
};
use crate::linalg::CMatrix;
use crate::pilot::{concat_signature, omni_combiner, receive, PilotConfig, PilotError};
use crate::rng::{stream, Domain};
use crate::scene::{Scene, SceneError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Pilot(#[from] PilotError),
    #[error("grid needs nx, ny >= 1")]
    EmptyGrid,
    #[error("grid bounds must lie inside the street footprint")]
    BoundsOutsideStreet,
    #[error("target basestation {index} out of range for {count} basestations")]
    BadTarget { index: usize, count: usize },
    #[error("cannot normalize an empty dataset")]
    Empty,
    #[error("all {0} values are zero; normalization undefined")]
    AllZero(&'static str),
    #[error("train fraction must lie strictly between 0 and 1")]
    BadFraction,
    #[error("split leaves an empty side ({train} train / {test} test)")]
    EmptySplit { train: usize, test: usize },
    #[error("record dimensions do not match: {0}")]
    Shape(&'static str),
}

/// Regular grid of user positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    /// `[x_min, y_min, x_max, y_max]`.
    pub bounds: [f64; 4],
    pub seed: u64,
}

impl GridConfig {
    /// Grid spanning the whole street footprint.
    pub fn street(scene: &Scene, nx: usize, ny: usize, seed: u64) -> Self {
        let c = scene.config();
        Self { nx, ny, bounds: [0.0, 0.0, c.street_length_m, c.street_width_m], seed }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn axis(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    if n == 1 {
        lo
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

/// Row-major (x fastest) evenly spaced points including both bounds. A
/// single-point axis sits on its lower bound.
pub fn grid_points(cfg: &GridConfig, scene: &Scene) -> Result<Vec<[f64; 2]>, DatasetError> {
    if cfg.nx == 0 || cfg.ny == 0 {
        return Err(DatasetError::EmptyGrid);
    }
    let [x0, y0, x1, y1] = cfg.bounds;
    let sc = scene.config();
    if !(x0 <= x1 && y0 <= y1) || !sc.contains_xy(x0, y0) || !sc.contains_xy(x1, y1) {
        return Err(DatasetError::BoundsOutsideStreet);
    }
    let mut pts = Vec::with_capacity(cfg.len());
    for j in 0..cfg.ny {
        let y = axis(y0, y1, cfg.ny, j);
        for i in 0..cfg.nx {
            pts.push([axis(x0, x1, cfg.nx, i), y]);
        }
    }
    Ok(pts)
}

/// Everything besides the scene that shapes a record.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordConfig {
    pub array: ArrayConfig,
    pub ofdm: OfdmConfig,
    pub pulse: PulseShape,
    pub pilot: PilotConfig,
    /// Zero-based basestation index whose covariance is the target.
    pub target_bs: usize,
}

impl RecordConfig {
    pub fn new(m_antennas: usize, ofdm: OfdmConfig, target_bs: usize) -> Result<Self, DatasetError> {
        Ok(Self {
            array: ArrayConfig::new(m_antennas)?,
            ofdm,
            pulse: PulseShape::default(),
            pilot: PilotConfig::unit(ofdm.k_subcarriers),
            target_bs,
        })
    }
}

/// `M x M x 2` image of a virtual covariance, plane-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CovImage {
    pub m: usize,
    pub pixels: Vec<f32>,
}

impl CovImage {
    pub fn from_virtual(r: &VirtualCovariance) -> Self {
        let m = r.dim();
        let mut pixels = Vec::with_capacity(2 * m * m);
        pixels.extend(r.r_g.as_slice().iter().map(|v| v.re as f32));
        pixels.extend(r.r_g.as_slice().iter().map(|v| v.im as f32));
        Self { m, pixels }
    }

    /// Complex matrix scaled by `scale`, without symmetrization.
    pub fn to_matrix(&self, scale: f64) -> CMatrix {
        let mm = self.m * self.m;
        CMatrix::from_vec(
            self.m,
            self.m,
            (0..mm)
                .map(|i| Complex64::new(self.pixels[i] as f64 * scale, self.pixels[mm + i] as f64 * scale))
                .collect(),
        )
    }

    pub fn to_virtual(&self, scale: f64) -> VirtualCovariance {
        VirtualCovariance { r_g: self.to_matrix(scale) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    /// `[Re(y); Im(y)]`.
    pub signature: Vec<f32>,
    pub image: CovImage,
    pub user_xy: [f64; 2],
    /// Zero-based.
    pub target_bs: usize,
}

/// Intermediate products of one record, kept for inspection and tests.
#[derive(Debug, Clone)]
pub struct RecordTrace {
    pub record: DatasetRecord,
    pub virtual_cov: VirtualCovariance,
    pub signature_complex: Vec<Complex64>,
}

/// Composes path tracing, wideband channel synthesis, omni reception at all
/// basestations and the virtual covariance at the target basestation.
pub fn build_record(
    scene: &Scene,
    point_index: u64,
    user_xy: [f64; 2],
    cfg: &RecordConfig,
) -> Result<RecordTrace, DatasetError> {
    let n_bs = scene.n_bs();
    if cfg.target_bs >= n_bs {
        return Err(DatasetError::BadTarget { index: cfg.target_bs, count: n_bs });
    }
    let basis = dft_basis(cfg.array.m_antennas)?;
    build_record_with_basis(scene, point_index, user_xy, cfg, &basis)
}

pub fn build_record_with_basis(
    scene: &Scene,
    point_index: u64,
    user_xy: [f64; 2],
    cfg: &RecordConfig,
    basis: &DftBasis,
) -> Result<RecordTrace, DatasetError> {
    let n_bs = scene.n_bs();
    let w = omni_combiner(cfg.array.m_antennas);
    let mut per_bs = Vec::with_capacity(n_bs);
    let mut target = None;
    for bs in 0..n_bs {
        let paths = scene.trace_paths(user_xy, bs)?;
        let taps = delay_channel(&paths, &cfg.array, &cfg.ofdm, &cfg.pulse)?;
        let h = freq_channel(&taps, &cfg.ofdm)?;
        let mut rng = stream(cfg.pilot.seed, Domain::PilotNoise, point_index * n_bs as u64 + bs as u64);
        per_bs.push(receive(&h, &w, &cfg.pilot, &mut rng)?);
        if bs == cfg.target_bs {
            target = Some(to_virtual(&covariance(&h), basis)?);
        }
    }
    let virtual_cov = target.ok_or(DatasetError::BadTarget { index: cfg.target_bs, count: n_bs })?;
    let sig = concat_signature(&per_bs)?;
    let signature = sig.to_real().into_iter().map(|v| v as f32).collect();
    Ok(RecordTrace {
        record: DatasetRecord {
            signature,
            image: CovImage::from_virtual(&virtual_cov),
            user_xy,
            target_bs: cfg.target_bs,
        },
        virtual_cov,
        signature_complex: sig.y_complex,
    })
}

/// Records after global max-abs normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub records: Vec<DatasetRecord>,
    pub norm_sig: f64,
    pub norm_cov: f64,
}

fn max_abs<'a>(values: impl Iterator<Item = &'a f32>) -> f64 {
    values.fold(0.0f64, |m, v| m.max((*v as f64).abs()))
}

/// Divides every signature value by the dataset-wide max `|signature|` and
/// every pixel by the dataset-wide max `|pixel|`.
pub fn normalize(records: Vec<DatasetRecord>) -> Result<Normalized, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    let norm_sig = max_abs(records.iter().flat_map(|r| r.signature.iter()));
    let norm_cov = max_abs(records.iter().flat_map(|r| r.image.pixels.iter()));
    if norm_sig == 0.0 {
        return Err(DatasetError::AllZero("signature"));
    }
    if norm_cov == 0.0 {
        return Err(DatasetError::AllZero("covariance"));
    }
    let mut records = records;
    for r in &mut records {
        for v in &mut r.signature {
            *v = (*v as f64 / norm_sig) as f32;
        }
        for v in &mut r.image.pixels {
            *v = (*v as f64 / norm_cov) as f32;
        }
    }
    Ok(Normalized { records, norm_sig, norm_cov })
}

/// Shuffled, disjoint, exhaustive index partition.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::BadFraction);
    }
    let n_train = libm::round(train_fraction * n as f64) as usize;
    let n_train = n_train.min(n);
    if n_train == 0 || n_train == n {
        return Err(DatasetError::EmptySplit { train: n_train, test: n - n_train });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, Domain::Split, 0));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), DatasetError> {
    let (tr, te) = split_indices(items.len(), train_fraction, seed)?;
    Ok((
        tr.iter().map(|&i| items[i].clone()).collect(),
        te.iter().map(|&i| items[i].clone()).collect(),
    ))
}
