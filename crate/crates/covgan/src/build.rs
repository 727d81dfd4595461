//! Parallel dataset construction.

use covgan_core::channel::{dft_basis, OfdmConfig};
use covgan_core::dataset::{
    build_record_with_basis, grid_points, normalize, DatasetError, DatasetRecord, GridConfig, RecordConfig,
};
use covgan_core::pilot::PilotConfig;
use covgan_core::scene::Scene;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::scene_digest;
use crate::format::{Dataset, DatasetHeader, GridInfo};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("target basestation {target} outside 1..={n_bs}")]
    BadTarget { target: usize, n_bs: usize },
    #[error("worker count must be at least 1")]
    ZeroWorkers,
    #[error("failed to start worker pool: {0}")]
    Pool(String),
}

/// Everything that determines a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildSpec {
    pub grid: GridConfig,
    pub m: usize,
    pub ofdm: OfdmConfig,
    /// One-based.
    pub target_bs: usize,
    pub snr_db: Option<f64>,
}

impl BuildSpec {
    pub fn record_config(&self, scene: &Scene) -> Result<RecordConfig, BuildError> {
        let n_bs = scene.n_bs();
        if self.target_bs == 0 || self.target_bs > n_bs {
            return Err(BuildError::BadTarget { target: self.target_bs, n_bs });
        }
        let mut cfg = RecordConfig::new(self.m, self.ofdm, self.target_bs - 1)?;
        cfg.pilot = PilotConfig { snr_db: self.snr_db, seed: self.grid.seed, ..PilotConfig::unit(self.ofdm.k_subcarriers) };
        Ok(cfg)
    }
}

/// Un-normalized records in grid order. Each point draws its noise from a
/// stream keyed by its grid index, so the result does not depend on
/// `workers`.
pub fn build_records(scene: &Scene, spec: &BuildSpec, workers: usize) -> Result<Vec<DatasetRecord>, BuildError> {
    if workers == 0 {
        return Err(BuildError::ZeroWorkers);
    }
    let cfg = spec.record_config(scene)?;
    let points = grid_points(&spec.grid, scene)?;
    let basis = dft_basis(spec.m).map_err(DatasetError::from)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| BuildError::Pool(e.to_string()))?;
    let results: Vec<Result<DatasetRecord, DatasetError>> = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(i, &xy)| build_record_with_basis(scene, i as u64, xy, &cfg, &basis).map(|t| t.record))
            .collect()
    });
    Ok(results.into_iter().collect::<Result<_, _>>()?)
}

/// Builds and normalizes a complete dataset.
pub fn build_dataset(scene: &Scene, spec: &BuildSpec, workers: usize) -> Result<Dataset, BuildError> {
    let records = build_records(scene, spec, workers)?;
    let n = normalize(records)?;
    let header = DatasetHeader {
        m: spec.m,
        n_bs: scene.n_bs(),
        k_sub: spec.ofdm.k_subcarriers,
        count: n.records.len(),
        norm_sig: n.norm_sig,
        norm_cov: n.norm_cov,
        target_bs: spec.target_bs,
        scene_digest: hex::encode(scene_digest(scene.config())),
        seed: spec.grid.seed,
        grid: Some(GridInfo { nx: spec.grid.nx, ny: spec.grid.ny, bounds: spec.grid.bounds }),
    };
    Ok(Dataset { header, records: n.records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use covgan_core::scene::{build_scene, SceneConfig};

    fn spec(scene: &Scene, nx: usize, ny: usize) -> BuildSpec {
        BuildSpec {
            grid: GridConfig::street(scene, nx, ny, 42),
            m: 8,
            ofdm: OfdmConfig::default(),
            target_bs: 1,
            snr_db: Some(10.0),
        }
    }

    #[test]
    fn worker_count_does_not_change_records() {
        let scene = build_scene(SceneConfig::default()).unwrap();
        let s = spec(&scene, 4, 3);
        let one = build_dataset(&scene, &s, 1).unwrap();
        let four = build_dataset(&scene, &s, 4).unwrap();
        assert_eq!(one, four);
        assert_eq!(one.records.len(), 12);
        assert_eq!(one.records[5].user_xy, [10.0, 10.0]);
    }

    #[test]
    fn rejects_bad_target_and_workers() {
        let scene = build_scene(SceneConfig::default()).unwrap();
        let mut s = spec(&scene, 2, 2);
        assert!(matches!(build_records(&scene, &s, 0), Err(BuildError::ZeroWorkers)));
        s.target_bs = 0;
        assert!(matches!(build_records(&scene, &s, 1), Err(BuildError::BadTarget { .. })));
        s.target_bs = 5;
        assert!(matches!(build_records(&scene, &s, 1), Err(BuildError::BadTarget { .. })));
    }
}
