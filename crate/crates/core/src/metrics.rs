//! NMSE, reference predictors and diagonal path-count readouts.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::channel::VirtualCovariance;
use crate::dataset::DatasetRecord;
use crate::linalg::CMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("reference matrix has zero Frobenius norm")]
    ZeroReference,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("k must be at least 1")]
    ZeroK,
}

/// `‖R̂ − R‖²_F / ‖R‖²_F`.
pub fn nmse(r_hat: &VirtualCovariance, r: &VirtualCovariance) -> Result<f64, MetricsError> {
    nmse_matrix(&r_hat.r_g, &r.r_g)
}

pub fn nmse_matrix(r_hat: &CMatrix, r: &CMatrix) -> Result<f64, MetricsError> {
    if r_hat.rows() != r.rows() || r_hat.cols() != r.cols() {
        return Err(MetricsError::DimensionMismatch(r_hat.rows(), r.rows()));
    }
    let den = r.frobenius_sq();
    if den == 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    Ok(r_hat.sub(r).frobenius_sq() / den)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn image_to_virtual(m: usize, pixels: &[f64], norm_cov: f64) -> VirtualCovariance {
    let mm = m * m;
    let r = CMatrix::from_vec(
        m,
        m,
        (0..mm)
            .map(|i| num_complex::Complex64::new(pixels[i] * norm_cov, pixels[mm + i] * norm_cov))
            .collect(),
    );
    VirtualCovariance { r_g: r.hermitian_part() }
}

/// Constant predictor: the mean training image.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanBaseline {
    pub m: usize,
    pub pixels: Vec<f64>,
}

impl MeanBaseline {
    pub fn fit(train: &[DatasetRecord]) -> Result<Self, MetricsError> {
        let first = train.first().ok_or(MetricsError::EmptyTrainSet)?;
        let m = first.image.m;
        let mut acc = vec![0.0; first.image.pixels.len()];
        for r in train {
            if r.image.pixels.len() != acc.len() {
                return Err(MetricsError::DimensionMismatch(r.image.m, m));
            }
            for (a, v) in acc.iter_mut().zip(&r.image.pixels) {
                *a += *v as f64;
            }
        }
        let inv = 1.0 / train.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(Self { m, pixels: acc })
    }

    /// Ignores the signature.
    pub fn predict(&self, norm_cov: f64) -> VirtualCovariance {
        image_to_virtual(self.m, &self.pixels, norm_cov)
    }
}

/// Average image of the `k` training records nearest to `query` in Euclidean
/// signature distance; ties go to the lower record index.
pub fn knn_predict(
    train: &[DatasetRecord],
    query: &[f32],
    k: usize,
    norm_cov: f64,
) -> Result<VirtualCovariance, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    let first = train.first().ok_or(MetricsError::EmptyTrainSet)?;
    let mut dist: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let d = r
                .signature
                .iter()
                .zip(query)
                .map(|(a, b)| {
                    let e = *a as f64 - *b as f64;
                    e * e
                })
                .sum::<f64>();
            (d, i)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = k.min(train.len());
    let mut acc = vec![0.0; first.image.pixels.len()];
    for &(_, i) in &dist[..k] {
        for (a, v) in acc.iter_mut().zip(&train[i].image.pixels) {
            *a += *v as f64;
        }
    }
    let inv = 1.0 / k as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(image_to_virtual(first.image.m, &acc, norm_cov))
}

/// Indices whose diagonal power exceeds `rel_threshold` times the maximum.
pub fn diagonal_support(diag: &[f64], rel_threshold: f64) -> Vec<usize> {
    let max = diag.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    diag.iter()
        .enumerate()
        .filter(|(_, &v)| v > rel_threshold * max)
        .map(|(i, _)| i)
        .collect()
}

/// Number of circular local maxima of the diagonal above `rel_threshold`
/// times its maximum. Adjacent DFT bins wrap around.
pub fn count_peaks(diag: &[f64], rel_threshold: f64) -> usize {
    let n = diag.len();
    let max = diag.iter().cloned().fold(0.0f64, f64::max);
    if n == 0 || max <= 0.0 {
        return 0;
    }
    if n == 1 {
        return 1;
    }
    (0..n)
        .filter(|&i| {
            let v = diag[i];
            let prev = diag[(i + n - 1) % n];
            let next = diag[(i + 1) % n];
            v > rel_threshold * max && v > prev && v >= next
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{array_response, dft_basis, from_virtual, ArrayConfig};
    use crate::dataset::CovImage;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(m: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        let x = CMatrix::from_fn(m, m, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        x.matmul(&x.adjoint())
    }

    fn vc(r: CMatrix) -> VirtualCovariance {
        VirtualCovariance { r_g: r }
    }

    #[test]
    fn nmse_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_psd(6, &mut rng);
        assert_eq!(nmse(&vc(r.clone()), &vc(r.clone())).unwrap(), 0.0);
        assert_eq!(nmse(&vc(CMatrix::zeros(6, 6)), &vc(r.clone())).unwrap(), 1.0);
        let two = r.scale(Complex64::new(2.0, 0.0));
        assert!((nmse(&vc(two), &vc(r.clone())).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(nmse(&vc(r.clone()), &vc(CMatrix::zeros(6, 6))), Err(MetricsError::ZeroReference));
        assert!(nmse(&vc(r), &vc(CMatrix::zeros(5, 5))).is_err());
    }

    #[test]
    fn nmse_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let basis = dft_basis(8).unwrap();
        for _ in 0..20 {
            let a = random_psd(8, &mut rng);
            let b = random_psd(8, &mut rng);
            let base = nmse(&vc(a.clone()), &vc(b.clone())).unwrap();
            let alpha = Complex64::new(rng.random::<f64>() * 4.0 - 2.0, 0.0);
            let scaled = nmse(&vc(a.scale(alpha)), &vc(b.scale(alpha))).unwrap();
            assert!((scaled - base).abs() <= 1e-10 * base);
            let ua = from_virtual(&vc(a), &basis).unwrap().r;
            let ub = from_virtual(&vc(b), &basis).unwrap().r;
            let conj = nmse_matrix(&ua, &ub).unwrap();
            assert!((conj - base).abs() <= 1e-10 * base);
        }
    }

    fn rec(pixels: Vec<f32>, sig: Vec<f32>) -> DatasetRecord {
        DatasetRecord { signature: sig, image: CovImage { m: 1, pixels }, user_xy: [0.0, 0.0], target_bs: 0 }
    }

    #[test]
    fn mean_baseline_examples() {
        let one = [rec(vec![0.7, 0.0], vec![1.0])];
        let b = MeanBaseline::fit(&one).unwrap();
        let truth = one[0].image.to_virtual(1.0);
        assert_eq!(nmse(&b.predict(1.0), &truth).unwrap(), 0.0);

        let pm = [rec(vec![0.5, 0.0], vec![1.0]), rec(vec![-0.5, 0.0], vec![2.0])];
        let b = MeanBaseline::fit(&pm).unwrap();
        for r in &pm {
            assert_eq!(nmse(&b.predict(1.0), &r.image.to_virtual(1.0)).unwrap(), 1.0);
        }
        assert_eq!(MeanBaseline::fit(&[]), Err(MetricsError::EmptyTrainSet));
    }

    #[test]
    fn mean_baseline_minimizes_squared_error_among_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let recs: Vec<_> = (0..100).map(|_| rec(vec![rng.random::<f32>(), 0.0], vec![0.0])).collect();
        let b = MeanBaseline::fit(&recs).unwrap();
        let sse = |c: f64| recs.iter().map(|r| (r.image.pixels[0] as f64 - c).powi(2)).sum::<f64>();
        let best = sse(b.pixels[0]);
        for i in 0..=200 {
            let c = i as f64 / 200.0;
            assert!(sse(c) >= best - 1e-12);
        }
    }

    #[test]
    fn knn_examples() {
        let recs = [
            rec(vec![1.0, 0.0], vec![0.0, 0.0]),
            rec(vec![2.0, 0.0], vec![1.0, 0.0]),
            rec(vec![3.0, 0.0], vec![5.0, 5.0]),
        ];
        let p = knn_predict(&recs, &[1.0, 0.0], 1, 1.0).unwrap();
        assert_eq!(nmse(&p, &recs[1].image.to_virtual(1.0)).unwrap(), 0.0);
        let all = knn_predict(&recs, &[9.0, 9.0], 3, 1.0).unwrap();
        let mean = MeanBaseline::fit(&recs).unwrap().predict(1.0);
        assert_eq!(all, mean);
        // Equidistant query: the lower index wins.
        let tie = knn_predict(&recs, &[0.5, 0.0], 1, 1.0).unwrap();
        assert_eq!(tie, recs[0].image.to_virtual(1.0));
        assert_eq!(knn_predict(&[], &[0.0], 1, 1.0), Err(MetricsError::EmptyTrainSet));
        assert_eq!(knn_predict(&recs, &[0.0], 0, 1.0), Err(MetricsError::ZeroK));
    }

    #[test]
    fn on_grid_threshold_recovers_path_count() {
        let m = 16;
        let array = ArrayConfig::new(m).unwrap();
        let basis = dft_basis(m).unwrap();
        for bins in [vec![3usize], vec![2, 11], vec![1, 5, 12], vec![0, 4, 9, 14]] {
            let mut r = CMatrix::zeros(m, m);
            for (i, &b) in bins.iter().enumerate() {
                let a = array_response(array.on_grid_angle(b).unwrap(), &array);
                let w = 1.0 / (i + 1) as f64;
                r = r.add(&CMatrix::outer(&a).scale(Complex64::new(w, 0.0)));
            }
            let rg = crate::channel::to_virtual(&crate::channel::Covariance { r }, &basis).unwrap();
            let diag = rg.diagonal_power();
            assert_eq!(diagonal_support(&diag, 0.01), bins);
            assert_eq!(count_peaks(&diag, 0.01), bins.len());
        }
    }

    #[test]
    fn peaks_wrap_around() {
        assert_eq!(count_peaks(&[5.0, 1.0, 0.0, 1.0, 4.0], 0.1), 1);
        assert_eq!(count_peaks(&[5.0, 1.0, 3.0, 1.0, 0.0], 0.1), 2);
        assert_eq!(count_peaks(&[5.0, 1.0, 0.3, 0.1, 0.0], 0.1), 1);
        assert_eq!(count_peaks(&[0.0; 4], 0.1), 0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
