use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::math;

/// Gaussian fit of an embedding set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    /// Row-major `D x D`.
    pub covariance: Vec<f64>,
}

impl GaussianSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample mean and unbiased (`N - 1`) covariance; needs `N >= 2`.
    pub fn fit<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Self, MetricError> {
        if vectors.len() < 2 {
            return Err(MetricError::TooFewVectors { needed: 2, got: vectors.len() });
        }
        let d = vectors[0].as_ref().len();
        for v in vectors {
            if v.as_ref().len() != d {
                return Err(MetricError::DimensionMismatch(d, v.as_ref().len()));
            }
        }
        let n = vectors.len() as f64;
        let mut mean = alloc::vec![0.0; d];
        for v in vectors {
            for (m, x) in mean.iter_mut().zip(v.as_ref()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = alloc::vec![0.0; d * d];
        for v in vectors {
            let v = v.as_ref();
            for i in 0..d {
                let di = v[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (v[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let c = cov[i * d + j] / (n - 1.0);
                cov[i * d + j] = c;
                cov[j * d + i] = c;
            }
        }
        Ok(Self { mean, covariance: cov })
    }

    /// A 1-D summary with the given mean and standard deviation.
    pub fn univariate(mean: f64, std_dev: f64) -> Self {
        Self { mean: alloc::vec![mean], covariance: alloc::vec![std_dev * std_dev] }
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        let m = DMatrix::from_row_slice(d, d, &self.covariance);
        (&m + m.transpose()) * 0.5
    }
}

/// PSD square root via eigendecomposition, clamping negative eigenvalues to 0.
fn sqrt_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.symmetric_eigen();
    let roots = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| math::sqrt(l.max(0.0))));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// The trace of the product's square root is computed from the symmetric
/// matrix `S_a^(1/2) S_b S_a^(1/2)`, which has the same eigenvalues as
/// `S_a S_b`.
pub fn frechet_from_summaries(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64, MetricError> {
    if a.dim() != b.dim() {
        return Err(MetricError::DimensionMismatch(a.dim(), b.dim()));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let sa = a.cov_matrix();
    let sb = b.cov_matrix();
    let root_a = sqrt_psd(sa.clone());
    let inner = &root_a * &sb * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = inner.symmetric_eigenvalues().iter().map(|&l| math::sqrt(l.max(0.0))).sum();
    Ok((mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt).max(0.0))
}

/// Fréchet distance between Gaussian fits of two embedding sets.
pub fn frechet_distance<V: AsRef<[f64]>>(a: &[V], b: &[V]) -> Result<f64, MetricError> {
    let ga = GaussianSummary::fit(a)?;
    let gb = GaussianSummary::fit(b)?;
    frechet_from_summaries(&ga, &gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn univariate_closed_forms() {
        let d = frechet_from_summaries(&GaussianSummary::univariate(0.0, 1.0), &GaussianSummary::univariate(1.0, 1.0)).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
        let d = frechet_from_summaries(&GaussianSummary::univariate(0.0, 1.0), &GaussianSummary::univariate(0.0, 3.0)).unwrap();
        assert!((d - 4.0).abs() < 1e-9);
    }

    #[test]
    fn fit_is_unbiased() {
        let g = GaussianSummary::fit(&[vec![1.0, 0.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(g.mean, vec![2.0, 1.0]);
        // deviations (-1,-1), (1,1): sums 2 / (2 - 1)
        assert_eq!(g.covariance, vec![2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn errors() {
        assert_eq!(GaussianSummary::fit(&[vec![1.0]]), Err(MetricError::TooFewVectors { needed: 2, got: 1 }));
        assert_eq!(GaussianSummary::fit(&[vec![1.0], vec![1.0, 2.0]]), Err(MetricError::DimensionMismatch(1, 2)));
        let a = [vec![0.0], vec![1.0]];
        let b = [vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(frechet_distance(&a, &b), Err(MetricError::DimensionMismatch(1, 2)));
    }

    #[test]
    fn singular_covariances_are_fine() {
        // Points on a line in 2-D: rank-1 covariance.
        let a = [vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]];
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-9);
    }
}
