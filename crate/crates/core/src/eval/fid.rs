use image::RgbImage;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Embeds an image into a fixed-length feature vector for FID.
pub trait FeatureExtractor {
    fn features(&mut self, image: &RgbImage) -> Result<Vec<f64>>;
}

fn moments(samples: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Invalid("Frechet distance needs at least two samples per set".into()));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(Error::Shape("feature vectors differ in length".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    let m = DMatrix::from_fn(n, d, |i, j| sorted[i][j]);
    let mean = DVector::from_fn(d, |j, _| m.column(j).sum() / n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mean, cov))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Frechet distance between Gaussians fitted to two feature sets.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (mu_a, cov_a) = moments(a)?;
    let (mu_b, cov_b) = moments(b)?;
    if mu_a.len() != mu_b.len() {
        return Err(Error::Shape("feature sets differ in dimension".into()));
    }
    // tr((A B)^1/2) = tr((A^1/2 B A^1/2)^1/2) with both sides symmetric PSD.
    let root_a = psd_sqrt(&cov_a);
    let inner = &root_a * &cov_b * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let trace_sqrt: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let diff = mu_a - mu_b;
    Ok((diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * trace_sqrt).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_set_is_zero_and_shift_is_squared_norm() {
        let a = vec![vec![0.0, 1.0], vec![2.0, 0.5], vec![1.0, -1.0], vec![0.5, 0.0]];
        assert!(frechet_distance(&a, &a).unwrap() < 1e-9);
        let b: Vec<Vec<f64>> = a.iter().map(|v| vec![v[0] + 3.0, v[1] - 4.0]).collect();
        assert!((frechet_distance(&a, &b).unwrap() - 25.0).abs() < 1e-9);
    }

    #[test]
    fn one_dimensional_closed_form() {
        let a = vec![vec![-1.0], vec![1.0]];
        let b = vec![vec![-2.0], vec![2.0]];
        // sample variances 2 and 8: (sqrt 2 - sqrt 8)^2 = 2
        assert!((frechet_distance(&a, &b).unwrap() - 2.0).abs() < 1e-9);
    }
}
