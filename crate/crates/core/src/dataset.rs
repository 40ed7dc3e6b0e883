//! Labelled datasets. Samples are stored as columns.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    /// `features` is `dim x n_samples`; one label per column.
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.len() != features.cols() {
            return Err(Error::Dataset(format!(
                "{} labels for {} samples",
                labels.len(),
                features.cols()
            )));
        }
        if let Some(&label) = labels.iter().find(|l| **l >= n_classes) {
            return Err(Error::Label {
                label,
                classes: n_classes,
            });
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.features.rows()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Columns `indices` as a batch.
    pub fn batch(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.features.select_cols(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Gaussian clusters with unit variance. Class centers sit on a circle in the
/// first two coordinates (on a line when `dim == 1`) with adjacent centers
/// `separation` apart. Samples are interleaved by class.
pub fn gen_blobs(
    n_per_class: usize,
    n_classes: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || n_classes == 0 || dim == 0 {
        return Err(Error::Dataset("blob parameters must be positive".into()));
    }
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|c| {
            let mut center = vec![0.0; dim];
            if dim == 1 || n_classes == 1 {
                center[0] = separation * c as f64;
            } else {
                let radius = separation / (2.0 * (PI / n_classes as f64).sin());
                let angle = 2.0 * PI * c as f64 / n_classes as f64;
                center[0] = radius * angle.cos();
                center[1] = radius * angle.sin();
            }
            center
        })
        .collect();

    let mut rng = Rng::new(seed);
    let n = n_per_class * n_classes;
    let mut data = vec![0.0; dim * n];
    let mut labels = Vec::with_capacity(n);
    for s in 0..n {
        let class = s % n_classes;
        labels.push(class);
        for d in 0..dim {
            data[d * n + s] = centers[class][d] + rng.normal();
        }
    }
    Dataset::new(Matrix::new(dim, n, data)?, labels, n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic() {
        let a = gen_blobs(10, 3, 4, 5.0, 1).unwrap();
        let b = gen_blobs(10, 3, 4, 5.0, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert_eq!(a.dim(), 4);
        assert_ne!(a, gen_blobs(10, 3, 4, 5.0, 2).unwrap());
    }

    #[test]
    fn blob_centers_are_separated() {
        let ds = gen_blobs(500, 2, 2, 10.0, 3).unwrap();
        let mut means = [[0.0; 2]; 2];
        for (s, &label) in ds.labels().iter().enumerate() {
            for d in 0..2 {
                means[label][d] += ds.features().get(d, s) / 500.0;
            }
        }
        let dist = ((means[0][0] - means[1][0]).powi(2) + (means[0][1] - means[1][1]).powi(2)).sqrt();
        assert!((dist - 10.0).abs() < 0.5, "{dist}");
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(Matrix::zeros(2, 3), vec![0, 1], 2).is_err());
        assert!(matches!(
            Dataset::new(Matrix::zeros(2, 2), vec![0, 5], 2),
            Err(Error::Label { label: 5, classes: 2 })
        ));
    }

    #[test]
    fn batch_selects_columns() {
        let ds = gen_blobs(3, 2, 2, 1.0, 4).unwrap();
        let (x, y) = ds.batch(&[4, 1]);
        assert_eq!(x.shape(), (2, 2));
        assert_eq!(x.get(0, 0), ds.features().get(0, 4));
        assert_eq!(y, vec![ds.labels()[4], ds.labels()[1]]);
    }
}
