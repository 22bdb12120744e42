use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::matrix::Matrix;

/// Parameters of a synthetic Gaussian-cluster dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobParams {
    pub classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub seed: u64,
}

impl BlobParams {
    pub fn generate(&self) -> Dataset {
        generate_blobs(
            self.classes,
            self.samples_per_class,
            self.dim,
            self.spread,
            self.seed,
        )
    }
}

/// One isotropic Gaussian cluster per class. Centers are drawn uniformly from
/// `[0.15, 0.85]^dim`, then samples are drawn class by class; every feature is
/// clamped to `[0, 1]`.
pub fn generate_blobs(
    class_count: usize,
    samples_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Dataset {
    assert!(class_count > 0 && samples_per_class > 0 && dim > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..class_count)
        .map(|_| (0..dim).map(|_| rng.random_range(0.15..0.85)).collect())
        .collect();
    let noise = Normal::new(0.0, spread.max(0.0)).expect("valid normal");
    let n = class_count * samples_per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..samples_per_class {
            data.extend(
                center
                    .iter()
                    .map(|&m| (m + noise.sample(&mut rng)).clamp(0.0, 1.0)),
            );
            labels.push(c as u32);
        }
    }
    Dataset::new(Matrix::from_vec(n, dim, data), Some(labels), class_count)
        .expect("blob features are clamped and labels in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_labelled() {
        let a = generate_blobs(3, 10, 4, 0.05, 1);
        let b = generate_blobs(3, 10, 4, 0.05, 1);
        assert_eq!(a, b);
        assert_ne!(a, generate_blobs(3, 10, 4, 0.05, 2));
        assert_eq!(a.len(), 30);
        assert!(a.labels().unwrap().iter().all(|&l| l < 3));
        assert_eq!(a.class_counts(), vec![10, 10, 10]);
    }
}
