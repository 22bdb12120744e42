use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward, loss_and_grad, Head, NetSpec, NnError, Targets};
use crate::data::Dataset;
use crate::params::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.epochs == 0 {
            return Err(NnError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig(
                "batch_size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(NnError::InvalidConfig(
                "learning_rate must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

fn batch_loss_and_grad(
    spec: &NetSpec,
    params: &ParamVector,
    data: &Dataset,
    idx: &[usize],
) -> Result<(f64, ParamVector), NnError> {
    let x = data.features().select_rows(idx);
    match spec.head() {
        Head::Softmax => {
            let labels = data.labels().ok_or(NnError::MissingLabels)?;
            let y: Vec<u32> = idx.iter().map(|&i| labels[i]).collect();
            loss_and_grad(spec, params, &x, Targets::Labels(&y))
        }
        Head::Mse => loss_and_grad(spec, params, &x, Targets::Values(&x)),
    }
}

/// Mean loss over the whole dataset.
pub fn dataset_loss(spec: &NetSpec, params: &ParamVector, data: &Dataset) -> Result<f64, NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    Ok(batch_loss_and_grad(spec, params, data, &idx)?.0)
}

/// Plain mini-batch SGD. The sample order of each epoch is a fresh shuffle
/// drawn from a generator seeded with `config.seed`.
pub fn train(
    spec: &NetSpec,
    params: &ParamVector,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<ParamVector, NnError> {
    config.validate()?;
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut current = params.clone();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let (_, grad) = batch_loss_and_grad(spec, &current, data, chunk)?;
            let mut next = current.into_inner();
            for (p, g) in next.iter_mut().zip(grad.iter()) {
                *p -= config.learning_rate * g;
            }
            current = ParamVector::new(next).map_err(|_| NnError::NonFinite("sgd step"))?;
        }
    }
    Ok(current)
}

/// Fraction of samples whose arg-max prediction equals the label.
pub fn evaluate_accuracy(
    spec: &NetSpec,
    params: &ParamVector,
    data: &Dataset,
) -> Result<f64, NnError> {
    if spec.head() != Head::Softmax {
        return Err(NnError::WrongHead {
            expected: "softmax",
        });
    }
    let labels = data.labels().ok_or(NnError::MissingLabels)?;
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let probs = forward(spec, params, data.features())?;
    let correct = probs
        .iter_rows()
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label as usize)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Squared reconstruction error averaged over samples and components.
pub fn evaluate_mse(spec: &NetSpec, params: &ParamVector, data: &Dataset) -> Result<f64, NnError> {
    if spec.head() != Head::Mse {
        return Err(NnError::WrongHead { expected: "mse" });
    }
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let out = forward(spec, params, data.features())?;
    let x = data.features();
    let total: f64 = out
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(total / (x.rows() * x.cols()) as f64)
}

/// First index of the maximum; ties resolve to the lowest index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;
    use crate::matrix::Matrix;
    use crate::nn::{init_params, Activation};

    fn identity_classifier() -> (NetSpec, ParamVector) {
        // 2 inputs -> 2 logits, logits = x.
        let spec = NetSpec::new(vec![2, 2], vec![Activation::Identity], Head::Softmax).unwrap();
        let params = ParamVector::new(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        (spec, params)
    }

    fn four_samples(labels: Vec<u32>) -> Dataset {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.9, 0.1],
            vec![0.2, 0.8],
        ]);
        Dataset::new(x, Some(labels), 2).unwrap()
    }

    #[test]
    fn accuracy_counts() {
        let (spec, params) = identity_classifier();
        assert_eq!(
            evaluate_accuracy(&spec, &params, &four_samples(vec![0, 1, 0, 1])).unwrap(),
            1.0
        );
        assert_eq!(
            evaluate_accuracy(&spec, &params, &four_samples(vec![1, 0, 1, 0])).unwrap(),
            0.0
        );
        assert_eq!(
            evaluate_accuracy(&spec, &params, &four_samples(vec![0, 1, 0, 0])).unwrap(),
            0.75
        );
    }

    #[test]
    fn mse_by_hand() {
        let spec = NetSpec::new(vec![2, 2], vec![Activation::Identity], Head::Mse).unwrap();
        let zero = ParamVector::zeros(6).unwrap();
        let data = Dataset::new(Matrix::from_rows(&[vec![1.0, 1.0]]), None, 0).unwrap();
        assert_eq!(evaluate_mse(&spec, &zero, &data).unwrap(), 1.0);
        let ident = ParamVector::new(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(evaluate_mse(&spec, &ident, &data).unwrap(), 0.0);
        let a = evaluate_mse(&spec, &zero, &data).unwrap();
        assert_eq!(
            a.to_bits(),
            evaluate_mse(&spec, &zero, &data).unwrap().to_bits()
        );
    }

    #[test]
    fn wrong_head_is_an_error() {
        let ae = NetSpec::new(vec![2, 2], vec![Activation::Identity], Head::Mse).unwrap();
        let p = ParamVector::zeros(6).unwrap();
        assert!(evaluate_accuracy(&ae, &p, &four_samples(vec![0, 1, 0, 1])).is_err());
        let (clf, p) = identity_classifier();
        assert!(evaluate_mse(&clf, &p, &four_samples(vec![0, 1, 0, 1])).is_err());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data = generate_blobs(3, 60, 4, 0.05, 3);
        let spec = NetSpec::classifier(vec![4, 8, 3]).unwrap();
        let p0 = init_params(&spec, 1);
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 0.5,
            batch_size: 8,
            seed: 9,
        };
        let before = dataset_loss(&spec, &p0, &data).unwrap();
        let p1 = train(&spec, &p0, &data, &cfg).unwrap();
        let after = dataset_loss(&spec, &p1, &data).unwrap();
        assert!(after <= before, "{after} > {before}");
        let again = train(&spec, &p0, &data, &cfg).unwrap();
        assert_eq!(p1.to_bytes(), again.to_bytes());
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let data = generate_blobs(2, 20, 3, 0.1, 5);
        let spec = NetSpec::classifier(vec![3, 4, 2]).unwrap();
        let p0 = init_params(&spec, 2);
        let cfg = TrainConfig {
            epochs: 2,
            learning_rate: 0.0,
            batch_size: 4,
            seed: 0,
        };
        assert_eq!(train(&spec, &p0, &data, &cfg).unwrap(), p0);
    }

    #[test]
    fn empty_dataset_rejected() {
        let spec = NetSpec::classifier(vec![3, 4, 2]).unwrap();
        let p0 = init_params(&spec, 2);
        let empty = Dataset::new(Matrix::zeros(0, 3), Some(vec![]), 2).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.1,
            batch_size: 4,
            seed: 0,
        };
        assert_eq!(train(&spec, &p0, &empty, &cfg), Err(NnError::EmptyDataset));
    }
}
