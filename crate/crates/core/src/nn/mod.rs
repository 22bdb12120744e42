//! Small fully connected networks over flat parameter vectors.
//!
//! Parameters for each layer are stored as the `out x in` weight matrix in
//! row-major order followed by the `out` biases, layer after layer. Every
//! operation here is a pure function of its arguments.

mod net;
mod train;

use serde::{Deserialize, Serialize};

use crate::digest::{Digest, Hasher};
use crate::params::ParamError;

pub use net::{forward, init_params, loss_and_grad, Targets};
pub use train::{dataset_loss, evaluate_accuracy, evaluate_mse, train, TrainConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("operation requires a {expected} head")]
    WrongHead { expected: &'static str },
    #[error("dataset has no labels")]
    MissingLabels,
    #[error("label {label} out of range for {classes} outputs")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed in terms of the pre-activation `z` and the
    /// activation output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    fn tag(self) -> u64 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Identity => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Softmax over the last layer with cross-entropy loss.
    Softmax,
    /// Reconstruction of the input with mean squared error.
    Mse,
}

impl Head {
    fn tag(self) -> u64 {
        match self {
            Head::Softmax => 0,
            Head::Mse => 1,
        }
    }
}

/// Network shape. `activations[i]` applies to the output of layer `i + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetSpec {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    head: Head,
}

impl NetSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        head: Head,
    ) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 {
            return Err(NnError::InvalidSpec("at least two layers required".into()));
        }
        if layer_sizes.contains(&0) {
            return Err(NnError::InvalidSpec("layer sizes must be positive".into()));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(NnError::InvalidSpec(format!(
                "{} activations given for {} weight layers",
                activations.len(),
                layer_sizes.len() - 1
            )));
        }
        match head {
            Head::Softmax => {
                if *activations.last().unwrap() != Activation::Identity {
                    return Err(NnError::InvalidSpec(
                        "softmax head expects an identity output layer".into(),
                    ));
                }
                if *layer_sizes.last().unwrap() < 2 {
                    return Err(NnError::InvalidSpec(
                        "softmax head needs at least two outputs".into(),
                    ));
                }
            }
            Head::Mse => {
                if layer_sizes.first() != layer_sizes.last() {
                    return Err(NnError::InvalidSpec(
                        "autoencoder output size must equal input size".into(),
                    ));
                }
            }
        }
        Ok(NetSpec {
            layer_sizes,
            activations,
            head,
        })
    }

    /// A classifier with ReLU hidden layers and softmax output.
    pub fn classifier(layer_sizes: Vec<usize>) -> Result<Self, NnError> {
        let n = layer_sizes.len().saturating_sub(1);
        let mut acts = vec![Activation::Relu; n];
        if let Some(last) = acts.last_mut() {
            *last = Activation::Identity;
        }
        Self::new(layer_sizes, acts, Head::Softmax)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Stable digest of the architecture, folded into the genesis model id.
    pub fn digest(&self) -> Digest {
        let mut h = Hasher::new("netspec").u64(self.layer_sizes.len() as u64);
        for &s in &self.layer_sizes {
            h = h.u64(s as u64);
        }
        for a in &self.activations {
            h = h.u64(a.tag());
        }
        h.u64(self.head.tag()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_of_small_net() {
        let spec = NetSpec::classifier(vec![2, 3, 2]).unwrap();
        assert_eq!(spec.param_count(), 2 * 3 + 3 + 3 * 2 + 2);
        assert_eq!(spec.param_count(), 17);
    }

    #[test]
    fn spec_validation() {
        assert!(NetSpec::classifier(vec![4]).is_err());
        assert!(NetSpec::classifier(vec![4, 0, 2]).is_err());
        assert!(NetSpec::new(vec![4, 3, 5], vec![Activation::Relu; 2], Head::Mse).is_err());
        assert!(NetSpec::new(vec![4, 3, 4], vec![Activation::Relu], Head::Mse).is_err());
        assert!(NetSpec::new(vec![4, 3], vec![Activation::Relu], Head::Softmax).is_err());
        assert!(NetSpec::new(
            vec![4, 2, 4],
            vec![Activation::Relu, Activation::Sigmoid],
            Head::Mse
        )
        .is_ok());
    }

    #[test]
    fn digest_depends_on_shape() {
        let a = NetSpec::classifier(vec![2, 3, 2]).unwrap();
        let b = NetSpec::classifier(vec![2, 4, 2]).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.clone().digest());
    }
}
