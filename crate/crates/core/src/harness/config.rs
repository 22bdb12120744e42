//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 1
//! learners = 10
//! rounds = 20
//! tolerance = 3.0          # or one value per learner: [1.0, 2.0, ...]
//! metric = "accuracy"      # optional; defaults from net.head
//!
//! [training]
//! epochs = 2
//! learning_rate = 0.5
//! batch_size = 16
//!
//! [net]
//! layers = [8, 16, 9]
//! head = "softmax"         # or "mse"
//! activations = ["relu", "identity"]   # optional
//!
//! [[data.sources]]
//! kind = "blobs"
//! classes = 9
//! samples_per_class = 120
//! dim = 8
//! spread = 0.12
//! seed = 5
//!
//! [[data.sources]]
//! kind = "idx"
//! images = "train-images-idx3-ubyte"   # relative to the config file
//! labels = "train-labels-idx1-ubyte"
//!
//! [partition]
//! kind = "class_subsets"   # iid | class_subsets | gaussian_labels | disjoint_datasets
//! subsets = 3
//!
//! [transport]
//! by_reference = false
//! record = true
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::{
    self, BlobParams, Dataset, LearnerSplit, PartitionKind, PartitionSpec, DEFAULT_FRACTIONS,
};
use crate::nn::{Activation, Head, NetSpec};
use crate::protocol::{LearnerConfig, Mode};
use crate::rules::{MetricKind, Tolerance};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] toml::de::Error),
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error(transparent)]
    Data(#[from] data::DataError),
}

fn invalid(key: impl Into<String>, message: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ToleranceSetting {
    Global(f64),
    PerLearner(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_epochs() -> usize {
    2
}

fn default_batch() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub layers: Vec<usize>,
    #[serde(default = "default_head")]
    pub head: Head,
    #[serde(default)]
    pub activations: Option<Vec<Activation>>,
}

fn default_head() -> Head {
    Head::Softmax
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSection {
    Blobs(BlobParams),
    #[serde(rename_all = "snake_case")]
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub sources: Vec<SourceSection>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct PartitionSection {
    #[serde(flatten)]
    pub kind: PartitionKind,
    /// Defaults to a value derived from the top-level seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub fractions: Option<[f64; 3]>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportSection {
    #[serde(default)]
    pub by_reference: bool,
    #[serde(default = "default_true")]
    pub record: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub learners: usize,
    pub rounds: u64,
    pub tolerance: ToleranceSetting,
    #[serde(default)]
    pub metric: Option<MetricKind>,
    /// Only used by the CLI when `--out` is absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub training: TrainingSection,
    pub net: NetSection,
    pub data: DataSection,
    pub partition: PartitionSection,
    #[serde(default)]
    pub transport: Option<TransportSection>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

const PARTITION_STREAM: u64 = 0x7061_7274;

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.learners == 0 {
            return Err(invalid("learners", "must be positive"));
        }
        if self.rounds == 0 {
            return Err(invalid("rounds", "must be positive"));
        }
        if self.training.epochs == 0 {
            return Err(invalid("training.epochs", "must be positive"));
        }
        if self.training.batch_size == 0 {
            return Err(invalid("training.batch_size", "must be positive"));
        }
        if !(self.training.learning_rate.is_finite() && self.training.learning_rate >= 0.0) {
            return Err(invalid(
                "training.learning_rate",
                "must be finite and non-negative",
            ));
        }
        self.tolerances()?;
        self.net_spec()?;
        let metric = self.metric_kind();
        match (self.net.head, metric) {
            (Head::Softmax, MetricKind::Accuracy) | (Head::Mse, MetricKind::Mse) => {}
            _ => {
                return Err(invalid(
                    "metric",
                    format!("{} does not fit net.head", metric.as_str()),
                ))
            }
        }
        if self.data.sources.is_empty() {
            return Err(invalid("data.sources", "at least one source required"));
        }
        for (i, s) in self.data.sources.iter().enumerate() {
            if let SourceSection::Blobs(b) = s {
                if b.classes == 0 || b.samples_per_class == 0 || b.dim == 0 {
                    return Err(invalid(
                        format!("data.sources[{i}]"),
                        "counts must be positive",
                    ));
                }
                if !(b.spread.is_finite() && b.spread >= 0.0) {
                    return Err(invalid(
                        format!("data.sources[{i}].spread"),
                        "must be non-negative",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn tolerances(&self) -> Result<Vec<Tolerance>, ConfigError> {
        let values = match &self.tolerance {
            ToleranceSetting::Global(t) => vec![*t; self.learners],
            ToleranceSetting::PerLearner(list) => {
                if list.len() != self.learners {
                    return Err(invalid(
                        "tolerance",
                        format!("{} values for {} learners", list.len(), self.learners),
                    ));
                }
                list.clone()
            }
        };
        values
            .into_iter()
            .enumerate()
            .map(|(i, t)| Tolerance::new(t).map_err(|e| invalid(format!("tolerance[{i}]"), e)))
            .collect()
    }

    pub fn metric_kind(&self) -> MetricKind {
        self.metric.unwrap_or(match self.net.head {
            Head::Softmax => MetricKind::Accuracy,
            Head::Mse => MetricKind::Mse,
        })
    }

    /// Hidden layers default to ReLU. The output layer is identity for
    /// softmax and sigmoid for reconstruction, matching inputs in `[0, 1]`.
    pub fn net_spec(&self) -> Result<NetSpec, ConfigError> {
        let layers = &self.net.layers;
        let activations = match &self.net.activations {
            Some(a) => a.clone(),
            None => {
                let last = match self.net.head {
                    Head::Softmax => Activation::Identity,
                    Head::Mse => Activation::Sigmoid,
                };
                let hidden = layers.len().saturating_sub(2);
                std::iter::repeat_n(Activation::Relu, hidden)
                    .chain(std::iter::once(last))
                    .collect()
            }
        };
        NetSpec::new(layers.clone(), activations, self.net.head).map_err(|e| invalid("net", e))
    }

    pub fn transport(&self) -> TransportSection {
        self.transport.clone().unwrap_or(TransportSection {
            by_reference: false,
            record: true,
        })
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            kind: self.partition.kind.clone(),
            learner_count: self.learners,
            seed: self
                .partition
                .seed
                .unwrap_or_else(|| seed::derive(self.seed, &[PARTITION_STREAM])),
            fractions: self.partition.fractions.unwrap_or(DEFAULT_FRACTIONS),
        }
    }

    pub fn load_sources(&self) -> Result<Vec<Dataset>, ConfigError> {
        let sources = self
            .data
            .sources
            .iter()
            .map(|s| match s {
                SourceSection::Blobs(b) => Ok(b.generate()),
                SourceSection::Idx { images, labels } => {
                    data::load_idx(&self.base_dir.join(images), &self.base_dir.join(labels))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let input = self.net.layers[0];
        for (i, s) in sources.iter().enumerate() {
            if s.dim() != input {
                return Err(invalid(
                    format!("data.sources[{i}]"),
                    format!(
                        "sample dimension {} does not match net.layers[0] = {input}",
                        s.dim()
                    ),
                ));
            }
        }
        Ok(sources)
    }

    pub fn splits(&self) -> Result<(Vec<Dataset>, Vec<LearnerSplit>), ConfigError> {
        let sources = self.load_sources()?;
        let splits = data::partition(&sources, &self.partition_spec())?;
        Ok((sources, splits))
    }

    pub fn learner_config(
        &self,
        mode: Mode,
        model_store: Option<PathBuf>,
    ) -> Result<LearnerConfig, ConfigError> {
        Ok(LearnerConfig {
            spec: self.net_spec()?,
            metric: self.metric_kind(),
            epochs: self.training.epochs,
            learning_rate: self.training.learning_rate,
            batch_size: self.training.batch_size,
            seed: self.seed,
            mode,
            model_store,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 1
learners = 4
rounds = 3
tolerance = 2.0

[training]
learning_rate = 0.5

[net]
layers = [4, 6, 3]

[[data.sources]]
kind = "blobs"
classes = 3
samples_per_class = 40
dim = 4
spread = 0.1
seed = 9

[partition]
kind = "class_subsets"
subsets = 2
"#;

    #[test]
    fn parses_defaults() {
        let c = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!(c.training.epochs, 2);
        assert_eq!(c.training.batch_size, 16);
        assert_eq!(c.metric_kind(), MetricKind::Accuracy);
        assert_eq!(c.tolerances().unwrap().len(), 4);
        let spec = c.net_spec().unwrap();
        assert_eq!(
            spec.activations(),
            &[Activation::Relu, Activation::Identity]
        );
        assert_eq!(
            c.partition.kind,
            PartitionKind::ClassSubsets {
                subsets: 2,
                class_map: None
            }
        );
        assert!(c.transport().record);
        let (_, splits) = c.splits().unwrap();
        assert_eq!(splits.len(), 4);
    }

    #[test]
    fn per_learner_tolerance_length_checked() {
        let text = BASE.replace("tolerance = 2.0", "tolerance = [1.0, 2.0]");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.starts_with("tolerance:"), "{err}");
        let text = BASE.replace("tolerance = 2.0", "tolerance = [1.0, 2.0, 3.0, -1.0]");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.starts_with("tolerance[3]:"), "{err}");
    }

    #[test]
    fn errors_name_the_key() {
        let cases = [
            ("learners = 4", "learners = 0", "learners:"),
            ("rounds = 3", "rounds = 0", "rounds:"),
            (
                "learning_rate = 0.5",
                "learning_rate = -1.0",
                "training.learning_rate:",
            ),
            ("layers = [4, 6, 3]", "layers = [4]", "net:"),
            (
                "tolerance = 2.0",
                "tolerance = 2.0\nmetric = \"mse\"",
                "metric:",
            ),
        ];
        for (from, to, prefix) in cases {
            let err = ExperimentConfig::parse(&BASE.replace(from, to))
                .unwrap_err()
                .to_string();
            assert!(err.starts_with(prefix), "{err}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = BASE.replace("learning_rate = 0.5", "learning_rate = 0.5\nmomentum = 0.9");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("momentum"), "{err}");
    }

    #[test]
    fn input_dimension_checked() {
        let c = ExperimentConfig::parse(&BASE.replace("dim = 4", "dim = 5")).unwrap();
        let err = c.splits().unwrap_err().to_string();
        assert!(err.starts_with("data.sources[0]:"), "{err}");
    }

    #[test]
    fn autoencoder_defaults() {
        let text = BASE
            .replace("layers = [4, 6, 3]", "layers = [4, 2, 4]\nhead = \"mse\"")
            .replace("kind = \"class_subsets\"\nsubsets = 2", "kind = \"iid\"");
        let c = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(c.metric_kind(), MetricKind::Mse);
        assert_eq!(
            c.net_spec().unwrap().activations(),
            &[Activation::Relu, Activation::Sigmoid]
        );
    }
}
