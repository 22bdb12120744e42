//! Datasets, the IDX file format, synthetic blobs and non-IID partitioning.

mod blobs;
mod dataset;
mod idx;
mod partition;
mod split;

use std::path::PathBuf;

pub use blobs::{generate_blobs, BlobParams};
pub use dataset::{Dataset, SampleRef};
pub use idx::{load_idx, parse_idx, to_idx_bytes, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use partition::{
    class_histogram, partition, write_histogram_csv, HistogramRow, LearnerSplit, PartitionKind,
    PartitionSpec,
};
pub use split::{split_three_way, DEFAULT_FRACTIONS};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad IDX magic number {found} (expected {expected})")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),
}
