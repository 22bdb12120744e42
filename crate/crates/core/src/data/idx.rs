//! The IDX binary format: a big-endian magic number whose low byte is the
//! number of dimensions, one big-endian `u32` per dimension, then unsigned
//! bytes in row-major order.

use std::fs;
use std::path::Path;

use super::{DataError, Dataset};
use crate::matrix::Matrix;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

/// Header dimensions and payload of one IDX file.
pub fn parse_idx(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, &[u8]), DataError> {
    let read_u32 = |at: usize| -> Result<u32, DataError> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or(DataError::Truncated {
                expected: at + 4,
                found: bytes.len(),
            })
    };
    let found = read_u32(0)?;
    if found != magic {
        return Err(DataError::BadMagic {
            expected: magic,
            found,
        });
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|d| read_u32(4 + 4 * d).map(|v| v as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let header = 4 + 4 * ndim;
    let expected = dims.iter().product::<usize>();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(DataError::Truncated {
            expected: header + expected,
            found: bytes.len(),
        });
    }
    Ok((dims, payload))
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an IDX image/label pair, scaling pixels to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset, DataError> {
    let image_bytes = read(images)?;
    let label_bytes = read(labels)?;
    from_idx_bytes(&image_bytes, &label_bytes)
}

pub(crate) fn from_idx_bytes(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset, DataError> {
    let (idims, pixels) = parse_idx(image_bytes, IDX_IMAGES_MAGIC)?;
    let (ldims, raw_labels) = parse_idx(label_bytes, IDX_LABELS_MAGIC)?;
    let (count, rows, cols) = (idims[0], idims[1], idims[2]);
    if count != ldims[0] {
        return Err(DataError::CountMismatch {
            images: count,
            labels: ldims[0],
        });
    }
    let features = Matrix::from_vec(
        count,
        rows * cols,
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    );
    let labels: Vec<u32> = raw_labels.iter().map(|&l| l as u32).collect();
    let class_count = labels.iter().max().map_or(0, |&m| m as usize + 1);
    Ok(Dataset::new(features, Some(labels), class_count)?.with_image_shape(rows, cols))
}

/// Re-encodes a labelled dataset as an IDX image/label pair. Features are
/// mapped back to bytes with `round(v * 255)`.
pub fn to_idx_bytes(data: &Dataset) -> Result<(Vec<u8>, Vec<u8>), DataError> {
    let labels = data
        .labels()
        .ok_or_else(|| DataError::Invalid("IDX export needs labels".into()))?;
    let (rows, cols) = data.image_shape().unwrap_or((1, data.dim()));
    if rows * cols != data.dim() {
        return Err(DataError::Invalid(
            "image shape does not match width".into(),
        ));
    }
    if data.class_count() > 256 {
        return Err(DataError::Invalid("labels do not fit in a byte".into()));
    }
    let mut images = Vec::with_capacity(16 + data.len() * data.dim());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [data.len(), rows, cols] {
        images.extend_from_slice(&(d as u32).to_be_bytes());
    }
    images.extend(
        data.features()
            .as_slice()
            .iter()
            .map(|v| (v * 255.0).round() as u8),
    );
    let mut label_bytes = Vec::with_capacity(8 + labels.len());
    label_bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    label_bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    label_bytes.extend(labels.iter().map(|&l| l as u8));
    Ok((images, label_bytes))
}
