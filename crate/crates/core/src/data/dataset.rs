use super::DataError;
use crate::matrix::Matrix;

/// Position of a sample inside one of several source datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleRef {
    pub source: usize,
    pub index: usize,
}

/// Features in `[0, 1]`, one row per sample, with optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Option<Vec<u32>>,
    class_count: usize,
    /// Image height and width when loaded from IDX.
    image_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Option<Vec<u32>>,
        class_count: usize,
    ) -> Result<Self, DataError> {
        if let Some(v) = features
            .as_slice()
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(DataError::Invalid(format!("feature {v} outside [0, 1]")));
        }
        if let Some(labels) = &labels {
            if labels.len() != features.rows() {
                return Err(DataError::Invalid(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    features.rows()
                )));
            }
            if let Some(&l) = labels.iter().find(|&&l| l as usize >= class_count) {
                return Err(DataError::Invalid(format!(
                    "label {l} outside [0, {class_count})"
                )));
            }
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
            image_shape: None,
        })
    }

    pub(crate) fn with_image_shape(mut self, rows: usize, cols: usize) -> Self {
        self.image_shape = Some((rows, cols));
        self
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            class_count: self.class_count,
            image_shape: self.image_shape,
        }
    }

    /// Builds a dataset from samples spread over several sources. Labels are
    /// kept only if every source is labelled.
    pub fn gather(sources: &[Dataset], refs: &[SampleRef]) -> Result<Dataset, DataError> {
        let dim = sources
            .first()
            .ok_or_else(|| DataError::Invalid("no sources".into()))?
            .dim();
        if sources.iter().any(|s| s.dim() != dim) {
            return Err(DataError::Invalid("sources differ in feature width".into()));
        }
        let labelled = sources.iter().all(|s| s.labels.is_some());
        let mut data = Vec::with_capacity(refs.len() * dim);
        let mut labels = Vec::with_capacity(if labelled { refs.len() } else { 0 });
        for r in refs {
            let src = sources
                .get(r.source)
                .ok_or_else(|| DataError::Invalid(format!("unknown source {}", r.source)))?;
            if r.index >= src.len() {
                return Err(DataError::Invalid(format!(
                    "sample {} out of range for source {}",
                    r.index, r.source
                )));
            }
            data.extend_from_slice(src.features.row(r.index));
            if labelled {
                labels.push(src.labels.as_ref().unwrap()[r.index]);
            }
        }
        Ok(Dataset {
            features: Matrix::from_vec(refs.len(), dim, data),
            labels: labelled.then_some(labels),
            class_count: sources.iter().map(|s| s.class_count).max().unwrap_or(0),
            image_shape: sources[0].image_shape,
        })
    }

    /// Sample count per class; empty when the dataset has no labels.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        if let Some(labels) = &self.labels {
            for &l in labels {
                counts[l as usize] += 1;
            }
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0]]);
        assert!(Dataset::new(x.clone(), Some(vec![0]), 1).is_ok());
        assert!(Dataset::new(x.clone(), Some(vec![1]), 1).is_err());
        assert!(Dataset::new(x.clone(), Some(vec![0, 0]), 1).is_err());
        let bad = Matrix::from_rows(&[vec![1.5, 0.0]]);
        assert!(Dataset::new(bad, None, 0).is_err());
    }

    #[test]
    fn gather_across_sources() {
        let a = Dataset::new(
            Matrix::from_rows(&[vec![0.1], vec![0.2]]),
            Some(vec![0, 1]),
            2,
        )
        .unwrap();
        let b = Dataset::new(Matrix::from_rows(&[vec![0.9]]), Some(vec![2]), 3).unwrap();
        let g = Dataset::gather(
            &[a, b],
            &[
                SampleRef {
                    source: 1,
                    index: 0,
                },
                SampleRef {
                    source: 0,
                    index: 1,
                },
            ],
        )
        .unwrap();
        assert_eq!(g.features().as_slice(), &[0.9, 0.2]);
        assert_eq!(g.labels().unwrap(), &[2, 1]);
        assert_eq!(g.class_count(), 3);
    }
}
