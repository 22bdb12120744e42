use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::split::{check_fractions, largest_remainder, split_three_way, DEFAULT_FRACTIONS};
use super::{DataError, Dataset, SampleRef};
use crate::seed;

/// How samples are skewed across learners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionKind {
    /// Stratified: every learner sees the global class mix.
    Iid,
    /// Classes are owned by exactly one subset of learners. Learners are
    /// assigned to subsets in contiguous blocks. Without an explicit map,
    /// class `c` belongs to subset `c * subsets / classes`.
    ClassSubsets {
        subsets: usize,
        #[serde(default)]
        class_map: Option<Vec<usize>>,
    },
    /// Each learner's class histogram follows a normal density over class
    /// indices. Means default to evenly spaced over `[0, classes - 1]`.
    GaussianLabels {
        #[serde(default = "default_stddev")]
        stddev: f64,
        #[serde(default)]
        means: Option<Vec<f64>>,
    },
    /// Two sources; the first half of the learners split source 0, the
    /// second half split source 1.
    DisjointDatasets,
}

fn default_stddev() -> f64 {
    1.5
}

fn default_fractions() -> [f64; 3] {
    DEFAULT_FRACTIONS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    #[serde(flatten)]
    pub kind: PartitionKind,
    pub learner_count: usize,
    pub seed: u64,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
}

/// One learner's private data.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerSplit {
    pub learner: usize,
    /// Every sample the learner holds, across all three parts.
    pub samples: Vec<SampleRef>,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl LearnerSplit {
    /// Training-set size; the learner's FedAvg weight.
    pub fn sample_count(&self) -> usize {
        self.train.len()
    }
}

/// Deals shuffled per-class pools round-robin over `members`, continuing the
/// rotation across classes so sizes differ by at most one.
fn deal(pools: &[Vec<SampleRef>], members: &[usize], out: &mut [Vec<SampleRef>]) {
    let mut pos = 0;
    for pool in pools {
        for &s in pool {
            out[members[pos % members.len()]].push(s);
            pos += 1;
        }
    }
}

/// Shuffled sample pools, one per class (or a single pool when unlabelled).
fn class_pools(source: usize, data: &Dataset, rng: &mut ChaCha8Rng) -> Vec<Vec<SampleRef>> {
    let mut pools = match data.labels() {
        Some(labels) => {
            let mut pools = vec![Vec::new(); data.class_count()];
            for (index, &l) in labels.iter().enumerate() {
                pools[l as usize].push(SampleRef { source, index });
            }
            pools
        }
        None => vec![(0..data.len())
            .map(|index| SampleRef { source, index })
            .collect()],
    };
    for p in &mut pools {
        p.shuffle(rng);
    }
    pools
}

fn require_labels(data: &Dataset, kind: &str) -> Result<(), DataError> {
    if data.labels().is_none() {
        return Err(DataError::InvalidPartition(format!(
            "{kind} partition needs labelled data"
        )));
    }
    Ok(())
}

fn single_source<'a>(sources: &'a [Dataset], kind: &str) -> Result<&'a Dataset, DataError> {
    match sources {
        [d] => Ok(d),
        _ => Err(DataError::InvalidPartition(format!(
            "{kind} partition takes exactly one dataset, got {}",
            sources.len()
        ))),
    }
}

fn normal_density(x: f64, mean: f64, stddev: f64) -> f64 {
    let z = (x - mean) / stddev;
    (-0.5 * z * z).exp()
}

fn gaussian_assign(
    data: &Dataset,
    learners: usize,
    stddev: f64,
    means: Option<&[f64]>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<SampleRef>>, DataError> {
    require_labels(data, "gaussian_labels")?;
    if !(stddev.is_finite() && stddev > 0.0) {
        return Err(DataError::InvalidPartition(
            "stddev must be positive".into(),
        ));
    }
    let classes = data.class_count();
    let means: Vec<f64> = match means {
        Some(m) if m.len() != learners => {
            return Err(DataError::InvalidPartition(format!(
                "{} means given for {learners} learners",
                m.len()
            )))
        }
        Some(m) => m.to_vec(),
        None => (0..learners)
            .map(|i| i as f64 * (classes as f64 - 1.0) / (learners as f64 - 1.0))
            .collect(),
    };
    let probs: Vec<Vec<f64>> = means
        .iter()
        .map(|&mu| {
            let w: Vec<f64> = (0..classes)
                .map(|c| normal_density(c as f64, mu, stddev))
                .collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let supply = data.class_counts();
    // Largest equal per-learner size whose rounded allocation fits supply.
    let demand: Vec<f64> = (0..classes)
        .map(|c| probs.iter().map(|p| p[c]).sum())
        .collect();
    let mut size = (0..classes)
        .filter(|&c| demand[c] > 0.0)
        .map(|c| (supply[c] as f64 / demand[c]).floor() as usize)
        .min()
        .unwrap_or(0)
        + 1;
    let alloc = loop {
        let alloc: Vec<Vec<usize>> = probs.iter().map(|p| largest_remainder(size, p)).collect();
        let fits = (0..classes).all(|c| alloc.iter().map(|a| a[c]).sum::<usize>() <= supply[c]);
        if fits || size == 0 {
            break alloc;
        }
        size -= 1;
    };
    let mut pools = class_pools(0, data, rng);
    let mut out = vec![Vec::new(); learners];
    for (learner, counts) in alloc.iter().enumerate() {
        for (c, &k) in counts.iter().enumerate() {
            let at = pools[c].len() - k;
            out[learner].extend(pools[c].drain(at..));
        }
    }
    Ok(out)
}

/// Splits the samples of `sources` among learners according to `spec`, then
/// cuts each learner's share into train, validation and test parts.
pub fn partition(
    sources: &[Dataset],
    spec: &PartitionSpec,
) -> Result<Vec<LearnerSplit>, DataError> {
    let learners = spec.learner_count;
    if learners < 2 {
        return Err(DataError::InvalidPartition(
            "at least two learners required".into(),
        ));
    }
    check_fractions(&spec.fractions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut assigned: Vec<Vec<SampleRef>> = vec![Vec::new(); learners];
    match &spec.kind {
        PartitionKind::Iid => {
            let data = single_source(sources, "iid")?;
            let members: Vec<usize> = (0..learners).collect();
            deal(&class_pools(0, data, &mut rng), &members, &mut assigned);
        }
        PartitionKind::ClassSubsets { subsets, class_map } => {
            let data = single_source(sources, "class_subsets")?;
            require_labels(data, "class_subsets")?;
            let classes = data.class_count();
            let subsets = *subsets;
            if subsets == 0 || subsets > learners {
                return Err(DataError::InvalidPartition(format!(
                    "{subsets} subsets for {learners} learners"
                )));
            }
            let map: Vec<usize> = match class_map {
                Some(m) if m.len() != classes => {
                    return Err(DataError::InvalidPartition(format!(
                        "class map has {} entries for {classes} classes",
                        m.len()
                    )))
                }
                Some(m) => m.clone(),
                None => (0..classes).map(|c| c * subsets / classes).collect(),
            };
            if let Some(&bad) = map.iter().find(|&&s| s >= subsets) {
                return Err(DataError::InvalidPartition(format!(
                    "class mapped to subset {bad} of {subsets}"
                )));
            }
            if let Some(empty) = (0..subsets).find(|s| !map.contains(s)) {
                return Err(DataError::InvalidPartition(format!(
                    "subset {empty} receives no classes"
                )));
            }
            let pools = class_pools(0, data, &mut rng);
            for s in 0..subsets {
                let members: Vec<usize> = (0..learners)
                    .filter(|&l| l * subsets / learners == s)
                    .collect();
                let owned: Vec<Vec<SampleRef>> = (0..classes)
                    .filter(|&c| map[c] == s)
                    .map(|c| pools[c].clone())
                    .collect();
                deal(&owned, &members, &mut assigned);
            }
        }
        PartitionKind::GaussianLabels { stddev, means } => {
            let data = single_source(sources, "gaussian_labels")?;
            assigned = gaussian_assign(data, learners, *stddev, means.as_deref(), &mut rng)?;
        }
        PartitionKind::DisjointDatasets => {
            if sources.len() != 2 {
                return Err(DataError::InvalidPartition(format!(
                    "disjoint_datasets takes two datasets, got {}",
                    sources.len()
                )));
            }
            let first_half = learners.div_ceil(2);
            for (source, members) in [
                (0, (0..first_half).collect::<Vec<_>>()),
                (1, (first_half..learners).collect()),
            ] {
                deal(
                    &class_pools(source, &sources[source], &mut rng),
                    &members,
                    &mut assigned,
                );
            }
        }
    }

    assigned
        .into_iter()
        .enumerate()
        .map(|(learner, mut samples)| {
            samples.sort();
            let split_seed = seed::derive(spec.seed, &[learner as u64]);
            let [train, validation, test] = split_three_way(&samples, spec.fractions, split_seed)
                .map_err(|e| match e {
                DataError::InsufficientSamples(msg) => {
                    DataError::InsufficientSamples(format!("learner {learner}: {msg}"))
                }
                other => other,
            })?;
            Ok(LearnerSplit {
                learner,
                train: Dataset::gather(sources, &train)?,
                validation: Dataset::gather(sources, &validation)?,
                test: Dataset::gather(sources, &test)?,
                samples,
            })
        })
        .collect()
}

/// One cell of the learner-by-class histogram.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HistogramRow {
    pub learner: usize,
    pub class: usize,
    pub count: usize,
}

/// Per-learner sample counts by class. Unlabelled samples are binned by
/// their source dataset instead.
pub fn class_histogram(sources: &[Dataset], splits: &[LearnerSplit]) -> Vec<HistogramRow> {
    let bins = sources
        .iter()
        .map(|s| {
            if s.labels().is_some() {
                s.class_count()
            } else {
                sources.len()
            }
        })
        .max()
        .unwrap_or(0);
    let mut rows = Vec::with_capacity(splits.len() * bins);
    for split in splits {
        let mut counts = vec![0usize; bins];
        for s in &split.samples {
            let bin = match sources[s.source].labels() {
                Some(l) => l[s.index] as usize,
                None => s.source,
            };
            counts[bin] += 1;
        }
        rows.extend(
            counts
                .into_iter()
                .enumerate()
                .map(|(class, count)| HistogramRow {
                    learner: split.learner,
                    class,
                    count,
                }),
        );
    }
    rows
}

/// Writes `learner_id,class,count` rows with a header line.
pub fn write_histogram_csv<W: Write>(rows: &[HistogramRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "learner_id,class,count")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.learner, r.class, r.count)?;
    }
    Ok(())
}
