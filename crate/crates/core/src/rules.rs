//! Aggregation and selection rules: FedAvg, weight divergence, divergence-based
//! update filtering and popularity-scaled model selection.

use serde::{Deserialize, Serialize};

use crate::dag::UpdateRecord;
use crate::digest::Digest;
use crate::params::{ParamError, ParamVector};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RuleError {
    #[error("nothing to aggregate")]
    NoUpdates,
    #[error("{updates} updates but {weights} weights")]
    WeightCount { updates: usize, weights: usize },
    #[error("weight {0} is not positive")]
    NonPositiveWeight(f64),
    #[error("local update has zero norm")]
    ZeroNorm,
    #[error("no candidate models")]
    NoCandidates,
    #[error("invalid metric value {0}")]
    InvalidMetric(f64),
    #[error("tolerance must be finite and nonnegative, got {0}")]
    InvalidTolerance(f64),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Number of standard deviations above the median divergence that a peer
/// update may reach and still be aggregated.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Tolerance(f64);

impl Tolerance {
    pub fn new(value: f64) -> Result<Self, RuleError> {
        if value.is_finite() && value >= 0.0 {
            Ok(Tolerance(value))
        } else {
            Err(RuleError::InvalidTolerance(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Tolerance {
    type Error = RuleError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Tolerance::new(v)
    }
}

impl From<Tolerance> for f64 {
    fn from(t: Tolerance) -> f64 {
        t.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Mse,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Mse => "mse",
        }
    }

    /// Whether `a` is a better raw value than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            MetricKind::Accuracy => a > b,
            MetricKind::Mse => a < b,
        }
    }
}

/// A candidate model as seen by one learner during selection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredModel {
    pub model_id: Digest,
    /// Higher is better.
    pub metric: f64,
    /// Number of updates aggregated into the model.
    pub popularity: usize,
}

/// Sample-count weighted mean of parameter vectors.
///
/// Computed as a running mean, `m += (w_k / W_k) * (x_k - m)`, in the given
/// order. Callers that need bit-exact replication must pass updates in a
/// canonical order. The running form keeps the result inside the per
/// coordinate range of the inputs and returns identical inputs unchanged.
pub fn fedavg(updates: &[&ParamVector], weights: &[f64]) -> Result<ParamVector, RuleError> {
    let (first, rest) = updates.split_first().ok_or(RuleError::NoUpdates)?;
    if updates.len() != weights.len() {
        return Err(RuleError::WeightCount {
            updates: updates.len(),
            weights: weights.len(),
        });
    }
    if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(RuleError::NonPositiveWeight(w));
    }
    let mut mean = first.as_slice().to_vec();
    let mut seen = weights[0];
    for (u, &w) in rest.iter().zip(&weights[1..]) {
        first.check_same_len(u)?;
        seen += w;
        let share = w / seen;
        for (m, x) in mean.iter_mut().zip(u.iter()) {
            *m += share * (x - *m);
        }
    }
    Ok(ParamVector::new(mean)?)
}

/// `||peer - local|| / ||local||`.
pub fn weight_divergence(local: &ParamVector, peer: &ParamVector) -> Result<f64, RuleError> {
    local.check_same_len(peer)?;
    let norm = local.l2_norm();
    if norm == 0.0 {
        return Err(RuleError::ZeroNorm);
    }
    let diff: f64 = local
        .iter()
        .zip(peer.iter())
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}

/// Median of a non-empty slice; mean of the two middle values for even sizes.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Threshold `median + std * tolerance` over peer divergences, or `None`
/// when there are no peers.
pub fn max_divergence(divergences: &[f64], tolerance: Tolerance) -> Option<f64> {
    if divergences.is_empty() {
        return None;
    }
    Some(median(divergences) + population_std(divergences) * tolerance.value())
}

/// Indices of the peers accepted by the divergence rule, in input order.
///
/// A peer is accepted when its divergence is strictly below the threshold,
/// or exactly zero (an identical model).
pub fn accepted_peers(
    mine: &ParamVector,
    peers: &[&ParamVector],
    tolerance: Tolerance,
) -> Result<Vec<usize>, RuleError> {
    let divergences = peers
        .iter()
        .map(|p| weight_divergence(mine, p))
        .collect::<Result<Vec<_>, _>>()?;
    let Some(limit) = max_divergence(&divergences, tolerance) else {
        return Ok(Vec::new());
    };
    Ok(divergences
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0.0 || d < limit)
        .map(|(i, _)| i)
        .collect())
}

/// The learner's own update followed by every accepted peer update, in the
/// order received.
pub fn select_updates(
    my_update: &UpdateRecord,
    peer_updates: &[UpdateRecord],
    tolerance: Tolerance,
) -> Result<Vec<UpdateRecord>, RuleError> {
    let peers: Vec<&ParamVector> = peer_updates.iter().map(|u| &u.params).collect();
    let accepted = accepted_peers(&my_update.params, &peers, tolerance)?;
    let mut selected = Vec::with_capacity(accepted.len() + 1);
    selected.push(my_update.clone());
    selected.extend(accepted.into_iter().map(|i| peer_updates[i].clone()));
    Ok(selected)
}

/// `max(1, floor(sqrt(n)))`.
pub fn models_to_train(candidates: usize) -> usize {
    candidates.isqrt().max(1)
}

/// Ranks candidates by `metric * sqrt(popularity)`, best first, ties broken by
/// ascending model id, and keeps the top `max(1, floor(sqrt(n)))`.
pub fn select_best_models(candidates: &[ScoredModel]) -> Result<Vec<Digest>, RuleError> {
    if candidates.is_empty() {
        return Err(RuleError::NoCandidates);
    }
    if let Some(c) = candidates.iter().find(|c| !c.metric.is_finite()) {
        return Err(RuleError::InvalidMetric(c.metric));
    }
    let mut scored: Vec<(f64, Digest)> = candidates
        .iter()
        .map(|c| (c.metric * (c.popularity as f64).sqrt(), c.model_id))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.dedup_by_key(|s| s.1);
    Ok(scored
        .into_iter()
        .take(models_to_train(candidates.len()))
        .map(|(_, id)| id)
        .collect())
}

/// Maps a raw metric to a higher-is-better score: accuracy unchanged, MSE to
/// `1 / (1 + mse)`.
pub fn normalize_metric(raw: f64, kind: MetricKind) -> Result<f64, RuleError> {
    if !raw.is_finite() {
        return Err(RuleError::InvalidMetric(raw));
    }
    match kind {
        MetricKind::Accuracy => Ok(raw),
        MetricKind::Mse if raw < 0.0 => Err(RuleError::InvalidMetric(raw)),
        MetricKind::Mse => Ok(1.0 / (1.0 + raw)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn id(n: u8) -> Digest {
        Digest::from_bytes([n; 32])
    }

    #[test]
    fn fedavg_examples() {
        let a = pv(&[2.0]);
        let b = pv(&[4.0]);
        assert_eq!(fedavg(&[&a, &b], &[1.0, 3.0]).unwrap(), pv(&[3.5]));
        let c = pv(&[0.1, -7.3, 1e-9]);
        assert_eq!(fedavg(&[&c, &c, &c], &[3.0, 1.0, 17.0]).unwrap(), c);
        assert_eq!(fedavg(&[&c], &[5.0]).unwrap(), c);
    }

    #[test]
    fn fedavg_errors() {
        let a = pv(&[1.0]);
        let b = pv(&[1.0, 2.0]);
        assert_eq!(fedavg(&[], &[]), Err(RuleError::NoUpdates));
        assert!(matches!(
            fedavg(&[&a, &b], &[1.0, 1.0]),
            Err(RuleError::Param(_))
        ));
        assert_eq!(
            fedavg(&[&a], &[0.0]),
            Err(RuleError::NonPositiveWeight(0.0))
        );
        assert!(matches!(
            fedavg(&[&a], &[1.0, 2.0]),
            Err(RuleError::WeightCount { .. })
        ));
    }

    #[test]
    fn divergence_examples() {
        let u = pv(&[3.0, 4.0]);
        assert_eq!(weight_divergence(&u, &u).unwrap(), 0.0);
        assert_eq!(weight_divergence(&u, &pv(&[6.0, 8.0])).unwrap(), 1.0);
        assert_eq!(
            weight_divergence(&pv(&[0.0, 0.0]), &u),
            Err(RuleError::ZeroNorm)
        );
        assert!(weight_divergence(&u, &pv(&[1.0])).is_err());
    }

    /// Peers at the given divergences from `[1, 0]` along the second axis.
    fn peers_at(divs: &[f64]) -> Vec<ParamVector> {
        divs.iter().map(|&d| pv(&[1.0, d])).collect()
    }

    #[test]
    fn outlier_excluded_at_tolerance_one() {
        let mine = pv(&[1.0, 0.0]);
        let peers = peers_at(&[0.1, 0.1, 0.1, 10.0]);
        let refs: Vec<&ParamVector> = peers.iter().collect();
        // median 0.1; population std of {0.1, 0.1, 0.1, 10} = sqrt(18.376875) = 4.2868257...
        let t = max_divergence(&[0.1, 0.1, 0.1, 10.0], Tolerance::new(1.0).unwrap()).unwrap();
        assert!((t - 4.386_825_748_7).abs() < 1e-9, "{t}");
        assert_eq!(
            accepted_peers(&mine, &refs, Tolerance::new(1.0).unwrap()).unwrap(),
            vec![0, 1, 2]
        );
        let t3 = max_divergence(&[0.1, 0.1, 0.1, 10.0], Tolerance::new(3.0).unwrap()).unwrap();
        assert!((t3 - 12.960_477_246_2).abs() < 1e-9, "{t3}");
        assert_eq!(
            accepted_peers(&mine, &refs, Tolerance::new(3.0).unwrap()).unwrap(),
            vec![0, 1, 2, 3]
        );
    }

    #[test]
    fn identical_peers_always_accepted() {
        let mine = pv(&[1.0, 2.0]);
        let refs = vec![&mine, &mine, &mine];
        assert_eq!(
            accepted_peers(&mine, &refs, Tolerance::new(0.0).unwrap()).unwrap(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn single_peer_edge() {
        let mine = pv(&[1.0, 0.0]);
        let peers = peers_at(&[0.5]);
        let refs: Vec<&ParamVector> = peers.iter().collect();
        // std = 0 so the threshold equals the divergence itself; strict `<` excludes.
        assert!(accepted_peers(&mine, &refs, Tolerance::new(3.0).unwrap())
            .unwrap()
            .is_empty());
        assert!(accepted_peers(&mine, &[], Tolerance::new(3.0).unwrap())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn best_models_examples() {
        let one = [ScoredModel {
            model_id: id(1),
            metric: 0.2,
            popularity: 1,
        }];
        assert_eq!(select_best_models(&one).unwrap(), vec![id(1)]);

        let pops = [(1, 9), (2, 4), (3, 1), (4, 1)];
        let four: Vec<ScoredModel> = pops
            .iter()
            .map(|&(i, p)| ScoredModel {
                model_id: id(i),
                metric: 1.0,
                popularity: p,
            })
            .collect();
        assert_eq!(select_best_models(&four).unwrap(), vec![id(1), id(2)]);

        let nine: Vec<ScoredModel> = (0..9)
            .map(|i| ScoredModel {
                model_id: id(20 - i),
                metric: 0.9 - 0.1 * i as f64,
                popularity: 1,
            })
            .collect();
        assert_eq!(
            select_best_models(&nine).unwrap(),
            vec![id(20), id(19), id(18)]
        );
        assert_eq!(select_best_models(&[]), Err(RuleError::NoCandidates));
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let c: Vec<ScoredModel> = [5u8, 3, 9, 1]
            .iter()
            .map(|&i| ScoredModel {
                model_id: id(i),
                metric: 0.5,
                popularity: 2,
            })
            .collect();
        assert_eq!(select_best_models(&c).unwrap(), vec![id(1), id(3)]);
    }

    #[test]
    fn metric_normalization() {
        assert_eq!(normalize_metric(0.75, MetricKind::Accuracy).unwrap(), 0.75);
        assert_eq!(normalize_metric(0.0, MetricKind::Mse).unwrap(), 1.0);
        assert_eq!(normalize_metric(1.0, MetricKind::Mse).unwrap(), 0.5);
        assert!(normalize_metric(-0.1, MetricKind::Mse).is_err());
        assert!(normalize_metric(f64::NAN, MetricKind::Accuracy).is_err());
    }

    #[test]
    fn tolerance_validation() {
        assert!(Tolerance::new(-1.0).is_err());
        assert!(Tolerance::new(f64::INFINITY).is_err());
        assert_eq!(Tolerance::new(2.0).unwrap().value(), 2.0);
    }

    #[test]
    fn floor_sqrt() {
        assert_eq!(models_to_train(1), 1);
        assert_eq!(models_to_train(3), 1);
        assert_eq!(models_to_train(4), 2);
        assert_eq!(models_to_train(8), 2);
        assert_eq!(models_to_train(9), 3);
    }
}
