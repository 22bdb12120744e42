use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DataError;

/// Train, validation and test proportions.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.7, 0.15, 0.15];

/// Part sizes by largest-remainder rounding; ties go to the earlier part.
pub(crate) fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let raw: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

pub(crate) fn check_fractions(fractions: &[f64; 3]) -> Result<(), DataError> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(DataError::InvalidFractions(format!(
            "{fractions:?}: every fraction must be positive"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidFractions(format!(
            "{fractions:?} sums to {sum}"
        )));
    }
    Ok(())
}

/// Shuffles `samples` with `seed`, then cuts contiguous train, validation and
/// test slices with the given proportions.
pub fn split_three_way<T: Clone>(
    samples: &[T],
    fractions: [f64; 3],
    seed: u64,
) -> Result<[Vec<T>; 3], DataError> {
    check_fractions(&fractions)?;
    let sizes = largest_remainder(samples.len(), &fractions);
    if sizes.contains(&0) {
        return Err(DataError::InsufficientSamples(format!(
            "{} samples cannot fill a {fractions:?} split",
            samples.len()
        )));
    }
    let mut shuffled = samples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(sizes[0] + sizes[1]);
    let validation = shuffled.split_off(sizes[0]);
    Ok([shuffled, validation, test])
}
