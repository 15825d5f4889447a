//! Stratified train/test splitting, deterministic under a seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DacnError, Result};

use super::window::SampleSet;

/// Split `samples` into (train, held-out) with `ratio` of each class going
/// to train. Shuffling is per class and derived from `seed`, so the split is
/// independent of sample order within a class only through the seed.
pub fn split(samples: &SampleSet, ratio: f64, seed: u64) -> Result<(SampleSet, SampleSet)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DacnError::InvalidArgument(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let classes = samples.distinct_classes();
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in classes {
        let mut idx: Vec<usize> = (0..samples.len())
            .filter(|&i| samples.labels[i] == class)
            .collect();
        if idx.len() < 2 {
            return Err(DacnError::InvalidArgument(format!(
                "class {class} has {} sample(s); need at least 2 to split",
                idx.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(class as u64));
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64 * ratio).round() as usize).clamp(1, idx.len() - 1);
        train_idx.extend_from_slice(&idx[..n_train]);
        test_idx.extend_from_slice(&idx[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((samples.select(&train_idx), samples.select(&test_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn labeled_set(labels: Vec<usize>) -> SampleSet {
        let n = labels.len();
        let x = Array3::from_shape_fn((n, 1, 2), |(i, _, j)| (i * 2 + j) as f64);
        SampleSet {
            x,
            labels,
            mode_ids: vec!["M1".into(); n],
        }
    }

    #[test]
    fn proportions_per_class() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let set = labeled_set(labels);
        let (train, test) = split(&set, 0.8, 3).unwrap();
        assert_eq!(train.class_counts(2), vec![40, 40]);
        assert_eq!(test.class_counts(2), vec![10, 10]);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let set = labeled_set(labels);
        let (a_train, a_test) = split(&set, 0.7, 9).unwrap();
        let (b_train, b_test) = split(&set, 0.7, 9).unwrap();
        assert_eq!(a_train, b_train);
        assert_eq!(a_test, b_test);
        let (c_train, _) = split(&set, 0.7, 10).unwrap();
        assert_ne!(a_train.x, c_train.x);
    }

    #[test]
    fn union_and_disjointness_on_toy_set() {
        // 50 samples with a unique value per sample: the split must cover
        // every sample exactly once.
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let set = labeled_set(labels);
        let (train, test) = split(&set, 0.6, 1).unwrap();
        let mut seen: Vec<i64> = train
            .x
            .outer_iter()
            .chain(test.x.outer_iter())
            .map(|w| w[[0, 0]] as i64)
            .collect();
        assert_eq!(seen.len(), 50);
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 50, "overlap between train and test");
    }

    #[test]
    fn tiny_class_errors() {
        let set = labeled_set(vec![0, 0, 1]);
        assert!(split(&set, 0.5, 0).is_err());
    }

    #[test]
    fn bad_ratio_errors() {
        let set = labeled_set(vec![0, 0, 1, 1]);
        assert!(split(&set, 0.0, 0).is_err());
        assert!(split(&set, 1.0, 0).is_err());
    }
}
