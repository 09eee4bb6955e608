use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold split.
///
/// Each class is shuffled on its own seeded stream and dealt round-robin into
/// folds; positives start where negatives stopped so fold sizes differ by at
/// most one. Index lists come back sorted.
pub fn stratified_kfold(labels: &[bool], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "k must be at least 2, got {k}"
        )));
    }
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    for class in [&neg, &pos] {
        if class.len() < k {
            return Err(Error::ClassTooSmall {
                count: class.len(),
                k,
            });
        }
    }

    let mut assignment = vec![0usize; labels.len()];
    let mut offset = 0;
    for (stream, class) in [(0u64, neg), (1u64, pos)] {
        let mut members = class;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        members.shuffle(&mut rng);
        for (j, idx) in members.iter().enumerate() {
            assignment[*idx] = (offset + j) % k;
        }
        offset = (offset + members.len()) % k;
    }

    Ok((0..k)
        .map(|f| {
            let (test, train) = (0..labels.len()).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(fold: &Fold, labels: &[bool]) -> (usize, usize) {
        let p = fold.test.iter().filter(|&&i| labels[i]).count();
        (fold.test.len() - p, p)
    }

    #[test]
    fn five_by_five_gives_one_each() {
        let labels: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let folds = stratified_kfold(&labels, 5, 3).unwrap();
        for f in &folds {
            assert_eq!(counts(f, &labels), (1, 1));
        }
    }

    #[test]
    fn folds_partition_indices() {
        let labels: Vec<bool> = (0..37).map(|i| i % 3 == 0).collect();
        let folds = stratified_kfold(&labels, 5, 11).unwrap();
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.train.len() + f.test.len(), 37);
            assert!(f.train.iter().all(|i| !f.test.contains(i)));
        }
    }

    #[test]
    fn class_ratio_within_one_sample() {
        let labels: Vec<bool> = (0..53).map(|i| i % 4 == 1).collect();
        let n_pos = labels.iter().filter(|&&l| l).count() as f64;
        let n = labels.len() as f64;
        for f in stratified_kfold(&labels, 5, 0).unwrap() {
            let (_, p) = counts(&f, &labels);
            let expected = n_pos / n * f.test.len() as f64;
            assert!((p as f64 - expected).abs() <= 1.0);
        }
    }

    #[test]
    fn label_order_does_not_change_per_fold_class_counts() {
        let sorted: Vec<bool> = (0..40).map(|i| i >= 25).collect();
        let interleaved: Vec<bool> = (0..40).map(|i| i % 8 < 3).collect();
        let mut a: Vec<_> = stratified_kfold(&sorted, 5, 9)
            .unwrap()
            .iter()
            .map(|f| counts(f, &sorted))
            .collect();
        let mut b: Vec<_> = stratified_kfold(&interleaved, 5, 9)
            .unwrap()
            .iter()
            .map(|f| counts(f, &interleaved))
            .collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_given_seed() {
        let labels: Vec<bool> = (0..30).map(|i| i % 2 == 0).collect();
        assert_eq!(
            stratified_kfold(&labels, 5, 4).unwrap(),
            stratified_kfold(&labels, 5, 4).unwrap()
        );
        assert_ne!(
            stratified_kfold(&labels, 5, 4).unwrap(),
            stratified_kfold(&labels, 5, 5).unwrap()
        );
    }

    #[test]
    fn small_class_rejected() {
        let labels = [true, true, false, false, false, false];
        assert!(matches!(
            stratified_kfold(&labels, 3, 0),
            Err(Error::ClassTooSmall { count: 2, k: 3 })
        ));
    }
}
