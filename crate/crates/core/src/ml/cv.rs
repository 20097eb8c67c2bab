//! Seeded, stratified data splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::MlError;

/// A `(train, test)` pair of row indices, each sorted ascending.
pub type Split = (Vec<usize>, Vec<usize>);

fn shuffled_by_class(labels: &[i32], seed: u64) -> Vec<Vec<usize>> {
    let mut classes: Vec<i32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    classes
        .iter()
        .map(|&c| {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            idx.shuffle(&mut rng);
            idx
        })
        .collect()
}

/// Stratified `k`-fold split: each class is shuffled and dealt round-robin
/// into folds, so per-fold class counts differ by at most one.
pub fn stratified_kfold(labels: &[i32], k: usize, seed: u64) -> Result<Vec<Split>, MlError> {
    if k < 2 || k > labels.len() {
        return Err(MlError::InvalidArgument(format!(
            "folds must be in 2..={}, got {k}",
            labels.len()
        )));
    }
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next = 0;
    for idx in shuffled_by_class(labels, seed) {
        for i in idx {
            folds[next % k].push(i);
            next += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let mut test = folds[f].clone();
            test.sort_unstable();
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, v)| v)
                .copied()
                .collect();
            train.sort_unstable();
            (train, test)
        })
        .collect())
}

/// Stratified holdout with roughly `test_fraction` of each class in test.
pub fn stratified_split(labels: &[i32], test_fraction: f64, seed: u64) -> Result<Split, MlError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(MlError::InvalidArgument(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for idx in shuffled_by_class(labels, seed) {
        let n_test = ((idx.len() as f64) * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
