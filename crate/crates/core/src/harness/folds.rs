use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Fold index in `0..k` for every case.
///
/// Each class is shuffled with its own seeded stream, then the classes are
/// dealt round-robin in label order with one running counter, so fold sizes
/// differ by at most one and per-class counts by at most one.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    if let Some((l, members)) = classes.iter().find(|(_, m)| m.len() < k) {
        return Err(Error::InvalidArgument(format!("class {l} has {} members, fewer than {k} folds", members.len())));
    }
    let mut folds = vec![0; labels.len()];
    let mut counter = 0;
    for (&label, members) in classes.iter_mut() {
        members.shuffle(&mut rng::stream(seed, &[label as u64]));
        for &i in members.iter() {
            folds[i] = counter % k;
            counter += 1;
        }
    }
    Ok(folds)
}

/// `(train, validation)` case indices of `fold`, each ascending.
pub fn split(folds: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..folds.len()).partition(|&i| folds[i] != fold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(labels: &[usize], folds: &[usize], k: usize) -> Vec<[usize; 3]> {
        let mut c = vec![[0; 3]; k];
        for (l, f) in labels.iter().zip(folds) {
            c[*f][*l] += 1;
        }
        c
    }

    #[test]
    fn class_counts_per_fold() {
        let labels: Vec<usize> = [(0, 50), (1, 26), (2, 24)].iter().flat_map(|&(l, n)| vec![l; n]).collect();
        let folds = stratified_kfold(&labels, 5, 11).unwrap();
        for c in counts(&labels, &folds, 5) {
            assert_eq!(c.iter().sum::<usize>(), 20);
            assert_eq!(c[0], 10);
            assert!((4..=6).contains(&c[1]) && (4..=6).contains(&c[2]));
        }
        assert_eq!(folds, stratified_kfold(&labels, 5, 11).unwrap());
        assert_ne!(folds, stratified_kfold(&labels, 5, 12).unwrap());
    }

    #[test]
    fn leave_one_out() {
        let labels = vec![1; 7];
        let mut folds = stratified_kfold(&labels, 7, 0).unwrap();
        folds.sort();
        assert_eq!(folds, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn small_class_is_rejected() {
        assert!(stratified_kfold(&[0, 0, 0, 1], 2, 0).is_err());
        assert!(stratified_kfold(&[0, 0], 1, 0).is_err());
    }

    #[test]
    fn split_partitions() {
        let (tr, va) = split(&[0, 1, 0, 2], 0);
        assert_eq!((tr, va), (vec![1, 3], vec![0, 2]));
    }
}
