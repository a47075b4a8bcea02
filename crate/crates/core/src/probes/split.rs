//! Stratified train/test splits.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per class, `round(n_c * (1 - train_frac))` rows (at least 1, at most
/// `n_c - 1`) go to the test set. Both index lists are sorted.
pub fn stratified_split(y: &[usize], n_classes: usize, train_frac: f64, seed: u64, repeat: u64) -> Result<Split> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in y.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut train = Vec::with_capacity(y.len());
    let mut test = Vec::new();
    for (c, rows) in by_class.iter_mut().enumerate() {
        if rows.len() < 2 {
            return Err(Error::InsufficientClassTrials {
                label: c.to_string(),
                count: rows.len(),
            });
        }
        let n_test = ((rows.len() as f64 * (1.0 - train_frac)).round() as usize).clamp(1, rows.len() - 1);
        let mut stream = rng::stream(seed, &[repeat, c as u64]);
        rows.shuffle(&mut stream);
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_to_one_per_class() {
        let y: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let s = stratified_split(&y, 3, 0.8, 1, 0).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (48, 12));
        for c in 0..3 {
            assert_eq!(s.test.iter().filter(|&&i| y[i] == c).count(), 4);
        }
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..60).collect::<Vec<_>>());
        assert_eq!(s, stratified_split(&y, 3, 0.8, 1, 0).unwrap());
        assert_ne!(s, stratified_split(&y, 3, 0.8, 1, 1).unwrap());
    }

    #[test]
    fn small_classes_keep_both_sides() {
        let y = [0, 0, 1, 1, 1];
        let s = stratified_split(&y, 2, 0.8, 0, 0).unwrap();
        assert_eq!(s.test.len(), 2);
        assert!(matches!(
            stratified_split(&[0, 1, 1], 2, 0.8, 0, 0),
            Err(Error::InsufficientClassTrials { count: 1, .. })
        ));
    }
}
