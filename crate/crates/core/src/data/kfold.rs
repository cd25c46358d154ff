use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::{self, streams};

/// Shuffles `items` with `(seed, KFOLD)` and deals them round-robin into `k`
/// folds, so fold sizes differ by at most one.
pub fn kfold_split<T: Clone>(items: &[T], k: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    if k < 2 {
        return Err(Error::config(format!("k-fold split needs k >= 2, got {k}")));
    }
    if k > items.len() {
        return Err(Error::config(format!(
            "cannot split {} scenes into {k} folds",
            items.len()
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut seed::rng(seed, streams::KFOLD));
    let mut folds = vec![Vec::new(); k];
    for (i, idx) in order.into_iter().enumerate() {
        folds[i % k].push(items[idx].clone());
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifty_into_five_tens() {
        let ids: Vec<String> = (0..50).map(|i| format!("s{i}")).collect();
        let folds = kfold_split(&ids, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 10));
        let mut all: Vec<String> = folds.concat();
        all.sort();
        let mut expected = ids.clone();
        expected.sort();
        assert_eq!(all, expected);
        assert_eq!(folds, kfold_split(&ids, 5, 3).unwrap());
        assert_ne!(folds, kfold_split(&ids, 5, 4).unwrap());
    }

    #[test]
    fn bad_k_is_config_error() {
        let ids = vec![1, 2, 3];
        assert!(matches!(kfold_split(&ids, 1, 0), Err(Error::Config(_))));
        assert!(matches!(kfold_split(&ids, 4, 0), Err(Error::Config(_))));
        assert_eq!(kfold_split(&ids, 3, 0).unwrap().len(), 3);
    }
}
