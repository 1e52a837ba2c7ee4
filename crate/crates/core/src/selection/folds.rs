use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, SelectionError};
use crate::labeling::SentimentClass;

/// Shuffled k-fold partition of `0..n`; fold sizes differ by at most one.
/// Indices inside each fold are sorted.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(SelectionError::TooManyFolds { folds: k, samples: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = order[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(folds)
}

/// Stratified k-fold: each present class is shuffled and dealt so every
/// fold holds `floor` or `ceil` of `n_c / k` members of class `c`.
pub fn stratified_kfold(labels: &[SentimentClass], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(SelectionError::TooManyFolds {
            folds: k,
            samples: labels.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut offset = 0;
    for class in SentimentClass::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(SelectionError::ClassTooSmall {
                class,
                count: members.len(),
                folds: k,
            });
        }
        members.shuffle(&mut rng);
        let (base, extra) = (members.len() / k, members.len() % k);
        let mut start = 0;
        for f in 0..k {
            // rotate where the remainders land so fold totals stay even
            let fold = (f + offset) % k;
            let size = base + usize::from(f < extra);
            folds[fold].extend_from_slice(&members[start..start + size]);
            start += size;
        }
        offset = (offset + extra) % k;
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Indices of `0..n` not in `fold` (which must be sorted).
pub fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(n - fold.len());
    let mut it = fold.iter().peekable();
    for i in 0..n {
        if it.peek() == Some(&&i) {
            it.next();
        } else {
            out.push(i);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::class_counts;
    use proptest::prelude::*;
    use SentimentClass::*;

    #[test]
    fn kfold_examples() {
        let folds = kfold_split(10, 10, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 1));
        let folds = kfold_split(9, 3, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 3));
        assert_eq!(kfold_split(50, 7, 42).unwrap(), kfold_split(50, 7, 42).unwrap());
        assert!(matches!(kfold_split(3, 4, 0), Err(SelectionError::TooManyFolds { .. })));
    }

    #[test]
    fn stratified_examples() {
        let labels = [Negative, Neutral, Positive].repeat(3);
        for fold in stratified_kfold(&labels, 3, 1).unwrap() {
            let ys: Vec<_> = fold.iter().map(|&i| labels[i]).collect();
            assert_eq!(class_counts(&ys), [1, 1, 1]);
        }
        let mut labels = vec![Negative; 10];
        labels.extend(vec![Neutral; 20]);
        labels.extend(vec![Positive; 10]);
        let folds = stratified_kfold(&labels, 2, 5).unwrap();
        for fold in &folds {
            let ys: Vec<_> = fold.iter().map(|&i| labels[i]).collect();
            assert_eq!(class_counts(&ys), [5, 10, 5]);
        }
        assert_eq!(folds, stratified_kfold(&labels, 2, 5).unwrap());
        assert!(matches!(
            stratified_kfold(&[Negative, Neutral, Neutral, Neutral], 3, 0),
            Err(SelectionError::ClassTooSmall { class: Negative, .. })
        ));
    }

    #[test]
    fn complement_of_fold() {
        assert_eq!(complement(6, &[1, 4]), vec![0, 2, 3, 5]);
    }

    proptest! {
        #[test]
        fn kfold_partitions(n in 1usize..200, k_raw in 1usize..20, seed in any::<u64>()) {
            let k = k_raw.min(n);
            let folds = kfold_split(n, k, seed).unwrap();
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }

        #[test]
        fn stratified_proportions(counts in prop::array::uniform3(0usize..40), k in 2usize..6, seed in any::<u64>()) {
            let mut labels = Vec::new();
            for (c, &n) in counts.iter().enumerate() {
                labels.extend(std::iter::repeat(SentimentClass::from_index(c).unwrap()).take(n));
            }
            let feasible = counts.iter().all(|&c| c == 0 || c >= k) && !labels.is_empty();
            prop_assume!(feasible);
            let folds = stratified_kfold(&labels, k, seed).unwrap();
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for fold in &folds {
                let ys: Vec<_> = fold.iter().map(|&i| labels[i]).collect();
                let got = class_counts(&ys);
                for c in 0..3 {
                    let ideal = counts[c] as f64 / k as f64;
                    prop_assert!((got[c] as f64 - ideal).abs() <= 1.0);
                }
            }
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
