use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Training rows taken from a class of `n` rows: `floor(frac * n + 0.5)`,
/// nudged so both sides keep at least one row when `n >= 2`. A singleton
/// class goes to train.
pub fn train_count(n: usize, train_frac: f64) -> usize {
    let t = (train_frac * n as f64 + 0.5).floor() as usize;
    match n {
        0 => 0,
        1 => 1,
        _ => t.clamp(1, n - 1),
    }
}

/// Per-class seeded partition of row indices; both halves come back sorted.
pub fn stratified_indices(labels: &[u8], train_frac: f64, seed: u64) -> Result<SplitIndices> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!(
            "train_frac must lie in (0, 1), got {train_frac}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            return Err(Error::Stratification(format!("class {class} has no rows")));
        }
        idx.shuffle(&mut rng);
        let t = train_count(idx.len(), train_frac);
        train.extend_from_slice(&idx[..t]);
        test.extend_from_slice(&idx[t..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

pub fn stratified_split(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let s = stratified_indices(&ds.labels, train_frac, seed)?;
    Ok((ds.subset(&s.train), ds.subset(&s.test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n0: usize, n1: usize) -> Vec<u8> {
        // interleave so class membership is not contiguous
        let mut v = vec![0u8; n0];
        v.extend(std::iter::repeat_n(1u8, n1));
        let mut rng = ChaCha8Rng::seed_from_u64((n0 * 1000 + n1) as u64);
        v.shuffle(&mut rng);
        v
    }

    fn count(idx: &[usize], y: &[u8], c: u8) -> usize {
        idx.iter().filter(|&&i| y[i] == c).count()
    }

    #[test]
    fn ninety_ten_split() {
        let y = labels(90, 10);
        let s = stratified_indices(&y, 0.7, 1).unwrap();
        assert_eq!((count(&s.train, &y, 0), count(&s.train, &y, 1)), (63, 7));
        assert_eq!((count(&s.test, &y, 0), count(&s.test, &y, 1)), (27, 3));
    }

    #[test]
    fn singleton_positive_goes_to_train() {
        let y = labels(9, 1);
        let s = stratified_indices(&y, 0.7, 5).unwrap();
        assert_eq!((count(&s.train, &y, 0), count(&s.train, &y, 1)), (6, 1));
        assert_eq!((count(&s.test, &y, 0), count(&s.test, &y, 1)), (3, 0));
    }

    #[test]
    fn deterministic_per_seed() {
        let y = labels(50, 20);
        assert_eq!(
            stratified_indices(&y, 0.7, 9).unwrap(),
            stratified_indices(&y, 0.7, 9).unwrap()
        );
        assert_ne!(
            stratified_indices(&y, 0.7, 9).unwrap(),
            stratified_indices(&y, 0.7, 10).unwrap()
        );
    }

    #[test]
    fn missing_class_is_an_error() {
        assert!(matches!(
            stratified_indices(&[0, 0, 0], 0.7, 1),
            Err(Error::Stratification(_))
        ));
        assert!(stratified_indices(&[0, 1], 1.0, 1).is_err());
    }

    #[test]
    fn partition_property_exhaustive() {
        for n0 in 2..=200 {
            for n1 in (2..=200).step_by(7) {
                let mut y = vec![0u8; n0];
                y.extend(std::iter::repeat_n(1u8, n1));
                let s = stratified_indices(&y, 0.7, (n0 * n1) as u64).unwrap();
                let mut all = s.train.clone();
                all.extend(&s.test);
                all.sort_unstable();
                assert_eq!(all, (0..n0 + n1).collect::<Vec<_>>());
                for (c, n) in [(0u8, n0), (1, n1)] {
                    let t = count(&s.train, &y, c);
                    assert_eq!(t, train_count(n, 0.7));
                    assert!(t >= 1 && t < n);
                    assert_eq!(t, ((0.7 * n as f64 + 0.5).floor() as usize).clamp(1, n - 1));
                }
            }
        }
    }
}
