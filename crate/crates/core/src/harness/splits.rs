use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::HarnessError;

/// Number of train/test partitions used by default.
pub const DEFAULT_SPLITS: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Split {
    /// Sorted query ids.
    pub train: Vec<String>,
    /// Sorted query ids.
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub splits: Vec<Split>,
}

/// Draws `n_splits` random halvings of the query set, train taking the
/// larger half on odd counts.
///
/// Split `i` uses its own ChaCha8 stream of `seed`, so each split is fixed by
/// `(seed, i)` alone and independent of input order or scheduling.
pub fn make_splits<S: AsRef<str>>(queries: &[S], n_splits: usize, seed: u64) -> Result<SplitPlan, HarnessError> {
    if n_splits < 1 {
        return Err(HarnessError::Split("n_splits must be at least 1".into()));
    }
    let mut ids: Vec<String> = queries.iter().map(|q| q.as_ref().to_string()).collect();
    ids.sort();
    ids.dedup();
    if ids.len() < 2 {
        return Err(HarnessError::Split(format!(
            "need at least 2 queries, got {}",
            ids.len()
        )));
    }
    let n_train = ids.len().div_ceil(2);
    let splits = (0..n_splits)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut shuffled = ids.clone();
            shuffled.shuffle(&mut rng);
            let mut test = shuffled.split_off(n_train);
            let mut train = shuffled;
            train.sort();
            test.sort();
            Split { train, test }
        })
        .collect();
    Ok(SplitPlan { seed, splits })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{}", 301 + i)).collect()
    }

    #[test]
    fn robust_sizes() {
        let plan = make_splits(&ids(249), DEFAULT_SPLITS, 7).unwrap();
        assert_eq!(plan.splits.len(), 30);
        for s in &plan.splits {
            assert_eq!(s.train.len(), 125);
            assert_eq!(s.test.len(), 124);
            let mut all: Vec<_> = s.train.iter().chain(&s.test).cloned().collect();
            all.sort();
            assert_eq!(all, {
                let mut v = ids(249);
                v.sort();
                v
            });
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = make_splits(&ids(50), 5, 1).unwrap();
        assert_eq!(a, make_splits(&ids(50), 5, 1).unwrap());
        let mut rev = ids(50);
        rev.reverse();
        assert_eq!(a, make_splits(&rev, 5, 1).unwrap());
        assert_ne!(a, make_splits(&ids(50), 5, 2).unwrap());
        assert_ne!(a.splits[0], a.splits[1]);
    }

    #[test]
    fn prefix_of_plan_is_stable() {
        let short = make_splits(&ids(20), 3, 9).unwrap();
        let long = make_splits(&ids(20), 10, 9).unwrap();
        assert_eq!(short.splits[..], long.splits[..3]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(make_splits(&ids(10), 0, 1).is_err());
        assert!(make_splits(&ids(1), 3, 1).is_err());
    }
}
