use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ClassRole, SpectraError};

/// Class membership of one record to be split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitInput {
    pub class_id: u32,
    pub role: ClassRole,
}

/// Indices into the split input, each list ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitResult {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Number of training records for a class of `n` records.
///
/// Floors `n * fraction`, keeping at least one record on each side once a
/// class has two or more.
pub(crate) fn train_count(n: usize, fraction: f64) -> usize {
    // The tolerance absorbs products such as 12 * (5/6) landing a hair
    // below an integer.
    let raw = (n as f64 * fraction + 1e-9).floor() as usize;
    if n >= 2 {
        raw.clamp(1, n - 1)
    } else {
        raw.min(n)
    }
}

/// Stratified per-class split.
///
/// Records of never-seen classes always land in the test set. Each class
/// is shuffled with its own stream of a ChaCha generator seeded by `seed`,
/// so the result does not depend on record order across classes.
pub fn split_dataset(records: &[SplitInput], train_fraction: f64, seed: u64) -> Result<SplitResult, SpectraError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SpectraError::BadFraction(train_fraction));
    }
    let mut by_class: BTreeMap<u32, (ClassRole, Vec<usize>)> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.class_id).or_insert_with(|| (r.role, Vec::new())).1.push(i);
    }
    let mut out = SplitResult::default();
    for (class_id, (role, mut members)) in by_class {
        if role == ClassRole::NeverSeen {
            out.test.extend(members);
            continue;
        }
        if role == ClassRole::Known && members.len() < 2 {
            return Err(SpectraError::TooFewRecords {
                class_id,
                count: members.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(class_id));
        members.shuffle(&mut rng);
        let k = train_count(members.len(), train_fraction);
        out.train.extend_from_slice(&members[..k]);
        out.test.extend_from_slice(&members[k..]);
    }
    out.train.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn class(id: u32, role: ClassRole, n: usize) -> Vec<SplitInput> {
        vec![SplitInput { class_id: id, role }; n]
    }

    #[test]
    fn five_sixths_of_twelve() {
        let r = split_dataset(&class(0, ClassRole::Known, 12), 5.0 / 6.0, 1).unwrap();
        assert_eq!((r.train.len(), r.test.len()), (10, 2));
    }

    #[test]
    fn never_seen_goes_to_test() {
        let mut recs = class(0, ClassRole::Known, 6);
        recs.extend(class(1, ClassRole::NeverSeen, 6));
        let r = split_dataset(&recs, 5.0 / 6.0, 3).unwrap();
        assert!(r.train.iter().all(|&i| i < 6));
        assert_eq!(r.test.iter().filter(|&&i| i >= 6).count(), 6);
        assert_eq!(r.train.len(), 5);
    }

    #[test]
    fn deterministic_per_seed() {
        let recs = class(4, ClassRole::Ignored, 30);
        let a = split_dataset(&recs, 0.5, 9).unwrap();
        let b = split_dataset(&recs, 0.5, 9).unwrap();
        let c = split_dataset(&recs, 0.5, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn tiny_known_class_is_an_error() {
        let err = split_dataset(&class(2, ClassRole::Known, 1), 0.5, 0).unwrap_err();
        assert!(matches!(err, SpectraError::TooFewRecords { class_id: 2, count: 1 }));
    }

    #[test]
    fn fraction_must_be_open_interval() {
        assert!(split_dataset(&class(0, ClassRole::Known, 4), 1.0, 0).is_err());
        assert!(split_dataset(&class(0, ClassRole::Known, 4), 0.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_properties(
            sizes in prop::collection::vec((2usize..40, 0u8..3), 1..6),
            fraction in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let mut recs = Vec::new();
            for (id, (n, role)) in sizes.iter().enumerate() {
                let role = [ClassRole::Known, ClassRole::Ignored, ClassRole::NeverSeen][*role as usize];
                recs.extend(class(id as u32, role, *n));
            }
            let r = split_dataset(&recs, fraction, seed).unwrap();
            let mut all: Vec<usize> = r.train.iter().chain(&r.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..recs.len()).collect::<Vec<_>>());
            for (id, (n, role)) in sizes.iter().enumerate() {
                let train = r.train.iter().filter(|&&i| recs[i].class_id == id as u32).count();
                if *role == 2 {
                    prop_assert_eq!(train, 0);
                } else {
                    prop_assert!((train as f64 - *n as f64 * fraction).abs() <= 1.0);
                }
            }
        }
    }
}
