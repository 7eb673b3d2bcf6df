use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, DatasetError};

#[derive(Debug, Clone, PartialEq)]
pub enum SplitMode {
    /// `round(n * train_fraction)` samples go to train, chosen by a seeded
    /// shuffle.
    RandomRatio { train_fraction: f64, seed: u64 },
    /// Every sample of the named scenarios goes to test.
    ScenarioHoldout { held_out: Vec<String> },
}

/// Partitions the dataset into (train, test). Both keep file order.
pub fn split(dataset: &Dataset, mode: &SplitMode) -> Result<(Dataset, Dataset), DatasetError> {
    let n = dataset.len();
    let in_train: Vec<bool> = match mode {
        SplitMode::RandomRatio { train_fraction, seed } => {
            let f = *train_fraction;
            if !(f > 0.0 && f < 1.0) {
                return Err(DatasetError::InvalidSplit(format!(
                    "train fraction {f} is not in (0, 1)"
                )));
            }
            let n_train = (n as f64 * f).round() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            let mut mask = vec![false; n];
            for &i in &order[..n_train] {
                mask[i] = true;
            }
            mask
        }
        SplitMode::ScenarioHoldout { held_out } => {
            if held_out.is_empty() {
                return Err(DatasetError::InvalidSplit("no scenarios to hold out".into()));
            }
            for label in held_out {
                if !dataset.samples().any(|s| s.scenario.as_ref() == Some(label)) {
                    return Err(DatasetError::UnknownScenario(label.clone()));
                }
            }
            dataset
                .samples()
                .map(|s| !s.scenario.as_ref().is_some_and(|sc| held_out.contains(sc)))
                .collect()
        }
    };
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (entry, keep) in dataset.entries.iter().zip(in_train) {
        if keep { &mut train } else { &mut test }.push(entry.clone());
    }
    Ok((dataset.with_entries(train), dataset.with_entries(test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::fixtures;
    use crate::dataset::DatasetEntry;
    use proptest::prelude::*;

    fn synthetic(n: usize) -> Dataset {
        let base = fixtures();
        let entries: Vec<DatasetEntry> = (0..n)
            .map(|i| {
                let mut e = base.entries[i % base.len()].clone();
                e.sample.id = format!("s{i}");
                e.record.id = Some(e.sample.id.clone());
                e
            })
            .collect();
        base.with_entries(entries)
    }

    fn ids(ds: &Dataset) -> Vec<String> {
        ds.samples().map(|s| s.id.clone()).collect()
    }

    #[test]
    fn ratio_split_is_stable() {
        let ds = synthetic(1000);
        let mode = SplitMode::RandomRatio {
            train_fraction: 0.6,
            seed: 42,
        };
        let (train, test) = split(&ds, &mode).unwrap();
        assert_eq!((train.len(), test.len()), (600, 400));
        for _ in 0..2 {
            let (t2, s2) = split(&ds, &mode).unwrap();
            assert_eq!(ids(&t2), ids(&train));
            assert_eq!(ids(&s2), ids(&test));
        }
        let (other, _) = split(
            &ds,
            &SplitMode::RandomRatio {
                train_fraction: 0.6,
                seed: 43,
            },
        )
        .unwrap();
        assert_ne!(ids(&other), ids(&train));
    }

    #[test]
    fn holdout() {
        let ds = fixtures();
        let (train, test) = split(
            &ds,
            &SplitMode::ScenarioHoldout {
                held_out: vec!["chitchat".into()],
            },
        )
        .unwrap();
        assert!(train.samples().all(|s| s.scenario.as_deref() != Some("chitchat")));
        assert_eq!(ids(&test), ["example-1"]);
        assert_eq!(
            split(
                &ds,
                &SplitMode::ScenarioHoldout {
                    held_out: vec!["work".into()]
                }
            ),
            Err(DatasetError::UnknownScenario("work".into()))
        );
    }

    #[test]
    fn bad_fractions() {
        for f in [0.0, 1.0, -0.5, f64::NAN] {
            let mode = SplitMode::RandomRatio {
                train_fraction: f,
                seed: 1,
            };
            assert!(matches!(split(&fixtures(), &mode), Err(DatasetError::InvalidSplit(_))));
        }
    }

    proptest! {
        #[test]
        fn partitions_cover_and_are_disjoint(n in 0usize..60, f in 0.01f64..0.99, seed: u64) {
            let ds = synthetic(n);
            let (train, test) = split(&ds, &SplitMode::RandomRatio { train_fraction: f, seed }).unwrap();
            prop_assert_eq!(train.len() + test.len(), n);
            prop_assert_eq!(train.len(), (n as f64 * f).round() as usize);
            let mut all: Vec<String> = ids(&train).into_iter().chain(ids(&test)).collect();
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), n);
        }
    }
}
