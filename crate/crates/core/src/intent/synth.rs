use crate::agents::{decide_canonical, NoiseRate, Strategy, StrategyKind, DEFAULT_GTFT_FORGIVENESS};
use crate::encoding::{encode_pairs, EncodedSequence, SequenceMeta};
use crate::game::Action;
use crate::util::derive_seed;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Labelled classes, in class-index order.
    pub strategies: Vec<StrategyKind>,
    /// Opponents drawn uniformly per game.
    pub opponents: Vec<StrategyKind>,
    pub samples_per_class: usize,
    pub horizon: usize,
    pub noise: NoiseRate,
    pub gtft_forgiveness: f64,
    pub seed: u64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            strategies: vec![
                StrategyKind::AllC,
                StrategyKind::AllD,
                StrategyKind::Tft,
                StrategyKind::Wsls,
            ],
            opponents: vec![StrategyKind::Random],
            samples_per_class: 1000,
            horizon: 10,
            noise: NoiseRate::ZERO,
            gtft_forgiveness: DEFAULT_GTFT_FORGIVENESS,
            seed: 0,
            train_fraction: 0.7,
            validation_fraction: 0.15,
            test_fraction: 0.15,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: String| Err(SynthError::Config(m));
        if self.strategies.is_empty() {
            return err("strategies: must not be empty".into());
        }
        let mut seen = self.strategies.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.strategies.len() {
            return err("strategies: duplicate entry".into());
        }
        if self.opponents.is_empty() {
            return err("opponents: must not be empty".into());
        }
        if self.samples_per_class == 0 {
            return err("samplesPerClass: must be at least 1".into());
        }
        if self.horizon == 0 {
            return err("horizon: must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gtft_forgiveness) {
            return err(format!("gtftForgiveness: {} outside [0, 1]", self.gtft_forgiveness));
        }
        let fr = [self.train_fraction, self.validation_fraction, self.test_fraction];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return err(format!("split fractions {fr:?} must be in [0, 1] and sum to 1"));
        }
        let counts = self.split_counts();
        for (split, (&f, n)) in [Split::Train, Split::Validation, Split::Test]
            .iter()
            .zip(fr.iter().zip(counts))
        {
            if f > 0.0 && n == 0 {
                return err(format!(
                    "samplesPerClass: {} too small to place every class in the {split:?} split",
                    self.samples_per_class
                ));
            }
        }
        Ok(())
    }

    /// Per-class sample counts for train, validation and test.
    pub fn split_counts(&self) -> [usize; 3] {
        let n = self.samples_per_class;
        let train = (n as f64 * self.train_fraction).round() as usize;
        let val = ((n as f64 * self.validation_fraction).round() as usize).min(n - train.min(n));
        let train = train.min(n);
        [train, val, n - train - val]
    }

    pub fn strategy(&self, kind: StrategyKind) -> Strategy {
        match kind {
            StrategyKind::Gtft => Strategy::Gtft {
                forgiveness: self.gtft_forgiveness,
            },
            k => k.into(),
        }
    }
}

/// One labelled sequence plus its split assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    #[serde(flatten)]
    pub seq: EncodedSequence,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: Vec<StrategyKind>,
    pub horizon: usize,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    /// Rebuilds a dataset from records, inferring classes in canonical order.
    pub fn from_records(records: Vec<DatasetRecord>) -> Result<Self, SynthError> {
        let first = records
            .first()
            .ok_or_else(|| SynthError::Config("dataset is empty".into()))?;
        let horizon = first.seq.len();
        let mut classes: Vec<StrategyKind> = Vec::new();
        for r in &records {
            let label = r
                .seq
                .label
                .ok_or_else(|| SynthError::Config(format!("{}: missing label", r.seq.meta.game_id)))?;
            if r.seq.len() != horizon {
                return Err(SynthError::Config(format!(
                    "{}: length {} differs from {horizon}",
                    r.seq.meta.game_id,
                    r.seq.len()
                )));
            }
            if !classes.contains(&label) {
                classes.push(label);
            }
        }
        classes.sort();
        Ok(Dataset {
            classes,
            horizon,
            records,
        })
    }

    pub fn class_index(&self, kind: StrategyKind) -> Option<usize> {
        self.classes.iter().position(|&c| c == kind)
    }

    pub fn split(&self, split: Split) -> Vec<&EncodedSequence> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| &r.seq)
            .collect()
    }

    /// Class-index labels for a slice of labelled sequences.
    pub fn labels(&self, seqs: &[&EncodedSequence]) -> Vec<usize> {
        seqs.iter()
            .map(|s| {
                s.label
                    .and_then(|l| self.class_index(l))
                    .expect("labelled sequence of a known class")
            })
            .collect()
    }

    pub fn class_counts(&self, split: Split) -> BTreeMap<StrategyKind, usize> {
        let mut m = BTreeMap::new();
        for s in self.split(split) {
            if let Some(l) = s.label {
                *m.entry(l).or_insert(0) += 1;
            }
        }
        m
    }
}

/// Plays one noisy dyadic game and returns `(labelled, opponent)` action pairs.
pub fn play_pair<R: Rng>(
    label: &Strategy,
    opponent: &Strategy,
    horizon: usize,
    noise: NoiseRate,
    rng: &mut R,
) -> Vec<(Action, Action)> {
    let mut own_view: Vec<(Action, Action)> = Vec::with_capacity(horizon);
    let mut opp_view: Vec<(Action, Action)> = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let a = decide_canonical(label, &own_view, noise, rng);
        let b = decide_canonical(opponent, &opp_view, noise, rng);
        own_view.push((a, b));
        opp_view.push((b, a));
    }
    own_view
}

/// Class-balanced labelled sequences with a seed-stratified split.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    let [n_train, n_val, _] = cfg.split_counts();
    let n = cfg.samples_per_class;
    let mut records = Vec::with_capacity(n * cfg.strategies.len());
    for &kind in &cfg.strategies {
        let label = cfg.strategy(kind);
        let seqs: Vec<EncodedSequence> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("synth/{kind}/{i}")));
                let opp = cfg.strategy(*cfg.opponents.choose(&mut rng).expect("non-empty pool"));
                let pairs = play_pair(&label, &opp, cfg.horizon, cfg.noise, &mut rng);
                EncodedSequence::new(
                    encode_pairs(&pairs),
                    Some(kind),
                    SequenceMeta {
                        game_id: format!("synth-{kind}-{i}"),
                        agent_index: 0,
                    },
                )
                .expect("non-empty horizon")
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("split/{kind}"))));
        let mut split = vec![Split::Test; n];
        for (rank, &i) in order.iter().enumerate() {
            split[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
        }
        records.extend(seqs.into_iter().zip(split).map(|(seq, split)| DatasetRecord { seq, split }));
    }
    Ok(Dataset {
        classes: cfg.strategies.clone(),
        horizon: cfg.horizon,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64) -> SynthConfig {
        SynthConfig {
            samples_per_class: 200,
            noise: NoiseRate::new(noise).unwrap(),
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn class_balance_and_counts() {
        let ds = gen_synthetic(&SynthConfig {
            samples_per_class: 1000,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(ds.records.len(), 4000);
        for &c in &ds.classes {
            let n = ds.records.iter().filter(|r| r.seq.label == Some(c)).count();
            assert_eq!(n, 1000);
        }
    }

    #[test]
    fn splits_stratified_and_disjoint() {
        let ds = gen_synthetic(&small(0.0)).unwrap();
        for split in [Split::Train, Split::Validation, Split::Test] {
            let counts = ds.class_counts(split);
            assert_eq!(counts.len(), 4, "{split:?}");
        }
        assert_eq!(ds.class_counts(Split::Train)[&StrategyKind::Tft], 140);
        assert_eq!(ds.class_counts(Split::Validation)[&StrategyKind::Tft], 30);
        assert_eq!(ds.class_counts(Split::Test)[&StrategyKind::Tft], 30);
        let mut ids: Vec<&str> = ds.records.iter().map(|r| r.seq.meta.game_id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), ds.records.len());
    }

    #[test]
    fn noiseless_allc_never_defects() {
        let ds = gen_synthetic(&small(0.0)).unwrap();
        for r in ds.records.iter().filter(|r| r.seq.label == Some(StrategyKind::AllC)) {
            assert!(r.seq.actions().iter().all(|a| a.is_cooperate()));
        }
    }

    #[test]
    fn noisy_allc_defection_rate() {
        // 1000 sequences x 10 rounds; 99% binomial interval for p = 0.05 is [445, 557].
        let ds = gen_synthetic(&SynthConfig {
            samples_per_class: 1000,
            noise: NoiseRate::new(0.05).unwrap(),
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        let d = ds
            .records
            .iter()
            .filter(|r| r.seq.label == Some(StrategyKind::AllC))
            .flat_map(|r| r.seq.actions())
            .filter(|a| !a.is_cooperate())
            .count();
        assert!((445..=557).contains(&d), "defections = {d}");
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(gen_synthetic(&small(0.05)).unwrap(), gen_synthetic(&small(0.05)).unwrap());
        let other = SynthConfig { seed: 12, ..small(0.05) };
        assert_ne!(gen_synthetic(&small(0.05)).unwrap(), gen_synthetic(&other).unwrap());
    }

    #[test]
    fn config_validation() {
        let bad = SynthConfig {
            test_fraction: 0.2,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            samples_per_class: 0,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            samples_per_class: 2,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        let ok = SynthConfig {
            samples_per_class: 1,
            train_fraction: 1.0,
            validation_fraction: 0.0,
            test_fraction: 0.0,
            ..SynthConfig::default()
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn records_round_trip() {
        let ds = gen_synthetic(&SynthConfig {
            samples_per_class: 20,
            ..small(0.05)
        })
        .unwrap();
        let lines: Vec<String> = ds.records.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        assert!(lines[0].contains(r#""split":"#));
        let back: Vec<DatasetRecord> = lines.iter().map(|l| serde_json::from_str(l).unwrap()).collect();
        let rebuilt = Dataset::from_records(back).unwrap();
        assert_eq!(rebuilt.records, ds.records);
        assert_eq!(rebuilt.classes, ds.classes);
    }
}
