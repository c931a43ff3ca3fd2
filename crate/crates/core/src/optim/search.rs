//! Random search over architectures and optimizer settings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train, TrainConfig};
use crate::dataio::BlendshapeDataset;
use crate::error::{Error, Result};
use crate::featsel::FeatureMask;
use crate::lossmetrics::LossKind;
use crate::nn::Model;
use crate::par;

/// A real-valued search dimension: an explicit list, or a range sampled
/// uniformly (optionally in log space).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RealDim {
    Choice(Vec<f64>),
    Range {
        min: f64,
        max: f64,
        #[serde(default)]
        log: bool,
    },
}

impl RealDim {
    fn validate(&self, name: &str) -> Result<()> {
        match self {
            RealDim::Choice(v) if v.is_empty() => Err(Error::Config(format!("search dimension `{name}` is empty"))),
            RealDim::Range { min, max, log } => {
                if !(min.is_finite() && max.is_finite() && min <= max) || (*log && *min <= 0.0) {
                    return Err(Error::Config(format!("search dimension `{name}` has an invalid range")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            RealDim::Choice(v) => v[rng.random_range(0..v.len())],
            RealDim::Range { min, max, .. } if min == max => *min,
            RealDim::Range { min, max, log: false } => rng.random_range(*min..*max),
            RealDim::Range { min, max, log: true } => rng.random_range(min.ln()..max.ln()).exp(),
        }
    }
}

/// Dimensions left out keep the value of the base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub layer_units: Vec<Vec<usize>>,
    #[serde(default)]
    pub learning_rate: Option<RealDim>,
    #[serde(default)]
    pub weight_decay: Option<RealDim>,
    #[serde(default)]
    pub batch_size: Option<Vec<usize>>,
    #[serde(default)]
    pub loss: Option<Vec<LossKind>>,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.layer_units.is_empty() {
            return Err(Error::Config("search space has no architectures".into()));
        }
        if self.layer_units.iter().any(|a| a.is_empty() || a.contains(&0)) {
            return Err(Error::Config("search space contains an empty or zero-width architecture".into()));
        }
        if let Some(d) = &self.learning_rate {
            d.validate("learning_rate")?;
        }
        if let Some(d) = &self.weight_decay {
            d.validate("weight_decay")?;
        }
        if matches!(&self.batch_size, Some(v) if v.is_empty() || v.contains(&0)) {
            return Err(Error::Config("search dimension `batch_size` is empty or contains 0".into()));
        }
        if matches!(&self.loss, Some(v) if v.is_empty()) {
            return Err(Error::Config("search dimension `loss` is empty".into()));
        }
        Ok(())
    }

    fn sample(&self, base: &TrainConfig, rng: &mut ChaCha8Rng) -> TrialConfig {
        let layer_units = self.layer_units[rng.random_range(0..self.layer_units.len())].clone();
        let mut cfg = base.clone();
        if let Some(d) = &self.learning_rate {
            cfg.learning_rate = d.sample(rng);
        }
        if let Some(d) = &self.weight_decay {
            cfg.weight_decay = d.sample(rng);
        }
        if let Some(v) = &self.batch_size {
            cfg.batch_size = v[rng.random_range(0..v.len())];
        }
        if let Some(v) = &self.loss {
            cfg.loss = v[rng.random_range(0..v.len())];
        }
        TrialConfig { layer_units, train: cfg }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub layer_units: Vec<usize>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub trial: usize,
    pub config: TrialConfig,
    pub final_val_loss: f64,
    pub final_val_accuracy: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: TrialConfig,
    /// Sorted by final validation loss, ascending; non-finite losses last.
    pub leaderboard: Vec<LeaderboardEntry>,
}

/// Samples `trials` configurations, trains each for at most `budget_epochs`
/// and ranks them by final validation loss. Trial `i` initialises and
/// shuffles with seed `seed + i`.
#[allow(clippy::too_many_arguments)]
pub fn random_search(
    space: &SearchSpace,
    base: &TrainConfig,
    trials: usize,
    budget_epochs: usize,
    mask: &FeatureMask,
    train_ds: &BlendshapeDataset,
    val_ds: &BlendshapeDataset,
    seed: u64,
) -> Result<SearchOutcome> {
    space.validate()?;
    if trials == 0 || budget_epochs == 0 {
        return Err(Error::Config("trials and budget must both be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs: Vec<TrialConfig> = (0..trials)
        .map(|i| {
            let mut c = space.sample(base, &mut rng);
            c.train.max_epochs = budget_epochs;
            c.train.seed = seed.wrapping_add(i as u64);
            c
        })
        .collect();

    let results = par::map_range(trials, |i| -> Result<LeaderboardEntry> {
        let c = &configs[i];
        let model = Model::init(&c.layer_units, mask.clone(), c.train.seed)?;
        let out = train(&model, train_ds, val_ds, &c.train, None)?;
        let last = out.history.epochs.last().expect("at least one epoch");
        Ok(LeaderboardEntry {
            trial: i,
            config: c.clone(),
            final_val_loss: last.val.loss,
            final_val_accuracy: last.val.accuracy,
            epochs_run: out.history.epochs.len(),
        })
    });
    let mut leaderboard = results.into_iter().collect::<Result<Vec<_>>>()?;
    let key = |e: &LeaderboardEntry| {
        if e.final_val_loss.is_finite() {
            e.final_val_loss
        } else {
            f64::INFINITY
        }
    };
    leaderboard.sort_by(|a, b| key(a).total_cmp(&key(b)).then(a.trial.cmp(&b.trial)));
    Ok(SearchOutcome {
        best: leaderboard[0].config.clone(),
        leaderboard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn space_parses_choices_and_ranges() {
        let s: SearchSpace = serde_json::from_str(
            r#"{"layer_units": [[8, 4]], "learning_rate": {"min": 1e-4, "max": 1e-2, "log": true},
                "weight_decay": [0.0, 0.004], "loss": ["cce", "focal"]}"#,
        )
        .unwrap();
        s.validate().unwrap();
        assert!(matches!(s.learning_rate, Some(RealDim::Range { log: true, .. })));
        assert_eq!(s.weight_decay, Some(RealDim::Choice(vec![0.0, 0.004])));
    }

    #[test]
    fn empty_space_is_rejected() {
        let s = SearchSpace {
            layer_units: vec![],
            learning_rate: None,
            weight_decay: None,
            batch_size: None,
            loss: None,
        };
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let s = SearchSpace {
            layer_units: vec![vec![4]],
            learning_rate: Some(RealDim::Choice(vec![])),
            weight_decay: None,
            batch_size: None,
            loss: None,
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn log_range_samples_stay_in_bounds() {
        let d = RealDim::Range {
            min: 1e-5,
            max: 1e-1,
            log: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let v = d.sample(&mut rng);
            assert!((1e-5..=1e-1).contains(&v));
        }
    }
}
