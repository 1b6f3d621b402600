use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, mean_defined, OptimizerKind, TrainConfig};
use crate::data::Dataset;
use crate::error::{ensure, Error, Result};
use crate::model::{ModelSpec, BASE_FILTERS, DEPTHS};

/// Ranges of the eight searched hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpoSpace {
    pub depth: Vec<usize>,
    pub base_filters: Vec<usize>,
    pub spatial_dropout_rate: (f32, f32),
    pub optimizer: Vec<OptimizerKind>,
    pub alpha: (f64, f64),
    pub batch_size: (usize, usize),
    /// Exponent range γ of the learning rate 10^γ.
    pub log10_learning_rate: (f64, f64),
    pub epochs: (usize, usize),
}

impl Default for HpoSpace {
    fn default() -> Self {
        HpoSpace {
            depth: DEPTHS.to_vec(),
            base_filters: BASE_FILTERS.to_vec(),
            spatial_dropout_rate: (0.0, 0.6),
            optimizer: OptimizerKind::ALL.to_vec(),
            alpha: (0.0, 1.0),
            batch_size: (1, 128),
            log10_learning_rate: (-6.0, -1.0),
            epochs: (10, 120),
        }
    }
}

fn within<T: PartialOrd + std::fmt::Debug>(name: &str, (lo, hi): (T, T), (min, max): (T, T)) -> Result<()> {
    ensure!(
        lo <= hi && lo >= min && hi <= max,
        InvalidConfig,
        "{name} range {lo:?}..{hi:?} must be ordered and inside {min:?}..{max:?}"
    );
    Ok(())
}

fn subset<T: PartialEq + std::fmt::Debug>(name: &str, values: &[T], allowed: &[T]) -> Result<()> {
    ensure!(!values.is_empty(), InvalidConfig, "{name} has no values");
    ensure!(
        values.iter().all(|v| allowed.contains(v)),
        InvalidConfig,
        "{name} values {values:?} not all in {allowed:?}"
    );
    Ok(())
}

impl HpoSpace {
    /// Checks that the space is non-empty and inside the full search space.
    pub fn validate(&self) -> Result<()> {
        let full = HpoSpace::default();
        subset("depth", &self.depth, &full.depth)?;
        subset("base_filters", &self.base_filters, &full.base_filters)?;
        subset("optimizer", &self.optimizer, &full.optimizer)?;
        within("spatial_dropout_rate", self.spatial_dropout_rate, full.spatial_dropout_rate)?;
        within("alpha", self.alpha, full.alpha)?;
        within("batch_size", self.batch_size, full.batch_size)?;
        within("log10_learning_rate", self.log10_learning_rate, full.log10_learning_rate)?;
        within("epochs", self.epochs, full.epochs)
    }

    pub fn contains(&self, p: &HpoParams) -> bool {
        let lr = p.learning_rate.log10();
        self.depth.contains(&p.depth)
            && self.base_filters.contains(&p.base_filters)
            && self.optimizer.contains(&p.optimizer)
            && (self.spatial_dropout_rate.0..=self.spatial_dropout_rate.1).contains(&p.spatial_dropout_rate)
            && (self.alpha.0..=self.alpha.1).contains(&p.alpha)
            && (self.batch_size.0..=self.batch_size.1).contains(&p.batch_size)
            && (self.log10_learning_rate.0 - 1e-12..=self.log10_learning_rate.1 + 1e-12).contains(&lr)
            && (self.epochs.0..=self.epochs.1).contains(&p.epochs)
    }

    /// Uniform draw; the learning rate is log-uniform.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> HpoParams {
        let uniform = |rng: &mut R, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.gen_range(lo..hi) };
        let (dlo, dhi) = self.spatial_dropout_rate;
        HpoParams {
            depth: self.depth[rng.gen_range(0..self.depth.len())],
            base_filters: self.base_filters[rng.gen_range(0..self.base_filters.len())],
            spatial_dropout_rate: uniform(rng, (f64::from(dlo), f64::from(dhi))).clamp(f64::from(dlo), f64::from(dhi)) as f32,
            optimizer: self.optimizer[rng.gen_range(0..self.optimizer.len())],
            alpha: uniform(rng, self.alpha),
            batch_size: rng.gen_range(self.batch_size.0..=self.batch_size.1),
            learning_rate: 10f64.powf(uniform(rng, self.log10_learning_rate)),
            epochs: rng.gen_range(self.epochs.0..=self.epochs.1),
        }
    }
}

/// One point of the search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpoParams {
    pub depth: usize,
    pub base_filters: usize,
    pub spatial_dropout_rate: f32,
    pub optimizer: OptimizerKind,
    pub alpha: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl HpoParams {
    pub fn model_spec(&self, base: &ModelSpec) -> ModelSpec {
        ModelSpec {
            depth: self.depth,
            base_filters: self.base_filters,
            spatial_dropout_rate: self.spatial_dropout_rate,
            ..base.clone()
        }
    }

    pub fn train_config(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        let mut config = base.clone();
        config.optimizer = self.optimizer;
        config.learning_rate = self.learning_rate;
        config.batch_size = self.batch_size;
        config.epochs = self.epochs;
        config.loss.alpha = self.alpha;
        config.seed = seed;
        config
    }

    /// Trains on `dataset` and returns the mean final validation DSC over structures.
    pub fn validation_objective(&self, dataset: &Dataset, base_spec: &ModelSpec, base: &TrainConfig, seed: u64) -> Result<f64> {
        let (_, curve) = fit(&self.model_spec(base_spec), dataset, &self.train_config(base, seed))?;
        Ok(mean_defined(&curve.final_dsc()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpoTrial {
    pub trial: usize,
    pub seed: u64,
    pub params: HpoParams,
    pub objective: f64,
}

/// All trials, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct HpoResult {
    pub trials: Vec<HpoTrial>,
}

impl HpoResult {
    pub fn best(&self) -> &HpoTrial {
        &self.trials[0]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "trial",
            "depth",
            "base_filters",
            "spatial_dropout_rate",
            "optimizer",
            "alpha",
            "batch_size",
            "learning_rate",
            "epochs",
            "seed",
            "objective",
        ])?;
        for t in &self.trials {
            let p = &t.params;
            w.write_record([
                t.trial.to_string(),
                p.depth.to_string(),
                p.base_filters.to_string(),
                p.spatial_dropout_rate.to_string(),
                p.optimizer.to_string(),
                p.alpha.to_string(),
                p.batch_size.to_string(),
                p.learning_rate.to_string(),
                p.epochs.to_string(),
                t.seed.to_string(),
                t.objective.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// Configuration and training seed of trial `i`; depends only on `(seed, i)`.
pub fn trial_draw(space: &HpoSpace, seed: u64, i: usize) -> (HpoParams, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    let params = space.sample(&mut rng);
    (params, rng.gen())
}

/// Evaluates `budget` random configurations, in parallel. `objective` gets
/// the configuration and a per-trial seed; higher is better.
pub fn random_search<F>(space: &HpoSpace, budget: usize, seed: u64, objective: F) -> Result<HpoResult>
where
    F: Fn(&HpoParams, u64) -> Result<f64> + Sync,
{
    space.validate()?;
    ensure!(budget >= 1, InvalidConfig, "budget must be at least 1");
    let mut trials = (0..budget)
        .into_par_iter()
        .map(|i| {
            let (params, trial_seed) = trial_draw(space, seed, i);
            let objective = objective(&params, trial_seed)?;
            Ok(HpoTrial {
                trial: i,
                seed: trial_seed,
                params,
                objective,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // NaN objectives sort last
    trials.sort_by(|a, b| {
        let key = |t: &HpoTrial| if t.objective.is_nan() { f64::NEG_INFINITY } else { t.objective };
        key(b).total_cmp(&key(a)).then(a.trial.cmp(&b.trial))
    });
    Ok(HpoResult { trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_stay_inside_the_space() {
        let space = HpoSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = space.sample(&mut rng);
            assert!(space.contains(&p), "{p:?}");
        }
    }

    #[test]
    fn single_trial_is_best() {
        let r = random_search(&HpoSpace::default(), 1, 5, |p, _| Ok(p.alpha)).unwrap();
        assert_eq!(r.trials.len(), 1);
        assert_eq!(r.best().trial, 0);
    }

    #[test]
    fn trials_are_reproducible_and_sorted() {
        let obj = |p: &HpoParams, s: u64| Ok(p.learning_rate.log10() + (s % 7) as f64);
        let a = random_search(&HpoSpace::default(), 12, 9, obj).unwrap();
        let b = random_search(&HpoSpace::default(), 12, 9, obj).unwrap();
        assert_eq!(a, b);
        assert!(a.trials.windows(2).all(|w| w[0].objective >= w[1].objective));
        // a trial does not depend on the budget
        let c = random_search(&HpoSpace::default(), 3, 9, obj).unwrap();
        for t in &c.trials {
            assert!(a.trials.contains(t));
        }
    }

    #[test]
    fn invalid_spaces() {
        let ok = HpoSpace::default();
        for bad in [
            HpoSpace { depth: vec![], ..ok.clone() },
            HpoSpace { depth: vec![6], ..ok.clone() },
            HpoSpace { alpha: (0.5, 0.2), ..ok.clone() },
            HpoSpace { batch_size: (0, 4), ..ok.clone() },
            HpoSpace { optimizer: vec![], ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(random_search(&ok, 0, 0, |_, _| Ok(0.0)).is_err());
    }
}
