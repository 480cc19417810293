use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use super::{adapt_capacity, effective_capacity, eta_schedule, BoostConfig, Ensemble, Mode, CAPACITY_BOUNDS};
use crate::data::{split_holdout, Dataset, HoldoutSplit};
use crate::error::{Error, Result};
use crate::loss::{LossFunction, LossKind};
use crate::tree::{fit_tree, TreeConfig};

/// Training-time view of the model on its own rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Current scores on the training rows (the train side in adaptive mode).
    pub z: Vec<f64>,
    /// Current scores on the holdout rows (adaptive mode only).
    pub z_holdout: Vec<f64>,
    /// Completed iterations.
    pub m: usize,
    /// Current capacity before the over-stepping cap (infinite modes).
    pub capacity: Option<f64>,
    /// Capacity applied to `z` after each iteration (infinite modes).
    pub capacity_trace: Vec<f64>,
    pub holdout: Option<HoldoutSplit>,
}

/// Runs one of the four training algorithms an iteration at a time.
///
/// InfiniteBoost keeps the unscaled weighted average `u` of tree outputs with
/// the incremental update `u <- (1 - eta_m) u + eta_m tree_m` and sets
/// `z = c_eff u`, where `c_eff` caps the capacity at `1 / eta_m`. When the
/// capacity does not change this is exactly `z <- (1 - eta_m) z + eta_m c tree_m`.
pub struct Trainer<'a, R> {
    config: BoostConfig,
    loss: LossFunction,
    train: Cow<'a, Dataset>,
    holdout: Option<Dataset>,
    /// Forest mode fits raw targets (0/1 for logistic) instead of gradients.
    forest_targets: Option<Vec<f64>>,
    avg: Vec<f64>,
    avg_holdout: Vec<f64>,
    noise: Option<Normal<f64>>,
    state: TrainState,
    ensemble: Ensemble,
    rng: R,
}

impl<'a, R: Rng> Trainer<'a, R> {
    pub fn new(dataset: &'a Dataset, config: BoostConfig, mut rng: R) -> Result<Self> {
        config.validate()?;
        let loss = LossFunction::new(config.loss).with_clip(config.clip_threshold)?;
        loss.check_targets(dataset)?;

        let (train, holdout, split) = if config.mode == Mode::InfiniteAdaptive {
            let split = split_holdout(dataset, config.holdout_fraction, rng.next_u64())?;
            let train = dataset.subset(&split.train_indices)?;
            let holdout = dataset.subset(&split.holdout_indices)?;
            (Cow::Owned(train), Some(holdout), Some(split))
        } else {
            (Cow::Borrowed(dataset), None, None)
        };

        let forest_targets = (config.mode == Mode::Forest).then(|| match config.loss {
            LossKind::Logistic => train.targets().iter().map(|y| (y + 1.0) / 2.0).collect(),
            _ => train.targets().to_vec(),
        });
        let noise = match (config.mode.is_infinite(), config.noise_sigma) {
            (true, Some(s)) if s > 0.0 => Some(Normal::new(0.0, s).map_err(|e| Error::InvalidConfig(e.to_string()))?),
            _ => None,
        };

        let n = train.n_samples();
        let n_holdout = holdout.as_ref().map_or(0, Dataset::n_samples);
        let state = TrainState {
            z: vec![0.0; n],
            z_holdout: vec![0.0; n_holdout],
            m: 0,
            capacity: config.initial_capacity(),
            capacity_trace: Vec::new(),
            holdout: split,
        };
        let ensemble = Ensemble::empty(&config, dataset.n_features());
        Ok(Trainer {
            loss,
            train,
            holdout,
            forest_targets,
            avg: vec![0.0; n],
            avg_holdout: vec![0.0; n_holdout],
            noise,
            state,
            ensemble,
            rng,
            config,
        })
    }

    pub fn config(&self) -> &BoostConfig {
        &self.config
    }

    pub fn loss(&self) -> &LossFunction {
        &self.loss
    }

    /// Rows the trees are fit on.
    pub fn train_data(&self) -> &Dataset {
        &self.train
    }

    pub fn holdout_data(&self) -> Option<&Dataset> {
        self.holdout.as_ref()
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn tree_config(&self) -> &TreeConfig {
        &self.config.tree
    }

    pub fn is_done(&self) -> bool {
        self.state.m >= self.config.n_trees
    }

    /// Capacity applied to the current scores (infinite modes).
    pub fn applied_capacity(&self) -> Option<f64> {
        self.ensemble.current_capacity()
    }

    fn pseudo_targets(&mut self) -> Result<Vec<f64>> {
        match &self.noise {
            None => self.loss.pseudo_targets(&self.train, &self.state.z),
            Some(normal) => {
                let noisy: Vec<f64> = self.state.z.iter().map(|z| z + self.rng.sample(normal)).collect();
                self.loss.pseudo_targets(&self.train, &noisy)
            }
        }
    }

    /// Adds one tree.
    pub fn step(&mut self) -> Result<()> {
        let m = self.state.m + 1;
        let targets = match &self.forest_targets {
            Some(t) => t.clone(),
            None => self.pseudo_targets()?,
        };
        let tree = fit_tree(&self.train, &targets, &self.config.tree, &mut self.rng)?;
        let out = tree.predict_dataset(&self.train)?;

        let (weight, applied) = match self.config.mode {
            Mode::Gb => {
                let shrinkage = self.config.shrinkage.expect("validated");
                for (z, p) in self.state.z.iter_mut().zip(&out) {
                    *z += shrinkage * p;
                }
                (1.0, None)
            }
            Mode::Forest => {
                let eta = 1.0 / m as f64;
                for (z, p) in self.state.z.iter_mut().zip(&out) {
                    *z = (1.0 - eta) * *z + eta * p;
                }
                (1.0, None)
            }
            Mode::Infinite => {
                let eta = eta_schedule(self.config.weighting, m);
                blend(&mut self.avg, &out, eta);
                let c = effective_capacity(self.state.capacity.expect("validated"), eta);
                scale_into(&mut self.state.z, &self.avg, c);
                (self.config.weighting.alpha(m), Some(c))
            }
            Mode::InfiniteAdaptive => {
                let eta = eta_schedule(self.config.weighting, m);
                let holdout = self.holdout.as_ref().expect("adaptive mode has a holdout");
                let out_holdout = tree.predict_dataset(holdout)?;
                blend(&mut self.avg, &out, eta);
                blend(&mut self.avg_holdout, &out_holdout, eta);

                let c = self.state.capacity.expect("adaptive capacity");
                scale_into(&mut self.state.z_holdout, &self.avg_holdout, effective_capacity(c, eta));
                let g = self.loss.negative_gradient(holdout, &self.state.z_holdout)?;
                let corr: f64 = g.iter().zip(&self.state.z_holdout).map(|(g, f)| g * f).sum();
                let sign = if corr > 0.0 {
                    1
                } else if corr < 0.0 {
                    -1
                } else {
                    0
                };
                let c = adapt_capacity(c, m, sign).clamp(CAPACITY_BOUNDS.0, CAPACITY_BOUNDS.1);
                self.state.capacity = Some(c);

                let applied = effective_capacity(c, eta);
                scale_into(&mut self.state.z, &self.avg, applied);
                scale_into(&mut self.state.z_holdout, &self.avg_holdout, applied);
                (self.config.weighting.alpha(m), Some(applied))
            }
        };

        if let Some(i) = self.state.z.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("score of training row {i} became non-finite at iteration {m}")));
        }
        if let Some(c) = applied {
            self.state.capacity_trace.push(c);
        }
        self.ensemble.push(tree, weight, applied);
        self.state.m = m;
        Ok(())
    }

    pub fn run(mut self) -> Result<(Ensemble, TrainState)> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> (Ensemble, TrainState) {
        (self.ensemble, self.state)
    }
}

fn blend(avg: &mut [f64], out: &[f64], eta: f64) {
    for (u, p) in avg.iter_mut().zip(out) {
        *u = (1.0 - eta) * *u + eta * p;
    }
}

fn scale_into(z: &mut [f64], avg: &[f64], c: f64) {
    for (z, u) in z.iter_mut().zip(avg) {
        *z = c * u;
    }
}

fn run_mode<R: Rng + ?Sized>(dataset: &Dataset, config: &BoostConfig, mode: Mode, rng: &mut R) -> Result<Ensemble> {
    if config.mode != mode {
        return Err(Error::InvalidConfig(format!("expected a {mode} config, got {}", config.mode)));
    }
    Ok(Trainer::new(dataset, config.clone(), rng)?.run()?.0)
}

/// Plain gradient boosting with constant shrinkage.
pub fn train_gradient_boosting<R: Rng + ?Sized>(dataset: &Dataset, config: &BoostConfig, rng: &mut R) -> Result<Ensemble> {
    run_mode(dataset, config, Mode::Gb, rng)
}

/// InfiniteBoost with a fixed capacity.
pub fn train_infiniteboost<R: Rng + ?Sized>(dataset: &Dataset, config: &BoostConfig, rng: &mut R) -> Result<Ensemble> {
    run_mode(dataset, config, Mode::Infinite, rng)
}

/// InfiniteBoost with the capacity tuned on a holdout while training.
pub fn train_infiniteboost_adaptive<R: Rng + ?Sized>(
    dataset: &Dataset,
    config: &BoostConfig,
    rng: &mut R,
) -> Result<Ensemble> {
    run_mode(dataset, config, Mode::InfiniteAdaptive, rng)
}

pub fn train_random_forest<R: Rng + ?Sized>(dataset: &Dataset, config: &BoostConfig, rng: &mut R) -> Result<Ensemble> {
    run_mode(dataset, config, Mode::Forest, rng)
}

/// Trains whichever mode `config` selects, seeded from `config.seed`.
pub fn train(dataset: &Dataset, config: &BoostConfig) -> Result<Ensemble> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    run_mode(dataset, config, config.mode, &mut rng)
}
