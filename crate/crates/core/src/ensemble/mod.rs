//! Tree ensembles: gradient boosting, InfiniteBoost (fixed and adaptive
//! capacity) and random forests, with full and staged prediction.
//!
//! All four modes share the same storage, an ordered list of trees with one
//! weight each, and differ only in how the weighted sum is scaled:
//!
//! | mode | prediction after `k` trees |
//! |------|----------------------------|
//! | gb | `shrinkage * sum(tree_j)` |
//! | forest | `sum(tree_j) / k` |
//! | infinite, infinite-adaptive | `c_k * sum(alpha_j tree_j) / sum(alpha_j)` |
//!
//! where `c_k` is the capacity that was in effect after iteration `k`.

mod model;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{sigmoid, LossKind};
use crate::tree::{DecisionTree, TreeConfig};

pub use model::FORMAT_VERSION;
pub use train::{
    train, train_gradient_boosting, train_infiniteboost, train_infiniteboost_adaptive, train_random_forest,
    TrainState, Trainer,
};

/// Starting capacity of the adaptive variant.
pub const INITIAL_ADAPTIVE_CAPACITY: f64 = 0.5;
/// Adaptive capacity is clamped to this range.
pub const CAPACITY_BOUNDS: (f64, f64) = (1e-4, 1e4);
pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Gb,
    Infinite,
    InfiniteAdaptive,
    Forest,
}

impl Mode {
    pub fn cli_name(self) -> &'static str {
        match self {
            Mode::Gb => "gb",
            Mode::Infinite => "infinite",
            Mode::InfiniteAdaptive => "infinite-adaptive",
            Mode::Forest => "forest",
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Mode::Infinite | Mode::InfiniteAdaptive)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gb" => Ok(Mode::Gb),
            "infinite" => Ok(Mode::Infinite),
            "infinite-adaptive" | "infinite_adaptive" => Ok(Mode::InfiniteAdaptive),
            "forest" => Ok(Mode::Forest),
            other => Err(Error::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }
}

/// Per-tree weights `alpha_m` of the InfiniteBoost average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `alpha_m = 1`, step `1/m`.
    Uniform,
    /// `alpha_m = m`, step `2/(m+1)`.
    #[default]
    Linear,
}

impl Weighting {
    pub fn alpha(self, m: usize) -> f64 {
        match self {
            Weighting::Uniform => 1.0,
            Weighting::Linear => m as f64,
        }
    }
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Weighting::Uniform),
            "linear" => Ok(Weighting::Linear),
            other => Err(Error::InvalidConfig(format!("unknown weighting '{other}'"))),
        }
    }
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Weighting::Uniform => "uniform",
            Weighting::Linear => "linear",
        })
    }
}

/// Step size `alpha_m / sum_{k<=m} alpha_k` of the incremental update.
pub fn eta_schedule(weighting: Weighting, m: usize) -> f64 {
    assert!(m >= 1, "iterations are 1-based");
    match weighting {
        Weighting::Uniform => 1.0 / m as f64,
        Weighting::Linear => 2.0 / (m as f64 + 1.0),
    }
}

/// Caps the capacity so that one tree's multiplier `eta_m * c` is at most 1.
pub fn effective_capacity(capacity: f64, eta_m: f64) -> f64 {
    capacity.min(1.0 / eta_m)
}

/// Holdout capacity correction `c * ((m+1)/m)^s`, `s` in `{-1, 0, 1}`.
pub fn adapt_capacity(capacity: f64, m: usize, sign: i32) -> f64 {
    let ratio = (m as f64 + 1.0) / m as f64;
    match sign.signum() {
        1 => capacity * ratio,
        -1 => capacity / ratio,
        _ => capacity,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub mode: Mode,
    pub loss: LossKind,
    pub n_trees: usize,
    /// gb only.
    pub shrinkage: Option<f64>,
    /// infinite only; the adaptive mode always starts from 1/2.
    pub capacity: Option<f64>,
    /// infinite modes only.
    pub weighting: Weighting,
    /// infinite-adaptive only.
    pub holdout_fraction: f64,
    pub seed: u64,
    pub tree: TreeConfig,
    /// Gradient clip applied before fitting each tree.
    pub clip_threshold: Option<f64>,
    /// Gaussian noise added to the scores before each gradient (infinite
    /// modes). Off by default.
    pub noise_sigma: Option<f64>,
}

impl BoostConfig {
    fn base(mode: Mode, loss: LossKind, n_trees: usize) -> Self {
        BoostConfig {
            mode,
            loss,
            n_trees,
            shrinkage: None,
            capacity: None,
            weighting: Weighting::default(),
            holdout_fraction: DEFAULT_HOLDOUT_FRACTION,
            seed: 0,
            tree: if mode == Mode::Forest { TreeConfig::forest() } else { TreeConfig::default() },
            clip_threshold: loss.default_clip(),
            noise_sigma: None,
        }
    }

    pub fn gradient_boosting(loss: LossKind, n_trees: usize, shrinkage: f64) -> Self {
        BoostConfig { shrinkage: Some(shrinkage), ..Self::base(Mode::Gb, loss, n_trees) }
    }

    pub fn infinite(loss: LossKind, n_trees: usize, capacity: f64) -> Self {
        BoostConfig { capacity: Some(capacity), ..Self::base(Mode::Infinite, loss, n_trees) }
    }

    pub fn infinite_adaptive(loss: LossKind, n_trees: usize) -> Self {
        Self::base(Mode::InfiniteAdaptive, loss, n_trees)
    }

    pub fn random_forest(loss: LossKind, n_trees: usize) -> Self {
        Self::base(Mode::Forest, loss, n_trees)
    }

    pub fn with_tree(mut self, tree: TreeConfig) -> Self {
        self.tree = tree;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_weighting(mut self, weighting: Weighting) -> Self {
        self.weighting = weighting;
        self
    }

    /// Capacity the model starts from, if the mode has one.
    pub fn initial_capacity(&self) -> Option<f64> {
        match self.mode {
            Mode::Infinite => self.capacity,
            Mode::InfiniteAdaptive => Some(INITIAL_ADAPTIVE_CAPACITY),
            Mode::Gb | Mode::Forest => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        self.tree.validate()?;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        match self.mode {
            Mode::Gb => match self.shrinkage {
                None => return fail("gb mode requires a shrinkage".into()),
                Some(s) if !positive(s) => return fail(format!("shrinkage must be positive, got {s}")),
                _ => {}
            },
            Mode::Infinite => match self.capacity {
                None => return fail("infinite mode requires a capacity".into()),
                Some(c) if !positive(c) => return fail(format!("capacity must be positive, got {c}")),
                _ => {}
            },
            Mode::InfiniteAdaptive => {
                if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
                    return fail(format!("holdout fraction {} not in (0, 1)", self.holdout_fraction));
                }
            }
            Mode::Forest => {}
        }
        if self.shrinkage.is_some() && self.mode != Mode::Gb {
            return fail(format!("shrinkage does not apply to {} mode", self.mode));
        }
        if self.capacity.is_some() && self.mode != Mode::Infinite {
            return fail(format!("a fixed capacity does not apply to {} mode", self.mode));
        }
        if let Some(t) = self.clip_threshold {
            if !positive(t) {
                return fail(format!("clip threshold must be positive, got {t}"));
            }
        }
        if let Some(s) = self.noise_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return fail(format!("noise sigma must be non-negative, got {s}"));
            }
        }
        Ok(())
    }
}

/// A trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    mode: Mode,
    loss: LossKind,
    n_features: usize,
    trees: Vec<DecisionTree>,
    weights: Vec<f64>,
    shrinkage: Option<f64>,
    capacity: Option<f64>,
    weighting: Option<Weighting>,
    /// Infinite modes: capacity applied after each iteration.
    capacity_trace: Vec<f64>,
    tree_config: TreeConfig,
}

impl Ensemble {
    /// Empty model for `config`; predicts zero everywhere.
    pub fn empty(config: &BoostConfig, n_features: usize) -> Self {
        Ensemble {
            mode: config.mode,
            loss: config.loss,
            n_features,
            trees: Vec::new(),
            weights: Vec::new(),
            shrinkage: config.shrinkage,
            capacity: config.initial_capacity(),
            weighting: config.mode.is_infinite().then_some(config.weighting),
            capacity_trace: Vec::new(),
            tree_config: config.tree,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn shrinkage(&self) -> Option<f64> {
        self.shrinkage
    }

    /// Configured (or initial adaptive) capacity.
    pub fn capacity(&self) -> Option<f64> {
        self.capacity
    }

    /// Capacity applied to predictions of the full model.
    pub fn current_capacity(&self) -> Option<f64> {
        match self.capacity_trace.last() {
            Some(&c) => Some(c),
            None => self.capacity,
        }
    }

    pub fn capacity_trace(&self) -> &[f64] {
        &self.capacity_trace
    }

    pub fn weighting(&self) -> Option<Weighting> {
        self.weighting
    }

    pub fn tree_config(&self) -> &TreeConfig {
        &self.tree_config
    }

    pub(crate) fn push(&mut self, tree: DecisionTree, weight: f64, capacity: Option<f64>) {
        self.trees.push(tree);
        self.weights.push(weight);
        if let Some(c) = capacity {
            self.capacity_trace.push(c);
        }
    }

    /// Factor applied to `sum_{j<=k} w_j tree_j(x)` for the first `k` trees.
    fn multiplier(&self, k: usize, weight_sum: f64) -> f64 {
        if k == 0 {
            return 0.0;
        }
        match self.mode {
            Mode::Gb => self.shrinkage.expect("gb model has a shrinkage"),
            Mode::Forest => 1.0 / k as f64,
            Mode::Infinite | Mode::InfiniteAdaptive => self.capacity_trace[k - 1] / weight_sum,
        }
    }

    fn check_dims(&self, dataset: &Dataset) -> Result<()> {
        if dataset.n_features() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, found: dataset.n_features() });
        }
        Ok(())
    }

    /// Raw scores `F(x)` for every row.
    pub fn predict(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        self.check_dims(dataset)?;
        let mut out = vec![0.0; dataset.n_samples()];
        let mut weight_sum = 0.0;
        for (tree, &w) in self.trees.iter().zip(&self.weights) {
            weight_sum += w;
            for (i, acc) in out.iter_mut().enumerate() {
                *acc += w * tree.predict_row(dataset.row(i));
            }
        }
        let scale = self.multiplier(self.trees.len(), weight_sum);
        out.iter_mut().for_each(|v| *v *= scale);
        Ok(out)
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, found: row.len() });
        }
        let mut acc = 0.0;
        let mut weight_sum = 0.0;
        for (tree, &w) in self.trees.iter().zip(&self.weights) {
            weight_sum += w;
            acc += w * tree.predict_row(row);
        }
        Ok(acc * self.multiplier(self.trees.len(), weight_sum))
    }

    /// Positive-class probabilities for logistic-loss models. Boosting modes
    /// apply the sigmoid; a forest already averages 0/1 leaf means.
    pub fn predict_proba(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        if self.loss != LossKind::Logistic {
            return Err(Error::InvalidConfig(format!("probabilities need a logloss model, this one is {}", self.loss)));
        }
        let scores = self.predict(dataset)?;
        Ok(match self.mode {
            Mode::Forest if !self.trees.is_empty() => scores,
            Mode::Forest => vec![0.5; scores.len()],
            _ => scores.into_iter().map(sigmoid).collect(),
        })
    }

    /// Iteration counts reported by [`Ensemble::staged_predict`].
    pub fn stages(&self, step: usize) -> Result<Vec<usize>> {
        if step == 0 {
            return Err(Error::InvalidConfig("step must be at least 1".into()));
        }
        let m = self.trees.len();
        let mut ks: Vec<usize> = (step..=m).step_by(step).collect();
        if m > 0 && ks.last() != Some(&m) {
            ks.push(m);
        }
        Ok(ks)
    }

    /// Predictions of the first `k` trees for `k = step, 2*step, ...` and the
    /// full model, each with the normalisation and capacity in effect at `k`.
    pub fn staged_predict(&self, dataset: &Dataset, step: usize) -> Result<Vec<(usize, Vec<f64>)>> {
        let mut out = Vec::new();
        self.staged_predict_with(dataset, step, |k, p| out.push((k, p.to_vec())))?;
        Ok(out)
    }

    /// Streaming form of [`Ensemble::staged_predict`]; one pass over the trees.
    pub fn staged_predict_with(
        &self,
        dataset: &Dataset,
        step: usize,
        mut visit: impl FnMut(usize, &[f64]),
    ) -> Result<()> {
        self.check_dims(dataset)?;
        let stages = self.stages(step)?;
        let n = dataset.n_samples();
        let mut acc = vec![0.0; n];
        let mut scaled = vec![0.0; n];
        let mut weight_sum = 0.0;
        let mut next = stages.iter().peekable();
        for (j, (tree, &w)) in self.trees.iter().zip(&self.weights).enumerate() {
            weight_sum += w;
            for (i, a) in acc.iter_mut().enumerate() {
                *a += w * tree.predict_row(dataset.row(i));
            }
            let k = j + 1;
            if next.peek() == Some(&&k) {
                next.next();
                let scale = self.multiplier(k, weight_sum);
                for (s, a) in scaled.iter_mut().zip(&acc) {
                    *s = a * scale;
                }
                visit(k, &scaled);
            }
        }
        Ok(())
    }
}
