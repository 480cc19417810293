use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use infiniteboost::ensemble::{BoostConfig, Mode, Weighting, DEFAULT_HOLDOUT_FRACTION};
use infiniteboost::loss::LossKind;
use infiniteboost::tree::TreeConfig;

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "infiniteboost", version, about = "Train and evaluate InfiniteBoost, gradient boosting and random forests")]
pub struct Cli {
    /// Worker threads (default: one per core)
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write it as JSON
    Train(TrainCmd),
    /// Write one prediction per line
    Predict(PredictCmd),
    /// Score a model on a labelled dataset
    Evaluate(EvaluateCmd),
    /// Train, then write train and test metrics per iteration
    #[command(alias = "learning-curve")]
    Curve(CurveCmd),
    /// Train an InfiniteBoost model while tracing its fixed-point residual
    Diagnose(DiagnoseCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Libsvm,
}

#[derive(Args, Debug, Clone)]
pub struct DataOpts {
    /// Target column name (or 0-based index with --no-header) for CSV input
    #[arg(long, default_value = "target")]
    pub target: String,
    /// CSV input has no header row
    #[arg(long)]
    pub no_header: bool,
    /// Input format; guessed from the extension when omitted (.csv is CSV, anything else LibSVM)
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Read qid groups from LibSVM input
    #[arg(long)]
    pub ranking: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Gb,
    Infinite,
    InfiniteAdaptive,
    Forest,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Gb => Mode::Gb,
            ModeArg::Infinite => Mode::Infinite,
            ModeArg::InfiniteAdaptive => Mode::InfiniteAdaptive,
            ModeArg::Forest => Mode::Forest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Mse,
    Logloss,
    Rank,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Mse => LossKind::SquaredError,
            LossArg::Logloss => LossKind::Logistic,
            LossArg::Rank => LossKind::PairwiseRank,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Uniform,
    Linear,
}

/// `--max-depth 7` or `--max-depth none`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Depth(pub Option<usize>);

impl std::str::FromStr for Depth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" | "unlimited" => Ok(Depth(None)),
            _ => s.parse().map(|d| Depth(Some(d))).map_err(|_| format!("expected a depth or 'none', got '{s}'")),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct ModelOpts {
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "mse")]
    pub loss: LossArg,
    #[arg(long)]
    pub trees: usize,
    /// Fixed capacity (infinite mode)
    #[arg(long)]
    pub capacity: Option<f64>,
    /// Learning rate (gb mode)
    #[arg(long)]
    pub shrinkage: Option<f64>,
    /// Tree weights of the InfiniteBoost average [default: linear]
    #[arg(long, value_enum)]
    pub weighting: Option<WeightingArg>,
    /// Share of rows held out to tune capacity (infinite-adaptive mode) [default: 0.05]
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Std. dev. of Gaussian noise added to scores before each gradient (infinite modes)
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Clip pseudo-targets to this magnitude [default: 1e4 for mse and rank, off for logloss]
    #[arg(long)]
    pub clip_threshold: Option<f64>,
    /// Maximum tree depth or 'none' [default: 7, forest: none]
    #[arg(long)]
    pub max_depth: Option<Depth>,
    /// Fraction of rows per tree [default: 0.7, forest: bootstrap]
    #[arg(long)]
    pub subsample: Option<f64>,
    /// Fraction of features tried at each split [default: 0.7]
    #[arg(long)]
    pub max_features: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub min_samples_leaf: usize,
}

impl ModelOpts {
    /// Validates flag combinations and materialises every default.
    pub fn resolve(&self) -> Result<BoostConfig, CliError> {
        let mode = Mode::from(self.mode);
        let loss = LossKind::from(self.loss);
        let usage = |m: String| Err(CliError::Usage(m));

        if self.shrinkage.is_some() && mode != Mode::Gb {
            return usage(format!("--shrinkage only applies to gb mode, not {mode}"));
        }
        if self.capacity.is_some() && mode != Mode::Infinite {
            return usage(format!("--capacity only applies to infinite mode, not {mode}"));
        }
        if self.weighting.is_some() && !mode.is_infinite() {
            return usage(format!("--weighting only applies to infinite modes, not {mode}"));
        }
        if self.holdout_fraction.is_some() && mode != Mode::InfiniteAdaptive {
            return usage(format!("--holdout-fraction only applies to infinite-adaptive mode, not {mode}"));
        }
        if self.noise_sigma.is_some() && !mode.is_infinite() {
            return usage(format!("--noise-sigma only applies to infinite modes, not {mode}"));
        }
        if mode == Mode::Forest && self.subsample.is_some() {
            return usage("--subsample does not apply to forest mode, which uses bootstrap samples".into());
        }
        if loss == LossKind::PairwiseRank && mode == Mode::InfiniteAdaptive {
            return usage("rank loss needs a fixed capacity: use --mode infinite --capacity C".into());
        }
        if loss == LossKind::PairwiseRank && mode == Mode::Forest {
            return usage("forest mode does not support rank loss".into());
        }

        let mut config = match mode {
            Mode::Gb => match self.shrinkage {
                Some(s) => BoostConfig::gradient_boosting(loss, self.trees, s),
                None => return usage("gb mode requires --shrinkage".into()),
            },
            Mode::Infinite => match self.capacity {
                Some(c) => BoostConfig::infinite(loss, self.trees, c),
                None => return usage("infinite mode requires --capacity".into()),
            },
            Mode::InfiniteAdaptive => BoostConfig::infinite_adaptive(loss, self.trees),
            Mode::Forest => BoostConfig::random_forest(loss, self.trees),
        };
        config.seed = self.seed;
        config.weighting = match self.weighting {
            Some(WeightingArg::Uniform) => Weighting::Uniform,
            Some(WeightingArg::Linear) | None => Weighting::Linear,
        };
        config.holdout_fraction = self.holdout_fraction.unwrap_or(DEFAULT_HOLDOUT_FRACTION);
        config.noise_sigma = self.noise_sigma;
        if self.clip_threshold.is_some() {
            config.clip_threshold = self.clip_threshold;
        }
        let base = if mode == Mode::Forest { TreeConfig::forest() } else { TreeConfig::default() };
        config.tree = TreeConfig {
            max_depth: self.max_depth.map_or(base.max_depth, |d| d.0),
            subsample: self.subsample.unwrap_or(base.subsample),
            max_features: self.max_features.unwrap_or(base.max_features),
            min_samples_leaf: self.min_samples_leaf,
            bootstrap: base.bootstrap,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
pub struct TrainCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub data_opts: DataOpts,
    #[command(flatten)]
    pub model_opts: ModelOpts,
    /// Output model path; the run manifest is written next to it
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictCmd {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub data_opts: DataOpts,
    /// CSV input has no target column
    #[arg(long)]
    pub unlabeled: bool,
    /// Output probabilities instead of raw scores (logloss models)
    #[arg(long)]
    pub proba: bool,
    /// Output path [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateCmd {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub data_opts: DataOpts,
    /// mse, auc or ndcg@K
    #[arg(long)]
    pub metric: String,
}

#[derive(Args, Debug)]
pub struct CurveCmd {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub data_opts: DataOpts,
    #[command(flatten)]
    pub model_opts: ModelOpts,
    /// mse, auc or ndcg@K
    #[arg(long)]
    pub metric: String,
    #[arg(long, default_value_t = 10)]
    pub step: usize,
    /// Learning-curve CSV path; the run manifest is written next to it
    #[arg(long)]
    pub out: PathBuf,
    /// Also save the trained model here
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DiagnoseCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub data_opts: DataOpts,
    #[command(flatten)]
    pub model_opts: ModelOpts,
    #[arg(long, default_value_t = 10)]
    pub probe_every: usize,
    /// Trees averaged to estimate the expected tree at the current scores
    #[arg(long, default_value_t = 32)]
    pub probe_trees: usize,
    /// Trace CSV path; the run manifest is written next to it
    #[arg(long)]
    pub out: PathBuf,
}
