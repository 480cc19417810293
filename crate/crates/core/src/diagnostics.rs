//! Empirical checks of the InfiniteBoost fixed point.
//!
//! At convergence the training scores satisfy `z = c * T(z)`, where `T(z)` is
//! the expected output of a tree fit to the negative gradient at `z` (the
//! expectation runs over row and feature sampling). `T(z)` is estimated by
//! averaging freshly fit probe trees that never enter the ensemble.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::ensemble::{BoostConfig, Ensemble, Trainer};
use crate::error::{Error, Result};
use crate::loss::LossFunction;
use crate::tree::{fit_tree, TreeConfig};

pub const TRACE_HEADER: &str = "iteration,residual,objective,capacity";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    /// `||z - c * T_hat(z)||_2`
    pub residual_norm: f64,
    /// `c * sqrt(sum_i Var(tree(x_i)) / n_probe_trees)`: the part of
    /// `residual_norm` expected from Monte-Carlo error alone. Zero with a
    /// single probe.
    pub noise_floor: f64,
    pub n_probe_trees: usize,
    pub z_norm: f64,
}

/// Monte-Carlo estimate of `T(z)`: the mean prediction on every row of
/// `n_probe_trees` trees fit to the pseudo-targets at `z`.
pub fn mean_tree_response<R: Rng + ?Sized>(
    dataset: &Dataset,
    loss: &LossFunction,
    z: &[f64],
    tree_config: &TreeConfig,
    n_probe_trees: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(probe_moments(dataset, loss, z, tree_config, n_probe_trees, rng)?.0)
}

/// Per-row mean of the probe outputs and the sum over rows of their sample
/// variances.
fn probe_moments<R: Rng + ?Sized>(
    dataset: &Dataset,
    loss: &LossFunction,
    z: &[f64],
    tree_config: &TreeConfig,
    n_probe_trees: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    if n_probe_trees == 0 {
        return Err(Error::InvalidConfig("need at least one probe tree".into()));
    }
    let targets = loss.pseudo_targets(dataset, z)?;
    let seeds: Vec<u64> = (0..n_probe_trees).map(|_| rng.next_u64()).collect();
    let probe = |&seed: &u64| -> Result<Vec<f64>> {
        let tree = fit_tree(dataset, &targets, tree_config, &mut ChaCha8Rng::seed_from_u64(seed))?;
        tree.predict_dataset(dataset)
    };

    #[cfg(feature = "parallel")]
    let outputs: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        seeds.par_iter().map(probe).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let outputs: Vec<Vec<f64>> = seeds.iter().map(probe).collect::<Result<_>>()?;

    let k = n_probe_trees as f64;
    let mut mean = vec![0.0; dataset.n_samples()];
    for out in &outputs {
        for (m, o) in mean.iter_mut().zip(out) {
            *m += o;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut variance = 0.0;
    if n_probe_trees > 1 {
        for out in &outputs {
            variance += out.iter().zip(&mean).map(|(o, m)| (o - m) * (o - m)).sum::<f64>();
        }
        variance /= k - 1.0;
    }
    Ok((mean, variance))
}

/// Fixed-point residual of arbitrary scores `z` under capacity `capacity`.
pub fn residual_at<R: Rng + ?Sized>(
    dataset: &Dataset,
    loss: &LossFunction,
    z: &[f64],
    capacity: f64,
    tree_config: &TreeConfig,
    n_probe_trees: usize,
    rng: &mut R,
) -> Result<FixedPointReport> {
    let (t_hat, variance) = probe_moments(dataset, loss, z, tree_config, n_probe_trees, rng)?;
    let residual_norm = z.iter().zip(&t_hat).map(|(z, t)| (z - capacity * t).powi(2)).sum::<f64>().sqrt();
    let noise_floor = capacity * (variance / n_probe_trees as f64).sqrt();
    let z_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(FixedPointReport { residual_norm, noise_floor, n_probe_trees, z_norm })
}

/// Residual of a trained InfiniteBoost model on `dataset`, with probe trees
/// grown under the model's own tree settings and the default gradient clip.
pub fn fixed_point_residual<R: Rng + ?Sized>(
    ensemble: &Ensemble,
    dataset: &Dataset,
    n_probe_trees: usize,
    rng: &mut R,
) -> Result<FixedPointReport> {
    if !ensemble.mode().is_infinite() {
        return Err(Error::InvalidConfig(format!(
            "fixed-point residual needs an infinite-mode model, got {}",
            ensemble.mode()
        )));
    }
    let loss = LossFunction::new(ensemble.loss());
    loss.check_targets(dataset)?;
    let z = ensemble.predict(dataset)?;
    let c = ensemble.current_capacity().expect("infinite models have a capacity");
    residual_at(dataset, &loss, &z, c, ensemble.tree_config(), n_probe_trees, rng)
}

/// `||z||^2 / 2 + c * sum_i L(y_i, z_i)`.
pub fn regularized_objective(dataset: &Dataset, z: &[f64], capacity: f64, loss: &LossFunction) -> Result<f64> {
    let loss_value = loss.loss_value(dataset, z)?;
    Ok(z.iter().map(|v| v * v).sum::<f64>() / 2.0 + capacity * loss_value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub residual: f64,
    /// Monte-Carlo part of `residual`; not written to the CSV trace.
    pub noise_floor: f64,
    pub objective: f64,
    pub capacity: f64,
}

/// Trains an InfiniteBoost model and probes the fixed-point residual and the
/// regularized objective on the training rows every `probe_every` iterations.
///
/// Probe trees draw from their own RNG stream, so the trained model is the
/// same as [`crate::ensemble::train`] produces for `config`.
pub fn convergence_trace(
    config: &BoostConfig,
    dataset: &Dataset,
    probe_every: usize,
    n_probe_trees: usize,
) -> Result<Vec<TraceRow>> {
    let mut rows = Vec::new();
    convergence_trace_with(config, dataset, probe_every, n_probe_trees, |row| rows.push(row))?;
    Ok(rows)
}

/// Streaming form of [`convergence_trace`]; returns the trained model.
pub fn convergence_trace_with(
    config: &BoostConfig,
    dataset: &Dataset,
    probe_every: usize,
    n_probe_trees: usize,
    mut visit: impl FnMut(TraceRow),
) -> Result<Ensemble> {
    if probe_every == 0 {
        return Err(Error::InvalidConfig("probe interval must be at least 1".into()));
    }
    if !config.mode.is_infinite() {
        return Err(Error::InvalidConfig(format!(
            "convergence trace needs an infinite mode, got {}",
            config.mode
        )));
    }
    let mut trainer = Trainer::new(dataset, config.clone(), ChaCha8Rng::seed_from_u64(config.seed))?;
    let mut probe_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
    while !trainer.is_done() {
        trainer.step()?;
        let m = trainer.state().m;
        if m % probe_every != 0 {
            continue;
        }
        let c = trainer.applied_capacity().expect("infinite mode");
        let train = trainer.train_data();
        let z = &trainer.state().z;
        let report = residual_at(train, trainer.loss(), z, c, trainer.tree_config(), n_probe_trees, &mut probe_rng)?;
        let objective = regularized_objective(train, z, c, trainer.loss())?;
        visit(TraceRow {
            iteration: m,
            residual: report.residual_norm,
            noise_floor: report.noise_floor,
            objective,
            capacity: c,
        });
    }
    Ok(trainer.finish().0)
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.iteration, r.residual, r.objective, r.capacity)?;
    }
    Ok(())
}
