//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a flat `Float64Array`; the layout is given on each
//! function. Work is synchronous, so sizes are kept small enough for a UI
//! thread.

use infiniteboost::data::Dataset;
use infiniteboost::diagnostics::convergence_trace;
use infiniteboost::ensemble::{train, BoostConfig, Ensemble};
use infiniteboost::loss::LossKind;
use infiniteboost::metrics::mse;
use infiniteboost::synthetic::regression_task;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

const MAX_TREES: usize = 2000;

fn js(e: String) -> JsError {
    JsError::new(&e)
}

fn check_trees(n: usize) -> Result<(), String> {
    if n == 0 || n > MAX_TREES {
        return Err(format!("trees must be in 1..={MAX_TREES}"));
    }
    Ok(())
}

/// Trains InfiniteBoost on a small regression task and probes how far the
/// scores are from the fixed point.
///
/// Rows of `[iteration, residual, noise_floor, objective, capacity]`.
/// `capacity <= 0` selects the adaptive mode.
#[wasm_bindgen]
pub fn fixed_point_trace(capacity: f64, trees: usize, probe_every: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    trace_rows(capacity, trees, probe_every, seed).map_err(js)
}

fn trace_rows(capacity: f64, trees: usize, probe_every: usize, seed: u64) -> Result<Vec<f64>, String> {
    check_trees(trees)?;
    let data = regression_task(300, 5, 1.0, seed).map_err(|e| e.to_string())?;
    let config = if capacity > 0.0 {
        BoostConfig::infinite(LossKind::SquaredError, trees, capacity)
    } else {
        BoostConfig::infinite_adaptive(LossKind::SquaredError, trees)
    }
    .with_seed(seed);
    let rows = convergence_trace(&config, &data, probe_every.max(1), 8).map_err(|e| e.to_string())?;
    Ok(rows
        .iter()
        .flat_map(|r| [r.iteration as f64, r.residual, r.noise_floor, r.objective, r.capacity])
        .collect())
}

/// Test-set MSE of gradient boosting and InfiniteBoost trained on the same
/// regression task, every `step` trees.
///
/// Rows of `[iteration, gb_mse, infinite_mse]`.
#[wasm_bindgen]
pub fn learning_curves(trees: usize, shrinkage: f64, capacity: f64, step: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    curve_rows(trees, shrinkage, capacity, step, seed).map_err(js)
}

fn curve_rows(trees: usize, shrinkage: f64, capacity: f64, step: usize, seed: u64) -> Result<Vec<f64>, String> {
    check_trees(trees)?;
    let train_set = regression_task(400, 8, 1.0, seed).map_err(|e| e.to_string())?;
    let test_set = regression_task(1000, 8, 1.0, seed.wrapping_add(1)).map_err(|e| e.to_string())?;
    let gb = train(&train_set, &BoostConfig::gradient_boosting(LossKind::SquaredError, trees, shrinkage).with_seed(seed))
        .map_err(|e| e.to_string())?;
    let ib = train(&train_set, &BoostConfig::infinite(LossKind::SquaredError, trees, capacity).with_seed(seed))
        .map_err(|e| e.to_string())?;
    let gb_curve = staged_mse(&gb, &test_set, step)?;
    let ib_curve = staged_mse(&ib, &test_set, step)?;
    Ok(gb_curve.iter().zip(&ib_curve).flat_map(|(&(k, a), &(_, b))| [k as f64, a, b]).collect())
}

fn staged_mse(model: &Ensemble, data: &Dataset, step: usize) -> Result<Vec<(usize, f64)>, String> {
    let mut out = Vec::new();
    model
        .staged_predict_with(data, step.max(1), |k, p| {
            out.push((k, mse(data.targets(), p).unwrap_or(f64::NAN)));
        })
        .map_err(|e| e.to_string())?;
    Ok(out)
}

/// Noisy two-class ring on [-1, 1]^2 with labels in {-1, +1}.
fn ring(n: usize, flip: f64, seed: u64) -> Result<Dataset, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let inside = a * a + b * b < 0.45;
        let label = if inside != rng.random_bool(flip) { 1.0 } else { -1.0 };
        x.extend([a, b]);
        y.push(label);
    }
    Dataset::new(x, 2, y).map_err(|e| e.to_string())
}

/// A classifier's probability surface over [-1, 1]^2 together with the
/// points it was trained on.
#[wasm_bindgen]
pub struct Surface {
    resolution: usize,
    values: Vec<f64>,
    points: Vec<f64>,
}

#[wasm_bindgen]
impl Surface {
    /// Grid cells per side.
    #[wasm_bindgen(getter)]
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Row-major `P(y = +1)`, row 0 at y = -1.
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    /// Rows of `[x, y, label]`.
    pub fn points(&self) -> Vec<f64> {
        self.points.clone()
    }
}

/// Fits `mode` ("gb", "infinite", "infinite-adaptive" or "forest") to a noisy
/// ring with logistic loss and evaluates it on a square grid. `max_depth` 0
/// means unlimited.
#[wasm_bindgen]
pub fn decision_surface(mode: &str, trees: usize, max_depth: usize, resolution: usize, seed: u64) -> Result<Surface, JsError> {
    surface(mode, trees, max_depth, resolution, seed).map_err(js)
}

fn surface(mode: &str, trees: usize, max_depth: usize, resolution: usize, seed: u64) -> Result<Surface, String> {
    check_trees(trees)?;
    if !(2..=200).contains(&resolution) {
        return Err("resolution must be in 2..=200".into());
    }
    let data = ring(400, 0.1, seed)?;
    let loss = LossKind::Logistic;
    let mut config = match mode {
        "gb" => BoostConfig::gradient_boosting(loss, trees, 0.1),
        "infinite" => BoostConfig::infinite(loss, trees, 20.0),
        "infinite-adaptive" => BoostConfig::infinite_adaptive(loss, trees),
        "forest" => BoostConfig::random_forest(loss, trees),
        other => return Err(format!("unknown mode '{other}'")),
    }
    .with_seed(seed);
    config.tree.max_depth = (max_depth > 0).then_some(max_depth);
    config.tree.max_features = 1.0;
    let model = train(&data, &config).map_err(|e| e.to_string())?;

    let step = 2.0 / resolution as f64;
    let centre = |i: usize| -1.0 + (i as f64 + 0.5) * step;
    let mut grid = Vec::with_capacity(2 * resolution * resolution);
    for r in 0..resolution {
        for c in 0..resolution {
            grid.extend([centre(c), centre(r)]);
        }
    }
    let grid = Dataset::new(grid, 2, vec![0.0; resolution * resolution]).map_err(|e| e.to_string())?;
    let values = model.predict_proba(&grid).map_err(|e| e.to_string())?;
    let points = (0..data.n_samples())
        .flat_map(|i| {
            let row = data.row(i);
            [row[0], row[1], data.targets()[i]]
        })
        .collect();
    Ok(Surface { resolution, values, points })
}
