//! Seeded synthetic tasks for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, QueryGroup};
use crate::error::Result;

/// Nonlinear score whose sign is the Bayes rule of [`binary_task`]. Uses the
/// first six coordinates; the rest are pure noise features.
pub fn binary_score(x: &[f64]) -> f64 {
    x[0] * x[1] + (2.0 * x[2]).sin() + x[3] * x[3] - 0.4 + 0.5 * x[4] - 0.3 * x[5].abs()
}

/// Binary classification with `d >= 6` features uniform on `[-1, 1]`, label
/// `1` when [`binary_score`] is positive, then flipped with probability
/// `flip`. Labels are in `{0, 1}`.
pub fn binary_task(n: usize, d: usize, flip: f64, seed: u64) -> Result<Dataset> {
    assert!(d >= 6, "binary task needs at least 6 features");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * d);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut label = binary_score(&row) > 0.0;
        if rng.random::<f64>() < flip {
            label = !label;
        }
        targets.push(if label { 1.0 } else { 0.0 });
        features.extend(row);
    }
    Dataset::new(features, d, targets)
}

/// Regression mean of [`regression_task`]; uses the first five coordinates.
pub fn regression_mean(x: &[f64]) -> f64 {
    10.0 * (std::f64::consts::PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

/// Friedman-style regression: `d >= 5` features uniform on `[0, 1]`,
/// `y = regression_mean(x) + N(0, noise^2)`.
pub fn regression_task(n: usize, d: usize, noise: f64, seed: u64) -> Result<Dataset> {
    assert!(d >= 5, "regression task needs at least 5 features");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).expect("noise must be finite and non-negative");
    let mut features = Vec::with_capacity(n * d);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        targets.push(regression_mean(&row) + normal.sample(&mut rng));
        features.extend(row);
    }
    Dataset::new(features, d, targets)
}

/// Ranking task: `n_queries` groups of `docs_per_query` documents with `d >= 3`
/// features and integer grades 0..=4 from a noisy linear-plus-interaction
/// relevance score.
pub fn ranking_task(n_queries: usize, docs_per_query: usize, d: usize, seed: u64) -> Result<Dataset> {
    assert!(d >= 3, "ranking task needs at least 3 features");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.3).expect("valid");
    let n = n_queries * docs_per_query;
    let mut features = Vec::with_capacity(n * d);
    let mut grades = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n_queries);
    for q in 0..n_queries {
        let start = q * docs_per_query;
        groups.push(QueryGroup { id: q as u64 + 1, start, end: start + docs_per_query });
        for _ in 0..docs_per_query {
            let row: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let rel = 2.0 * row[0] + row[1] * row[2] * 2.0 + normal.sample(&mut rng);
            grades.push(rel.clamp(0.0, 4.0).floor());
            features.extend(row);
        }
    }
    Dataset::new(features, d, grades)?.with_query_groups(groups)
}
