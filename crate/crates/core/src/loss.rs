//! Differentiable losses over ensemble scores.
//!
//! Every loss exposes its total value and the negative gradient with respect
//! to the per-sample scores. The negative gradient is the regression target
//! for the next tree.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QueryGroup};
use crate::error::{Error, Result};

/// Default clip for losses with unbounded gradients.
pub const DEFAULT_CLIP_THRESHOLD: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `(y - F)^2 / 2`
    SquaredError,
    /// `log(1 + exp(-y F))` with `y` in `{-1, +1}`.
    Logistic,
    /// Logistic loss on every in-query pair with unequal grades.
    PairwiseRank,
}

impl LossKind {
    pub fn default_clip(self) -> Option<f64> {
        match self {
            LossKind::Logistic => None,
            LossKind::SquaredError | LossKind::PairwiseRank => Some(DEFAULT_CLIP_THRESHOLD),
        }
    }

    /// Name used on the command line.
    pub fn cli_name(self) -> &'static str {
        match self {
            LossKind::SquaredError => "mse",
            LossKind::Logistic => "logloss",
            LossKind::PairwiseRank => "rank",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" | "squared_error" => Ok(LossKind::SquaredError),
            "logloss" | "logistic" => Ok(LossKind::Logistic),
            "rank" | "pairwise_rank" => Ok(LossKind::PairwiseRank),
            other => Err(Error::InvalidConfig(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossFunction {
    pub kind: LossKind,
    pub clip_threshold: Option<f64>,
}

impl LossFunction {
    /// Loss with its default clipping threshold.
    pub fn new(kind: LossKind) -> Self {
        LossFunction { kind, clip_threshold: kind.default_clip() }
    }

    pub fn with_clip(mut self, clip_threshold: Option<f64>) -> Result<Self> {
        if let Some(t) = clip_threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig(format!("clip threshold must be positive, got {t}")));
            }
        }
        self.clip_threshold = clip_threshold;
        Ok(self)
    }

    /// Checks that targets suit this loss: `{-1, +1}` labels for logistic,
    /// query groups for ranking.
    pub fn check_targets(&self, dataset: &Dataset) -> Result<()> {
        match self.kind {
            LossKind::Logistic => {
                if let Some(i) = dataset.targets().iter().position(|&y| y != 1.0 && y != -1.0) {
                    return Err(Error::InvalidData(format!(
                        "logistic loss expects labels in {{-1, +1}}, row {} has {}",
                        i + 1,
                        dataset.targets()[i]
                    )));
                }
            }
            LossKind::PairwiseRank if dataset.query_groups().is_none() => {
                return Err(Error::InvalidData("pairwise ranking loss needs query groups".into()));
            }
            _ => {}
        }
        Ok(())
    }

    fn check(&self, dataset: &Dataset, scores: &[f64]) -> Result<()> {
        Error::check_len(dataset.n_samples(), scores.len())?;
        if self.kind == LossKind::PairwiseRank && dataset.query_groups().is_none() {
            return Err(Error::InvalidData("pairwise ranking loss needs query groups".into()));
        }
        Ok(())
    }

    /// `-dL/dF(x_i)` at the given scores, unclipped.
    pub fn negative_gradient(&self, dataset: &Dataset, scores: &[f64]) -> Result<Vec<f64>> {
        self.check(dataset, scores)?;
        let y = dataset.targets();
        Ok(match self.kind {
            LossKind::SquaredError => y.iter().zip(scores).map(|(y, f)| y - f).collect(),
            LossKind::Logistic => y.iter().zip(scores).map(|(&y, &f)| y * sigmoid(-y * f)).collect(),
            LossKind::PairwiseRank => {
                let mut g = vec![0.0; scores.len()];
                for group in dataset.query_groups().expect("checked") {
                    for_each_pair(group, y, |hi, lo| {
                        let push = sigmoid(scores[lo] - scores[hi]);
                        g[hi] += push;
                        g[lo] -= push;
                    });
                }
                g
            }
        })
    }

    /// Negative gradient after clipping; this is what trees are fit to.
    pub fn pseudo_targets(&self, dataset: &Dataset, scores: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.negative_gradient(dataset, scores)?;
        if let Some(t) = self.clip_threshold {
            clip_in_place(&mut g, t);
        }
        Ok(g)
    }

    /// Total loss: per-sample sum, or per-pair sum for ranking.
    pub fn loss_value(&self, dataset: &Dataset, scores: &[f64]) -> Result<f64> {
        self.check(dataset, scores)?;
        let y = dataset.targets();
        Ok(match self.kind {
            LossKind::SquaredError => y.iter().zip(scores).map(|(y, f)| 0.5 * (y - f) * (y - f)).sum(),
            LossKind::Logistic => y.iter().zip(scores).map(|(&y, &f)| softplus(-y * f)).sum(),
            LossKind::PairwiseRank => {
                let mut total = 0.0;
                for group in dataset.query_groups().expect("checked") {
                    for_each_pair(group, y, |hi, lo| total += softplus(scores[lo] - scores[hi]));
                }
                total
            }
        })
    }
}

/// Calls `f(preferred, other)` for every pair in the group with unequal grades.
fn for_each_pair(group: &QueryGroup, grades: &[f64], mut f: impl FnMut(usize, usize)) {
    for i in group.range() {
        for j in i + 1..group.end {
            if grades[i] > grades[j] {
                f(i, j);
            } else if grades[j] > grades[i] {
                f(j, i);
            }
        }
    }
}

/// Elementwise clamp to `[-threshold, threshold]`, keeping the sign.
pub fn clip_gradient(g: &[f64], threshold: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, threshold);
    out
}

pub fn clip_in_place(g: &mut [f64], threshold: f64) {
    debug_assert!(threshold > 0.0);
    for v in g {
        *v = v.clamp(-threshold, threshold);
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ds(targets: &[f64]) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..targets.len()).map(|i| vec![i as f64]).collect();
        Dataset::from_rows(&rows, targets.to_vec()).unwrap()
    }

    fn ranked(grades: &[f64]) -> Dataset {
        ds(grades)
            .with_query_groups(vec![QueryGroup { id: 1, start: 0, end: grades.len() }])
            .unwrap()
    }

    #[test]
    fn squared_error_gradient_vanishes_at_optimum() {
        let l = LossFunction::new(LossKind::SquaredError);
        let d = ds(&[1.0, 2.0]);
        assert_eq!(l.negative_gradient(&d, &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(l.loss_value(&d, &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn logistic_values() {
        let l = LossFunction::new(LossKind::Logistic);
        let d = ds(&[1.0]);
        assert_eq!(l.negative_gradient(&d, &[0.0]).unwrap(), vec![0.5]);
        assert_abs_diff_eq!(l.loss_value(&d, &[0.0]).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        let g = l.negative_gradient(&d, &[3f64.ln()]).unwrap()[0];
        assert_abs_diff_eq!(g, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn logistic_gradient_matches_central_difference_at_ln3() {
        let l = LossFunction::new(LossKind::Logistic);
        let d = ds(&[1.0]);
        let f = 3f64.ln();
        let h = 1e-6;
        let fd = (l.loss_value(&d, &[f + h]).unwrap() - l.loss_value(&d, &[f - h]).unwrap()) / (2.0 * h);
        assert!((-fd - 0.25).abs() < 1e-6, "fd = {fd}");
    }

    #[test]
    fn pairwise_correct_order_has_tiny_loss() {
        let l = LossFunction::new(LossKind::PairwiseRank);
        let d = ranked(&[1.0, 0.0]);
        let v = l.loss_value(&d, &[5.0, -5.0]).unwrap();
        // single pair: softplus(-10)
        assert_abs_diff_eq!(v, (1.0 + (-10f64).exp()).ln(), epsilon = 1e-15);
        assert!(v < 1e-4);
    }

    #[test]
    fn pairwise_requires_groups() {
        let l = LossFunction::new(LossKind::PairwiseRank);
        assert!(l.negative_gradient(&ds(&[1.0, 0.0]), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn length_mismatch() {
        let l = LossFunction::new(LossKind::SquaredError);
        assert!(matches!(
            l.negative_gradient(&ds(&[1.0, 0.0]), &[0.0]),
            Err(Error::LengthMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn clipping() {
        assert_eq!(clip_gradient(&[0.5], 1.0), vec![0.5]);
        assert_eq!(clip_gradient(&[-7.0], 2.0), vec![-2.0]);
        assert_eq!(clip_gradient(&[3.0, -3.0], 3.0), vec![3.0, -3.0]);
    }

    #[test]
    fn pseudo_targets_apply_default_clip() {
        let l = LossFunction::new(LossKind::SquaredError);
        let d = ds(&[1e6]);
        assert_eq!(l.pseudo_targets(&d, &[0.0]).unwrap(), vec![DEFAULT_CLIP_THRESHOLD]);
        assert_eq!(l.negative_gradient(&d, &[0.0]).unwrap(), vec![1e6]);
        assert!(LossFunction::new(LossKind::Logistic).clip_threshold.is_none());
        assert!(l.with_clip(Some(0.0)).is_err());
    }

    #[test]
    fn parse_kind() {
        assert_eq!("mse".parse::<LossKind>().unwrap(), LossKind::SquaredError);
        assert_eq!("logloss".parse::<LossKind>().unwrap(), LossKind::Logistic);
        assert_eq!("rank".parse::<LossKind>().unwrap(), LossKind::PairwiseRank);
        assert!("huber".parse::<LossKind>().is_err());
    }

    proptest! {
        #[test]
        fn logistic_gradient_bounded(f in -1e300f64..1e300, positive in any::<bool>()) {
            let y = if positive { 1.0 } else { -1.0 };
            let g = LossFunction::new(LossKind::Logistic).negative_gradient(&ds(&[y]), &[f]).unwrap()[0];
            prop_assert!(g.abs() <= 1.0);
            if f.abs() <= 30.0 {
                prop_assert!(g.abs() < 1.0);
            }
        }

        #[test]
        fn pairwise_gradient_sums_to_zero(
            grades in proptest::collection::vec(0u8..4, 2..9),
            scores in proptest::collection::vec(-5f64..5.0, 9),
        ) {
            let grades: Vec<f64> = grades.into_iter().map(f64::from).collect();
            let n = grades.len();
            let g = LossFunction::new(LossKind::PairwiseRank)
                .negative_gradient(&ranked(&grades), &scores[..n])
                .unwrap();
            prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
