//! Evaluation metrics: MSE, ROC AUC and NDCG@k.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QueryGroup};
use crate::error::{Error, Result};

pub const DEFAULT_NDCG_CUTOFF: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Mse,
    Auc,
    Ndcg(usize),
}

impl Metric {
    /// Whether larger values are better.
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Mse)
    }

    /// Scores `predictions` against the dataset's targets. AUC treats
    /// targets `> 0` as positive.
    pub fn evaluate(self, dataset: &Dataset, predictions: &[f64]) -> Result<MetricResult> {
        let y = dataset.targets();
        let (value, count) = match self {
            Metric::Mse => (mse(y, predictions)?, y.len()),
            Metric::Auc => (roc_auc(y, predictions)?, y.len()),
            Metric::Ndcg(k) => {
                let groups = dataset
                    .query_groups()
                    .ok_or_else(|| Error::InvalidData("ndcg needs query groups".into()))?;
                (ndcg_at_k(y, predictions, groups, k)?, groups.len())
            }
        };
        Ok(MetricResult { name: self.to_string(), value, count })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Mse => f.write_str("mse"),
            Metric::Auc => f.write_str("auc"),
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Metric::Mse),
            "auc" => Ok(Metric::Auc),
            "ndcg" => Ok(Metric::Ndcg(DEFAULT_NDCG_CUTOFF)),
            _ => match s.strip_prefix("ndcg@").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Ok(Metric::Ndcg(k)),
                _ => Err(Error::InvalidConfig(format!("unknown metric '{s}' (mse, auc, ndcg@K)"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: String,
    pub value: f64,
    /// Samples, or queries for NDCG.
    pub count: usize,
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    Error::check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::InvalidData("metric over empty input".into()));
    }
    Ok(())
}

pub fn mse(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    check_pair(targets, predictions)?;
    let sum: f64 = targets.iter().zip(predictions).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(sum / targets.len() as f64)
}

/// Area under the ROC curve via the rank-sum statistic with midranks, so a
/// tied positive/negative pair counts one half. Labels `> 0` are positive.
pub fn roc_auc(labels: &[f64], scores: &[f64]) -> Result<f64> {
    check_pair(labels, scores)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidData("roc_auc needs both classes".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of (1-based) midranks of the positives. Ranks are multiples of 1/2,
    // so this sum is exact in f64 at any realistic size.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let positives = order[i..j].iter().filter(|&&k| labels[k] > 0.0).count();
        rank_sum += midrank * positives as f64;
        i = j;
    }
    let n_pos_f = n_pos as f64;
    let u = rank_sum - n_pos_f * (n_pos_f + 1.0) / 2.0;
    Ok(u / (n_pos_f * n_neg as f64))
}

/// `sum_{r<k} (2^grade - 1) / log2(r + 2)` over grades in the given order.
pub fn dcg_at_k(grades_in_rank_order: impl IntoIterator<Item = f64>, k: usize) -> f64 {
    grades_in_rank_order
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(r, g)| (g.exp2() - 1.0) / (r as f64 + 2.0).log2())
        .sum()
}

/// DCG@k of the grades sorted descending.
pub fn ideal_dcg_at_k(grades: &[f64], k: usize) -> f64 {
    let mut sorted = grades.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    dcg_at_k(sorted, k)
}

/// NDCG@k for one query: documents ranked by descending score, ties broken
/// by original position. A query with zero ideal DCG scores 1.
pub fn query_ndcg(grades: &[f64], scores: &[f64], k: usize) -> f64 {
    let ideal = ideal_dcg_at_k(grades, k);
    if ideal == 0.0 {
        return 1.0;
    }
    let mut order: Vec<usize> = (0..grades.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    dcg_at_k(order.iter().map(|&i| grades[i]), k) / ideal
}

/// Mean NDCG@k over query groups.
pub fn ndcg_at_k(grades: &[f64], scores: &[f64], groups: &[QueryGroup], k: usize) -> Result<f64> {
    check_pair(grades, scores)?;
    if k == 0 {
        return Err(Error::InvalidConfig("ndcg cutoff must be at least 1".into()));
    }
    if groups.is_empty() || groups.iter().any(|g| g.is_empty() || g.end > grades.len()) {
        return Err(Error::InvalidData("ndcg needs non-empty query groups within range".into()));
    }
    let total: f64 = groups.iter().map(|g| query_ndcg(&grades[g.range()], &scores[g.range()], k)).sum();
    Ok(total / groups.len() as f64)
}
