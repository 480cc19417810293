//! Versioned JSON model document.

use serde::{Deserialize, Serialize};

use super::{Ensemble, Mode, Weighting};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::tree::{DecisionTree, Node, TreeConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format_version: u32,
    mode: Mode,
    loss: LossKind,
    capacity: Option<f64>,
    shrinkage: Option<f64>,
    weighting: Option<Weighting>,
    tree_config: TreeConfig,
    n_features: usize,
    weights: Vec<f64>,
    capacity_trace: Vec<f64>,
    trees: Vec<Vec<Node>>,
}

impl Ensemble {
    /// Serializes to the JSON model document. Reals are written with
    /// shortest round-trip formatting, so reloading is exact.
    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            format_version: FORMAT_VERSION,
            mode: self.mode,
            loss: self.loss,
            capacity: self.capacity,
            shrinkage: self.shrinkage,
            weighting: self.weighting,
            tree_config: self.tree_config,
            n_features: self.n_features,
            weights: self.weights.clone(),
            capacity_trace: self.capacity_trace.clone(),
            trees: self.trees.iter().map(|t| t.nodes().to_vec()).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported model format version {} (expected {FORMAT_VERSION})",
                doc.format_version
            )));
        }
        let bad = |m: &str| Err(Error::InvalidData(format!("model document: {m}")));
        if doc.weights.len() != doc.trees.len() {
            return bad("weights and trees differ in length");
        }
        if doc.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights must be finite and non-negative");
        }
        match doc.mode {
            Mode::Gb if doc.shrinkage.is_none() => return bad("gb model without shrinkage"),
            Mode::Infinite | Mode::InfiniteAdaptive => {
                if doc.capacity_trace.len() != doc.trees.len() {
                    return bad("capacity trace and trees differ in length");
                }
                if doc.capacity.is_none() {
                    return bad("infinite model without capacity");
                }
            }
            _ => {}
        }
        let trees = doc
            .trees
            .into_iter()
            .map(|nodes| DecisionTree::from_nodes(nodes, doc.n_features))
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble {
            mode: doc.mode,
            loss: doc.loss,
            n_features: doc.n_features,
            trees,
            weights: doc.weights,
            shrinkage: doc.shrinkage,
            capacity: doc.capacity,
            weighting: doc.weighting,
            capacity_trace: doc.capacity_trace,
            tree_config: doc.tree_config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::ensemble::{train, BoostConfig};

    fn data() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64).sin(), (i * i % 11) as f64 / 3.0]).collect();
        let y = rows.iter().map(|r| r[0] * 2.0 + r[1]).collect();
        Dataset::from_rows(&rows, y).unwrap()
    }

    #[test]
    fn round_trip_preserves_predictions_exactly() {
        let ds = data();
        for cfg in [
            BoostConfig::gradient_boosting(LossKind::SquaredError, 8, 0.3),
            BoostConfig::infinite(LossKind::SquaredError, 8, 3.0),
            BoostConfig::random_forest(LossKind::SquaredError, 8),
        ] {
            let e = train(&ds, &cfg.with_seed(11)).unwrap();
            let back = Ensemble::from_json(&e.to_json().unwrap()).unwrap();
            assert_eq!(back, e);
            assert_eq!(back.predict(&ds).unwrap(), e.predict(&ds).unwrap());
        }
    }

    #[test]
    fn document_shape() {
        let e = train(&data(), &BoostConfig::random_forest(LossKind::SquaredError, 1)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&e.to_json().unwrap()).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["mode"], "forest");
        assert_eq!(v["loss"], "squared_error");
        assert!(v["tree_config"]["max_depth"].is_null());
        assert!(v["trees"][0][0]["kind"].is_string());
    }

    #[test]
    fn rejects_bad_documents() {
        let e = train(&data(), &BoostConfig::infinite(LossKind::SquaredError, 2, 1.0)).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&e.to_json().unwrap()).unwrap();
        v["format_version"] = 99.into();
        assert!(Ensemble::from_json(&v.to_string()).is_err());
        v["format_version"] = 1.into();
        v["weights"] = serde_json::json!([1.0]);
        assert!(Ensemble::from_json(&v.to_string()).is_err());
        assert!(Ensemble::from_json("{}").is_err());
    }
}
