//! InfiniteBoost: boosting whose ensemble converges to a weighted average of
//! infinitely many trees, alongside classic gradient boosting and random
//! forests over the same exact-greedy regression tree learner.
//!
//! ```
//! use infiniteboost::{synthetic, train, BoostConfig, LossKind};
//!
//! let data = synthetic::regression_task(200, 6, 0.5, 1).unwrap();
//! let config = BoostConfig::infinite(LossKind::SquaredError, 20, 4.0).with_seed(7);
//! let model = train(&data, &config).unwrap();
//! assert_eq!(model.predict(&data).unwrap().len(), 200);
//! ```

pub mod data;
pub mod diagnostics;
pub mod ensemble;
mod error;
pub mod loss;
pub mod metrics;
pub mod synthetic;
pub mod tree;

pub use data::{Dataset, QueryGroup};
pub use diagnostics::{convergence_trace, fixed_point_residual, regularized_objective, FixedPointReport, TraceRow};
pub use ensemble::{train, BoostConfig, Ensemble, Mode, Trainer, Weighting};
pub use error::{Error, Result};
pub use loss::{LossFunction, LossKind};
pub use metrics::{Metric, MetricResult};
pub use tree::{fit_tree, DecisionTree, Node, TreeConfig};
