//! Axis-aligned regression trees fit to pseudo-targets.
//!
//! Growth is exact greedy: every midpoint between consecutive distinct values
//! of a candidate feature is scored by the reduction in summed squared error.
//! Ties go to the lowest feature index, then the lowest threshold.
//!
//! Random draws happen in a fixed order so that a tree is a pure function of
//! its inputs and the RNG state:
//!
//! 1. Rows. Without replacement, `round(subsample * n)` rows are drawn with
//!    `rand::seq::index::sample` and sorted ascending (no draw when that is
//!    all rows). In bootstrap mode `n` rows are drawn with `random_range`.
//! 2. Features. Each splittable node, visited depth-first with the left child
//!    first, draws `ceil(max_features * d)` features with
//!    `rand::seq::index::sample`, sorted ascending (no draw when that is all
//!    features). A node is splittable when it is above the depth limit, holds
//!    at least `2 * min_samples_leaf` rows and its targets are not all equal.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Node records are stored flat; children are indices into the same array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    /// Fraction of rows drawn without replacement per tree. Unused when
    /// `bootstrap` is set.
    pub subsample: f64,
    /// Fraction of features considered at each node.
    pub max_features: f64,
    pub min_samples_leaf: usize,
    /// Draw `n` rows with replacement instead of subsampling.
    pub bootstrap: bool,
}

impl Default for TreeConfig {
    /// Boosting defaults: depth 7, 70% rows, 70% features per node.
    fn default() -> Self {
        TreeConfig {
            max_depth: Some(7),
            subsample: 0.7,
            max_features: 0.7,
            min_samples_leaf: 1,
            bootstrap: false,
        }
    }
}

impl TreeConfig {
    /// Random-forest defaults: unlimited depth with bootstrap rows.
    pub fn forest() -> Self {
        TreeConfig {
            max_depth: None,
            subsample: 1.0,
            bootstrap: true,
            ..TreeConfig::default()
        }
    }

    /// Deterministic learner: all rows, all features.
    pub fn exhaustive(max_depth: Option<usize>) -> Self {
        TreeConfig {
            max_depth,
            subsample: 1.0,
            max_features: 1.0,
            min_samples_leaf: 1,
            bootstrap: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::InvalidConfig(format!("subsample {} not in (0, 1]", self.subsample)));
        }
        if !(self.max_features > 0.0 && self.max_features <= 1.0) {
            return Err(Error::InvalidConfig(format!("max_features {} not in (0, 1]", self.max_features)));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidConfig("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }

    pub fn rows_per_tree(&self, n: usize) -> usize {
        if self.bootstrap {
            n
        } else {
            ((self.subsample * n as f64).round() as usize).clamp(1, n)
        }
    }

    pub fn features_per_node(&self, d: usize) -> usize {
        ((self.max_features * d as f64).ceil() as usize).clamp(1, d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    max_depth_used: usize,
    n_features: usize,
}

impl DecisionTree {
    pub fn constant(value: f64, n_features: usize) -> Self {
        DecisionTree { nodes: vec![Node::Leaf { value }], max_depth_used: 0, n_features }
    }

    /// Rebuilds a tree from a flat node array, checking its structure.
    pub fn from_nodes(nodes: Vec<Node>, n_features: usize) -> Result<Self> {
        let mut tree = DecisionTree { nodes, max_depth_used: 0, n_features };
        tree.max_depth_used = tree.check_structure()?;
        Ok(tree)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn max_depth_used(&self) -> usize {
        self.max_depth_used
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Verifies every node is reachable exactly once from the root, values are
    /// finite and features in range. Returns the depth.
    pub fn check_structure(&self) -> Result<usize> {
        let bad = |msg: String| Err(Error::InvalidData(format!("malformed tree: {msg}")));
        if self.nodes.is_empty() {
            return bad("no nodes".into());
        }
        let mut visited = vec![false; self.nodes.len()];
        let mut stack = vec![(0usize, 0usize)];
        let mut depth = 0;
        while let Some((i, d)) = stack.pop() {
            if i >= self.nodes.len() || visited[i] {
                return bad(format!("node {i} out of range or shared"));
            }
            visited[i] = true;
            depth = depth.max(d);
            match self.nodes[i] {
                Node::Leaf { value } if !value.is_finite() => return bad(format!("leaf {i} is not finite")),
                Node::Leaf { .. } => {}
                Node::Split { feature, threshold, left, right } => {
                    if feature >= self.n_features || !threshold.is_finite() {
                        return bad(format!("split {i} has feature {feature}, threshold {threshold}"));
                    }
                    stack.push((left, d + 1));
                    stack.push((right, d + 1));
                }
            }
        }
        if visited.iter().any(|v| !v) {
            return bad("unreachable nodes".into());
        }
        Ok(depth)
    }

    /// Routes one row: left iff `row[feature] <= threshold`. No length check.
    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, found: row.len() });
        }
        Ok(self.predict_row(row))
    }

    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        if dataset.n_features() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, found: dataset.n_features() });
        }
        Ok((0..dataset.n_samples()).map(|i| self.predict_row(dataset.row(i))).collect())
    }
}

/// Fits a tree to `pseudo_targets` over all rows of `dataset`.
pub fn fit_tree<R: Rng + ?Sized>(
    dataset: &Dataset,
    pseudo_targets: &[f64],
    config: &TreeConfig,
    rng: &mut R,
) -> Result<DecisionTree> {
    config.validate()?;
    Error::check_len(dataset.n_samples(), pseudo_targets.len())?;
    if let Some(i) = pseudo_targets.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("pseudo-target {i} is not finite")));
    }
    let rows = sample_rows(dataset.n_samples(), config, rng);
    Ok(Grower::new(dataset, pseudo_targets, rows, config).grow(rng))
}

fn sample_rows<R: Rng + ?Sized>(n: usize, config: &TreeConfig, rng: &mut R) -> Vec<usize> {
    let k = config.rows_per_tree(n);
    if config.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else if k == n {
        (0..n).collect()
    } else {
        let mut rows = index::sample(rng, n, k).into_vec();
        rows.sort_unstable();
        rows
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    /// `sum_left^2 / n_left + sum_right^2 / n_right`; larger is better.
    score: f64,
    threshold: f64,
}

struct Grower<'a> {
    data: &'a Dataset,
    config: &'a TreeConfig,
    /// Sampled dataset rows; positions in this list are "local" indices.
    rows: Vec<usize>,
    y: Vec<f64>,
    /// Local indices in ascending order, stably partitioned per node.
    members: Vec<u32>,
    /// Per feature: local indices sorted by (value, local index), stably
    /// partitioned so each node owns the same segment in every list.
    sorted: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
}

struct Pending {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
}

/// Nodes smaller than this are searched on the calling thread.
#[cfg(feature = "parallel")]
const PARALLEL_MIN_WORK: usize = 1 << 14;

impl<'a> Grower<'a> {
    fn new(data: &'a Dataset, targets: &[f64], rows: Vec<usize>, config: &'a TreeConfig) -> Self {
        let k = rows.len();
        let y: Vec<f64> = rows.iter().map(|&r| targets[r]).collect();
        let sorted = (0..data.n_features())
            .map(|f| {
                let mut order: Vec<u32> = (0..k as u32).collect();
                order.sort_by(|&a, &b| {
                    data.value(rows[a as usize], f)
                        .total_cmp(&data.value(rows[b as usize], f))
                        .then(a.cmp(&b))
                });
                order
            })
            .collect();
        Grower {
            data,
            config,
            members: (0..k as u32).collect(),
            rows,
            y,
            sorted,
            goes_left: vec![false; k],
        }
    }

    #[inline]
    fn x(&self, local: u32, feature: usize) -> f64 {
        self.data.value(self.rows[local as usize], feature)
    }

    fn grow<R: Rng + ?Sized>(mut self, rng: &mut R) -> DecisionTree {
        let d = self.data.n_features();
        let min_leaf = self.config.min_samples_leaf;
        let n_candidates = self.config.features_per_node(d);
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut max_depth_used = 0;
        let mut stack = vec![Pending { node: 0, start: 0, end: self.rows.len(), depth: 0 }];

        while let Some(p) = stack.pop() {
            max_depth_used = max_depth_used.max(p.depth);
            let segment = &self.members[p.start..p.end];
            let count = segment.len();
            let sum: f64 = segment.iter().map(|&s| self.y[s as usize]).sum();
            let leaf = Node::Leaf { value: sum / count as f64 };

            let first = self.y[segment[0] as usize];
            let pure = segment.iter().all(|&s| self.y[s as usize] == first);
            let depth_ok = self.config.max_depth.is_none_or(|m| p.depth < m);
            if pure || !depth_ok || count < 2 * min_leaf {
                nodes[p.node] = leaf;
                continue;
            }

            let features: Vec<usize> = if n_candidates == d {
                (0..d).collect()
            } else {
                let mut f = index::sample(rng, d, n_candidates).into_vec();
                f.sort_unstable();
                f
            };

            let Some(best) = self.best_split(&features, p.start, p.end) else {
                nodes[p.node] = leaf;
                continue;
            };

            let n_left = self.partition(best, p.start, p.end);
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[p.node] = Node::Split { feature: best.feature, threshold: best.threshold, left, right };
            let mid = p.start + n_left;
            stack.push(Pending { node: right, start: mid, end: p.end, depth: p.depth + 1 });
            stack.push(Pending { node: left, start: p.start, end: mid, depth: p.depth + 1 });
        }

        DecisionTree { nodes, max_depth_used, n_features: d }
    }

    fn best_split(&self, features: &[usize], start: usize, end: usize) -> Option<Candidate> {
        let scan = |&f: &usize| self.scan_feature(f, start, end);

        #[cfg(feature = "parallel")]
        let per_feature: Vec<Option<Candidate>> = if (end - start) * features.len() >= PARALLEL_MIN_WORK {
            use rayon::prelude::*;
            features.par_iter().map(scan).collect()
        } else {
            features.iter().map(scan).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let per_feature: Vec<Option<Candidate>> = features.iter().map(scan).collect();

        // features are ascending, so strict `>` keeps the lowest index on ties
        per_feature.into_iter().flatten().fold(None, |best: Option<Candidate>, c| match best {
            Some(b) if c.score <= b.score => Some(b),
            _ => Some(c),
        })
    }

    /// Best threshold for one feature over a node segment.
    fn scan_feature(&self, feature: usize, start: usize, end: usize) -> Option<Candidate> {
        let order = &self.sorted[feature][start..end];
        let count = order.len();
        let min_leaf = self.config.min_samples_leaf;
        let total: f64 = order.iter().map(|&s| self.y[s as usize]).sum();

        let mut best: Option<Candidate> = None;
        let mut left_sum = 0.0;
        let mut prev = self.x(order[0], feature);
        for (p, &s) in order.iter().enumerate().skip(1) {
            left_sum += self.y[order[p - 1] as usize];
            let value = self.x(s, feature);
            let distinct = prev < value;
            let lo = prev;
            prev = value;
            if !distinct || p < min_leaf || count - p < min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / p as f64 + right_sum * right_sum / (count - p) as f64;
            if best.is_none_or(|b| score > b.score) {
                best = Some(Candidate { feature, score, threshold: midpoint(lo, value) });
            }
        }
        best.filter(|b| b.score.is_finite())
    }

    /// Stable partition of every per-node list; returns the left size.
    fn partition(&mut self, split: Candidate, start: usize, end: usize) -> usize {
        let mut n_left = 0;
        for &s in &self.members[start..end] {
            let left = self.data.value(self.rows[s as usize], split.feature) <= split.threshold;
            self.goes_left[s as usize] = left;
            n_left += usize::from(left);
        }
        let goes_left = &self.goes_left;
        let stable_split = |list: &mut Vec<u32>| {
            let seg = &mut list[start..end];
            let mut right = Vec::with_capacity(seg.len() - n_left);
            let mut w = 0;
            for r in 0..seg.len() {
                let s = seg[r];
                if goes_left[s as usize] {
                    seg[w] = s;
                    w += 1;
                } else {
                    right.push(s);
                }
            }
            seg[w..].copy_from_slice(&right);
        };

        stable_split(&mut self.members);
        #[cfg(feature = "parallel")]
        if (end - start) * self.sorted.len() >= PARALLEL_MIN_WORK {
            use rayon::prelude::*;
            self.sorted.par_iter_mut().for_each(stable_split);
            return n_left;
        }
        self.sorted.iter_mut().for_each(stable_split);
        n_left
    }
}

/// Threshold strictly below `hi` and at least `lo`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn one_d(xs: &[f64], ys: &[f64]) -> Dataset {
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        Dataset::from_rows(&rows, ys.to_vec()).unwrap()
    }

    #[test]
    fn constant_targets_give_single_leaf() {
        let ds = one_d(&[0.0, 1.0, 2.0, 3.0], &[2.0; 4]);
        let tree = fit_tree(&ds, &[2.0; 4], &TreeConfig::exhaustive(None), &mut rng()).unwrap();
        assert_eq!(tree.nodes(), &[Node::Leaf { value: 2.0 }]);
        assert_eq!(tree.predict(&[123.0]).unwrap(), 2.0);
    }

    #[test]
    fn stump_splits_between_one_and_two() {
        let ds = one_d(&[0.0, 1.0, 2.0, 3.0], &[0.0; 4]);
        let tree = fit_tree(&ds, &[0.0, 0.0, 10.0, 10.0], &TreeConfig::exhaustive(Some(1)), &mut rng()).unwrap();
        match tree.nodes()[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert!(threshold > 1.0 && threshold < 2.0);
            }
            ref other => panic!("expected split, got {other:?}"),
        }
        assert_eq!(tree.predict(&[0.5]).unwrap(), 0.0);
        assert_eq!(tree.predict(&[2.5]).unwrap(), 10.0);
        assert_eq!(tree.max_depth_used(), 1);
    }

    #[test]
    fn xor_is_learned_at_depth_two() {
        let rows = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let targets = [0.0, 1.0, 1.0, 0.0];
        let ds = Dataset::from_rows(&rows, targets.to_vec()).unwrap();
        let tree = fit_tree(&ds, &targets, &TreeConfig::exhaustive(Some(2)), &mut rng()).unwrap();
        assert_eq!(tree.predict_dataset(&ds).unwrap(), targets.to_vec());
        // zero-gain root tie goes to feature 0
        assert!(matches!(tree.nodes()[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn depth_zero_is_the_mean() {
        let ds = one_d(&[0.0, 1.0, 2.0], &[0.0; 3]);
        let tree = fit_tree(&ds, &[1.0, 2.0, 6.0], &TreeConfig::exhaustive(Some(0)), &mut rng()).unwrap();
        assert_eq!(tree.nodes(), &[Node::Leaf { value: 3.0 }]);
    }

    #[test]
    fn batch_prediction_is_rowwise() {
        let ds = one_d(&[0.0, 1.0, 2.0, 3.0, 4.0], &[0.0; 5]);
        let tree = fit_tree(&ds, &[1.0, 5.0, 2.0, 8.0, 3.0], &TreeConfig::exhaustive(None), &mut rng()).unwrap();
        let batch = tree.predict_dataset(&ds).unwrap();
        for (i, p) in batch.iter().enumerate() {
            assert_eq!(*p, tree.predict(ds.row(i)).unwrap());
        }
    }

    #[test]
    fn errors() {
        let ds = one_d(&[0.0, 1.0], &[0.0; 2]);
        assert!(fit_tree(&ds, &[1.0], &TreeConfig::default(), &mut rng()).is_err());
        assert!(fit_tree(&ds, &[1.0, f64::NAN], &TreeConfig::default(), &mut rng()).is_err());
        let bad = TreeConfig { subsample: 0.0, ..TreeConfig::default() };
        assert!(fit_tree(&ds, &[1.0, 2.0], &bad, &mut rng()).is_err());
        let tree = DecisionTree::constant(1.0, 1);
        assert!(matches!(tree.predict(&[1.0, 2.0]), Err(Error::DimensionMismatch { expected: 1, found: 2 })));
    }

    #[test]
    fn min_samples_leaf_is_respected() {
        let xs: Vec<f64> = (0..20).map(f64::from).collect();
        let ys: Vec<f64> = (0..20).map(|i| f64::from(i * i % 7)).collect();
        let ds = one_d(&xs, &ys);
        let cfg = TreeConfig { min_samples_leaf: 4, ..TreeConfig::exhaustive(None) };
        let tree = fit_tree(&ds, &ys, &cfg, &mut rng()).unwrap();
        let preds = tree.predict_dataset(&ds).unwrap();
        let mut counts = std::collections::HashMap::new();
        for p in preds {
            *counts.entry(p.to_bits()).or_insert(0) += 1;
        }
        assert!(counts.values().all(|&c| c >= 4), "{counts:?}");
    }

    #[test]
    fn from_nodes_rejects_bad_structure() {
        let cycle = vec![Node::Split { feature: 0, threshold: 0.0, left: 0, right: 0 }];
        assert!(DecisionTree::from_nodes(cycle, 1).is_err());
        let orphan = vec![Node::Leaf { value: 1.0 }, Node::Leaf { value: 2.0 }];
        assert!(DecisionTree::from_nodes(orphan, 1).is_err());
        let ok = vec![
            Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
            Node::Leaf { value: 1.0 },
            Node::Leaf { value: 2.0 },
        ];
        assert_eq!(DecisionTree::from_nodes(ok, 1).unwrap().max_depth_used(), 1);
    }

    #[test]
    fn midpoint_stays_below_upper_value() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let t = midpoint(lo, hi);
        assert!(lo <= t && t < hi);
    }

    fn random_dataset(seed: u64, n: usize, d: usize) -> (Dataset, Vec<f64>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        (Dataset::from_rows(&rows, y.clone()).unwrap(), y)
    }

    /// Sum of squared deviations from the mean.
    fn sse(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum()
    }

    proptest! {
        #[test]
        fn unlimited_tree_memorizes(seed in any::<u64>(), n in 1usize..60, d in 1usize..4) {
            let (ds, y) = random_dataset(seed, n, d);
            let tree = fit_tree(&ds, &y, &TreeConfig::exhaustive(None), &mut rng()).unwrap();
            prop_assert_eq!(tree.predict_dataset(&ds).unwrap(), y);
        }

        #[test]
        fn depth_never_exceeds_limit(seed in any::<u64>(), depth in 0usize..6) {
            let (ds, y) = random_dataset(seed, 80, 3);
            let cfg = TreeConfig { max_depth: Some(depth), ..TreeConfig::default() };
            let tree = fit_tree(&ds, &y, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(tree.max_depth_used() <= depth);
            prop_assert_eq!(tree.check_structure().unwrap(), tree.max_depth_used());
        }

        #[test]
        fn split_gain_is_nonnegative(seed in any::<u64>()) {
            let (ds, y) = random_dataset(seed, 40, 2);
            let tree = fit_tree(&ds, &y, &TreeConfig::exhaustive(Some(1)), &mut rng()).unwrap();
            if let Node::Split { feature, threshold, .. } = tree.nodes()[0] {
                let (l, r): (Vec<f64>, Vec<f64>) = (0..ds.n_samples())
                    .map(|i| (ds.value(i, feature) <= threshold, y[i]))
                    .fold((vec![], vec![]), |(mut l, mut r), (left, v)| {
                        if left { l.push(v) } else { r.push(v) }
                        (l, r)
                    });
                prop_assert!(sse(&l) + sse(&r) <= sse(&y) + 1e-9);
            }
        }

        #[test]
        fn same_seed_same_tree(seed in any::<u64>()) {
            let (ds, y) = random_dataset(seed, 100, 5);
            let cfg = TreeConfig::default();
            let a = fit_tree(&ds, &y, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = fit_tree(&ds, &y, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
