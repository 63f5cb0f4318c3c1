//! Random forest training over bootstrap samples, OOB error and prediction.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, ForestParams, Outcome, ParamError, ValidationError};
use crate::tree::{grow_tree, GrowConfig, LeafValue, Prepared, SplitTest, Tree, TreeNode};

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("invalid dataset: {}", join_errors(.0))]
    Invalid(Vec<ValidationError>),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("no sample is out-of-bag in any tree")]
    NoOutOfBag,
    #[error("OOB error is not provided for survival forests")]
    OobUnsupported,
    #[error("forest was trained on {trained} samples/features, dataset has {given}")]
    ShapeMismatch { trained: usize, given: usize },
    #[error("failed to build thread pool: {0}")]
    ThreadPool(String),
}

pub(crate) fn join_errors(errors: &[ValidationError]) -> String {
    errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

/// Trained ensemble. Immutable; tree `t` depends only on the data, the parameters and `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    params: ForestParams,
    /// Per tree, how often each sample was drawn into the bootstrap.
    inbag: Vec<Vec<u32>>,
    n_features: usize,
}

impl Forest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_samples(&self) -> usize {
        self.inbag.first().map_or(0, |v| v.len())
    }

    pub fn inbag_counts(&self, tree: usize) -> &[u32] {
        &self.inbag[tree]
    }

    /// Hash over every tree structure, split value and surrogate (bit-exact).
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.n_features.hash(&mut h);
        for (tree, inbag) in self.trees.iter().zip(&self.inbag) {
            inbag.hash(&mut h);
            for node in &tree.nodes {
                hash_node(node, &mut h);
            }
        }
        h.finish()
    }

    /// Per-tree predictions for one row: class index (as f64), mean response, or leaf event rate.
    fn tree_prediction(&self, tree: &Tree, dataset: &Dataset, row: usize) -> f64 {
        match tree.leaf_for(dataset, row).leaf.as_ref() {
            Some(leaf @ LeafValue::Classes(_)) => leaf.majority_class().unwrap_or(0) as f64,
            Some(LeafValue::Mean(m)) => *m,
            Some(LeafValue::Events { samples, events }) => *events as f64 / *samples as f64,
            None => f64::NAN,
        }
    }

    /// Majority-vote class (classification) or mean prediction (regression) over all trees.
    pub fn predict(&self, dataset: &Dataset) -> Result<Vec<f64>, ForestError> {
        if dataset.n_features() != self.n_features {
            return Err(ForestError::ShapeMismatch { trained: self.n_features, given: dataset.n_features() });
        }
        let all: Vec<usize> = (0..self.trees.len()).collect();
        Ok((0..dataset.n_samples()).map(|row| self.aggregate(dataset, row, &all)).collect())
    }

    fn aggregate(&self, dataset: &Dataset, row: usize, trees: &[usize]) -> f64 {
        let preds = trees.iter().map(|&t| self.tree_prediction(&self.trees[t], dataset, row));
        match dataset.outcome() {
            Outcome::Classification { classes, .. } => {
                let mut votes = vec![0usize; *classes as usize];
                for p in preds {
                    votes[p as usize] += 1;
                }
                let mut best = 0;
                for (c, &v) in votes.iter().enumerate() {
                    if v > votes[best] {
                        best = c;
                    }
                }
                best as f64
            }
            _ => {
                let (sum, k) = preds.fold((0.0, 0usize), |(s, k), p| (s + p, k + 1));
                sum / k as f64
            }
        }
    }
}

fn hash_node(node: &TreeNode, h: &mut DefaultHasher) {
    node.node_size.hash(h);
    node.depth.hash(h);
    node.impurity_decrease.to_bits().hash(h);
    node.children.hash(h);
    if let Some(split) = &node.split {
        split.feature.hash(h);
        match &split.test {
            SplitTest::Threshold(t) => t.to_bits().hash(h),
            SplitTest::CategorySubset(l) => l.hash(h),
        }
    }
    for s in &node.surrogates {
        s.rule.feature.hash(h);
        s.reversed.hash(h);
        s.adj.to_bits().hash(h);
        match &s.rule.test {
            SplitTest::Threshold(t) => t.to_bits().hash(h),
            SplitTest::CategorySubset(l) => l.hash(h),
        }
    }
    match &node.leaf {
        Some(LeafValue::Classes(c)) => c.hash(h),
        Some(LeafValue::Mean(m)) => m.to_bits().hash(h),
        Some(LeafValue::Events { samples, events }) => (samples, events).hash(h),
        None => {}
    }
}

/// Independent RNG stream for tree `t`.
pub(crate) fn tree_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    rng
}

/// Runs `f` inside a dedicated pool of `threads` workers.
pub(crate) fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, ForestError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| ForestError::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Trains a forest on every feature of `dataset`. Exact ties between splits or between surrogates
/// are broken at random (from the tree's own stream), so no feature is favoured by its position.
pub fn train_forest(dataset: &Dataset, params: &ForestParams) -> Result<Forest, ForestError> {
    dataset.validate().map_err(ForestError::Invalid)?;
    let p = dataset.n_features();
    params.validate(p)?;
    let prep = Prepared::new(dataset);
    let cfg = GrowConfig { mtry: params.mtry, min_node_size: params.min_node_size, surrogates: params.surrogates };
    let n = dataset.n_samples();

    let grown: Vec<(Tree, Vec<u32>)> = with_threads(params.threads, || {
        (0..params.ntree)
            .into_par_iter()
            .map(|t| {
                let mut rng = tree_rng(params.seed, t);
                let mut samples: Vec<u32> = (0..n).map(|_| rng.random_range(0..n as u32)).collect();
                let mut inbag = vec![0u32; n];
                for &s in &samples {
                    inbag[s as usize] += 1;
                }
                samples.sort_unstable();
                let tree = grow_tree(&prep, &cfg, &mut samples, &mut rng);
                (tree, inbag)
            })
            .collect()
    })?;

    let (trees, inbag) = grown.into_iter().unzip();
    Ok(Forest { trees, params: params.clone(), inbag, n_features: p })
}

/// Out-of-bag error: misclassification rate of the OOB majority vote, or OOB mean squared error.
/// Samples that are in-bag for every tree are skipped.
pub fn oob_error(forest: &Forest, dataset: &Dataset) -> Result<f64, ForestError> {
    if matches!(dataset.outcome(), Outcome::Survival { .. }) {
        return Err(ForestError::OobUnsupported);
    }
    if dataset.n_samples() != forest.n_samples() {
        return Err(ForestError::ShapeMismatch { trained: forest.n_samples(), given: dataset.n_samples() });
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for row in 0..dataset.n_samples() {
        let oob: Vec<usize> = (0..forest.trees.len()).filter(|&t| forest.inbag[t][row] == 0).collect();
        if oob.is_empty() {
            continue;
        }
        let pred = forest.aggregate(dataset, row, &oob);
        total += match dataset.outcome() {
            Outcome::Classification { labels, .. } => f64::from(pred as u32 != labels[row]),
            Outcome::Regression { values } => (pred - values[row]).powi(2),
            Outcome::Survival { .. } => unreachable!(),
        };
        counted += 1;
    }
    if counted == 0 {
        return Err(ForestError::NoOutOfBag);
    }
    Ok(total / counted as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureKind;

    #[test]
    fn two_sample_forced_structure() {
        let ds = Dataset::from_columns(
            vec![vec![0.0, 1.0]],
            vec![FeatureKind::Continuous],
            Outcome::Classification { labels: vec![0, 1], classes: 2 },
        )
        .unwrap();
        // find a seed whose bootstrap draws both samples
        let forest = (0..100)
            .map(|seed| {
                let params = ForestParams { ntree: 1, mtry: 1, seed, ..Default::default() };
                train_forest(&ds, &params).unwrap()
            })
            .find(|f| f.inbag_counts(0).iter().all(|&c| c > 0))
            .unwrap();
        let tree = &forest.trees()[0];
        assert_eq!(tree.nodes.len(), 3);
        assert_eq!(tree.root().split.as_ref().unwrap().feature, 0);
        assert_eq!(tree.nodes[1].leaf, Some(LeafValue::Classes(vec![1, 0])));
        assert_eq!(tree.nodes[2].leaf, Some(LeafValue::Classes(vec![0, 1])));
    }

    #[test]
    fn survival_has_no_oob_error() {
        let ds = Dataset::from_columns(
            vec![vec![0.0, 1.0, 2.0]],
            vec![FeatureKind::Continuous],
            Outcome::Survival { time: vec![1.0, 2.0, 3.0], status: vec![true, true, false] },
        )
        .unwrap();
        let f = train_forest(&ds, &ForestParams { ntree: 5, mtry: 1, ..Default::default() }).unwrap();
        assert!(matches!(oob_error(&f, &ds), Err(ForestError::OobUnsupported)));
    }

    #[test]
    fn constant_regression_has_zero_oob_mse() {
        let ds = Dataset::from_columns(
            vec![(0..20).map(|i| i as f64).collect()],
            vec![FeatureKind::Continuous],
            Outcome::Regression { values: vec![3.5; 20] },
        )
        .unwrap();
        let f = train_forest(&ds, &ForestParams { ntree: 20, mtry: 1, ..Default::default() }).unwrap();
        assert_eq!(oob_error(&f, &ds).unwrap(), 0.0);
        assert!(f.trees().iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn rejects_bad_mtry() {
        let ds = Dataset::from_columns(
            vec![vec![0.0, 1.0]],
            vec![FeatureKind::Continuous],
            Outcome::Regression { values: vec![0.0, 1.0] },
        )
        .unwrap();
        let err = train_forest(&ds, &ForestParams { mtry: 2, ..Default::default() }).unwrap_err();
        assert!(matches!(err, ForestError::Params(ParamError::BadMtry { .. })));
    }
}
