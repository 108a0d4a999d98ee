//! CART decision trees and random forests, built from scratch for
//! regression and classification.
//!
//! Training is deterministic given `(data, hyper-parameters, seed)`:
//! per-tree seeds come from [`crate::rng::split_seed`]`(seed, tree_index)`,
//! every tree consumes only its own stream, and trees may therefore train
//! in parallel with results identical to sequential training.
//!
//! The split search is pinned so that independently written searches find
//! bit-identical splits:
//!
//! - candidate thresholds are midpoints of consecutive distinct sorted
//!   values of a feature; a candidate is discarded if rounding pushed the
//!   midpoint outside `[lo, hi)`;
//! - rows with `feature <= threshold` go left;
//! - node impurity is population variance (regression) or Gini
//!   (classification), accumulated in node-row order; the weighted child
//!   impurity is `(n_left * i_left + n_right * i_right) / n`;
//! - a split is accepted only if it strictly reduces the weighted impurity,
//!   and both children must hold at least `min_samples_leaf` rows;
//! - candidates are scanned in ascending feature index, then ascending
//!   threshold, keeping the first strict minimum, which makes the tie-break
//!   "lowest feature index, then lowest threshold".

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{split_seed, SplitMix64};
use crate::stats::FeatureMatrix;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("target for row {0} is not finite")]
    NonFiniteTarget(usize),
    #[error("targets length {got} does not match {expected} rows")]
    TargetLength { got: usize, expected: usize },
    #[error("row {row}: class {class} out of range for {n_classes} classes")]
    ClassOutOfRange {
        row: usize,
        class: usize,
        n_classes: usize,
    },
    #[error("invalid hyper-parameters: {0}")]
    Config(String),
    #[error("row has {got} features, model expects {expected}")]
    SchemaMismatch { got: usize, expected: usize },
    #[error("model mode is {actual}, operation needs {needed}")]
    ModeMismatch {
        actual: &'static str,
        needed: &'static str,
    },
    #[error("model format version {0} unsupported (expected {current})", current = MODEL_FORMAT_VERSION)]
    Version(u32),
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// How many features each node may consider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    /// floor(sqrt(p)), at least 1. The usual classification default.
    Sqrt,
    /// floor(p / 3), at least 1. The usual regression default.
    Third,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(&self, n_features: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor().max(1.0) as usize,
            MaxFeatures::Third => (n_features / 3).max(1),
            MaxFeatures::All => n_features,
            MaxFeatures::Fixed(k) => (*k).min(n_features).max(1),
        }
    }
}

/// Forest hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_estimators: usize,
    pub max_features: MaxFeatures,
    /// `None` = unbounded depth. The root is at depth 0.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Hyperparams {
    pub fn regression_default(seed: u64) -> Self {
        Self {
            n_estimators: 100,
            max_features: MaxFeatures::Third,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            bootstrap: true,
            seed,
        }
    }

    pub fn classification_default(seed: u64) -> Self {
        Self {
            max_features: MaxFeatures::Sqrt,
            ..Self::regression_default(seed)
        }
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_estimators == 0 {
            return Err(ForestError::Config("n_estimators must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(ForestError::Config("min_samples_split must be >= 2".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(ForestError::Config("min_samples_leaf must be >= 1".into()));
        }
        if self.max_depth == Some(0) {
            return Err(ForestError::Config("max_depth must be >= 1 when bounded".into()));
        }
        if let MaxFeatures::Fixed(0) = self.max_features {
            return Err(ForestError::Config("max_features fixed k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeMode {
    Regression,
    Classification,
}

impl TreeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TreeMode::Regression => "regression",
            TreeMode::Classification => "classification",
        }
    }
}

/// Leaf payload: mean target for regression, class counts for
/// classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LeafValue {
    Value(f64),
    Counts(Vec<u64>),
}

/// One node in the flat node array of a tree. Children are indices into
/// that array; nodes are stored in preorder with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: LeafValue,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    /// Index of the leaf a feature row falls into.
    fn leaf_for(&self, row: &[f64]) -> &LeafValue {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                Node::Leaf { value } => return value,
            }
        }
    }

    /// Regression prediction of this single tree.
    pub fn predict_value(&self, row: &[f64]) -> f64 {
        match self.leaf_for(row) {
            LeafValue::Value(v) => *v,
            LeafValue::Counts(_) => f64::NAN,
        }
    }

    /// Class this tree votes for: majority of the leaf counts, ties going
    /// to the lowest class index.
    pub fn vote(&self, row: &[f64]) -> usize {
        match self.leaf_for(row) {
            LeafValue::Counts(counts) => {
                let mut best = 0;
                for (i, c) in counts.iter().enumerate() {
                    if *c > counts[best] {
                        best = i;
                    }
                }
                best
            }
            LeafValue::Value(_) => 0,
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A trained random forest: a bag of CART trees plus everything needed to
/// reproduce or apply it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub format_version: u32,
    pub mode: TreeMode,
    pub hyperparams: Hyperparams,
    pub feature_names: Vec<String>,
    /// Present for classification; label order is the vote-priority order
    /// used to break prediction ties (earlier label wins).
    pub class_labels: Option<Vec<String>>,
    pub per_tree_seeds: Vec<u64>,
    pub trees: Vec<DecisionTree>,
}

/// Training targets aligned with the feature-matrix rows.
pub enum TrainingTargets<'a> {
    Regression(&'a [f64]),
    Classification {
        /// Class index per row; indices point into `labels`.
        classes: &'a [usize],
        labels: &'a [String],
    },
}

impl<'a> TrainingTargets<'a> {
    fn mode(&self) -> TreeMode {
        match self {
            TrainingTargets::Regression(_) => TreeMode::Regression,
            TrainingTargets::Classification { .. } => TreeMode::Classification,
        }
    }

    fn len(&self) -> usize {
        match self {
            TrainingTargets::Regression(y) => y.len(),
            TrainingTargets::Classification { classes, .. } => classes.len(),
        }
    }

    fn validate(&self, n_rows: usize) -> Result<(), ForestError> {
        if self.len() != n_rows {
            return Err(ForestError::TargetLength {
                got: self.len(),
                expected: n_rows,
            });
        }
        match self {
            TrainingTargets::Regression(y) => {
                for (i, v) in y.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(ForestError::NonFiniteTarget(i));
                    }
                }
            }
            TrainingTargets::Classification { classes, labels } => {
                if labels.is_empty() {
                    return Err(ForestError::Config("class label list is empty".into()));
                }
                for (i, c) in classes.iter().enumerate() {
                    if *c >= labels.len() {
                        return Err(ForestError::ClassOutOfRange {
                            row: i,
                            class: *c,
                            n_classes: labels.len(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

// Population variance of the targets under `rows`, accumulated in row
// order; two-pass mean-then-deviations.
fn variance(y: &[f64], rows: &[usize]) -> f64 {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / n;
    rows.iter().map(|&r| (y[r] - mean) * (y[r] - mean)).sum::<f64>() / n
}

// Gini impurity: 1 - sum((count_k / n)^2) evaluated as integer squares.
fn gini(classes: &[usize], rows: &[usize], n_classes: usize) -> f64 {
    let mut counts = vec![0u64; n_classes];
    for &r in rows {
        counts[classes[r]] += 1;
    }
    let n = rows.len() as f64;
    let sum_sq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    1.0 - sum_sq / (n * n)
}

struct TreeBuilder<'a> {
    x: &'a FeatureMatrix,
    targets: &'a TrainingTargets<'a>,
    hp: &'a Hyperparams,
    k_features: usize,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn impurity(&self, rows: &[usize]) -> f64 {
        match self.targets {
            TrainingTargets::Regression(y) => variance(y, rows),
            TrainingTargets::Classification { classes, labels } => {
                gini(classes, rows, labels.len())
            }
        }
    }

    fn leaf(&self, rows: &[usize]) -> Node {
        let value = match self.targets {
            TrainingTargets::Regression(y) => {
                let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
                LeafValue::Value(mean)
            }
            TrainingTargets::Classification { classes, labels } => {
                let mut counts = vec![0u64; labels.len()];
                for &r in rows {
                    counts[classes[r]] += 1;
                }
                LeafValue::Counts(counts)
            }
        };
        Node::Leaf { value }
    }

    /// Weighted child impurity of splitting `rows` on `feature <= t`.
    /// Returns `None` when a side would violate `min_samples_leaf`.
    fn split_cost(&self, rows: &[usize], feature: usize, t: f64) -> Option<f64> {
        let msl = self.hp.min_samples_leaf;
        let mut left: Vec<usize> = Vec::new();
        let mut right: Vec<usize> = Vec::new();
        for &r in rows {
            if self.x.rows[r][feature] <= t {
                left.push(r);
            } else {
                right.push(r);
            }
        }
        if left.len() < msl || right.len() < msl {
            return None;
        }
        let n = rows.len() as f64;
        let cost = (left.len() as f64 * self.impurity(&left)
            + right.len() as f64 * self.impurity(&right))
            / n;
        Some(cost)
    }

    fn best_split(
        &mut self,
        rows: &[usize],
        parent_impurity: f64,
        rng: &mut SplitMix64,
    ) -> Option<(usize, f64)> {
        let p = self.x.n_cols();
        let features: Vec<usize> = if self.k_features >= p {
            (0..p).collect()
        } else {
            rng.sample_indices(p, self.k_features)
        };

        let mut best: Option<(usize, f64)> = None;
        let mut best_cost = parent_impurity;
        for &f in &features {
            let mut values: Vec<f64> = rows.iter().map(|&r| self.x.rows[r][f]).collect();
            values.sort_by(|a, b| a.partial_cmp(b).expect("finite by matrix invariant"));
            values.dedup();
            for pair in values.windows(2) {
                let (lo, hi) = (pair[0], pair[1]);
                let t = (lo + hi) / 2.0;
                if !(lo <= t && t < hi) {
                    continue; // adjacent floats: no representable midpoint
                }
                if let Some(cost) = self.split_cost(rows, f, t) {
                    if cost < best_cost {
                        best_cost = cost;
                        best = Some((f, t));
                    }
                }
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize, rng: &mut SplitMix64) -> usize {
        let index = self.nodes.len();
        self.nodes.push(self.leaf(&rows));

        let depth_ok = self.hp.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || rows.len() < self.hp.min_samples_split {
            return index;
        }
        let impurity = self.impurity(&rows);
        if impurity == 0.0 {
            return index;
        }
        if let Some((feature, threshold)) = self.best_split(&rows, impurity, rng) {
            let (mut left_rows, mut right_rows) = (Vec::new(), Vec::new());
            for &r in &rows {
                if self.x.rows[r][feature] <= threshold {
                    left_rows.push(r);
                } else {
                    right_rows.push(r);
                }
            }
            let left = self.build(left_rows, depth + 1, rng);
            let right = self.build(right_rows, depth + 1, rng);
            self.nodes[index] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
        }
        index
    }
}

fn fit_tree_on(
    x: &FeatureMatrix,
    bag: Vec<usize>,
    targets: &TrainingTargets,
    hp: &Hyperparams,
    rng: &mut SplitMix64,
) -> DecisionTree {
    let mut builder = TreeBuilder {
        x,
        targets,
        hp,
        k_features: hp.max_features.resolve(x.n_cols()),
        nodes: Vec::new(),
    };
    builder.build(bag, 0, rng);
    DecisionTree {
        nodes: builder.nodes,
    }
}

/// Fits a single CART tree on every row of `x`.
pub fn fit_tree(
    x: &FeatureMatrix,
    targets: &TrainingTargets,
    hp: &Hyperparams,
    rng: &mut SplitMix64,
) -> Result<DecisionTree, ForestError> {
    hp.validate()?;
    if x.n_rows() == 0 {
        return Err(ForestError::EmptyTrainingSet);
    }
    targets.validate(x.n_rows())?;
    Ok(fit_tree_on(x, (0..x.n_rows()).collect(), targets, hp, rng))
}

/// A same-size resample of `0..n` drawn with replacement.
pub fn bootstrap_indices(rng: &mut SplitMix64, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.next_index(n)).collect()
}

/// Fits a random forest.
///
/// Tree `i` trains on a bootstrap resample (or the full set when
/// `bootstrap` is off) using seed `split_seed(hp.seed, i)`; the result does
/// not depend on how many threads run the training.
pub fn fit_forest(
    x: &FeatureMatrix,
    targets: &TrainingTargets,
    hp: &Hyperparams,
) -> Result<RandomForestModel, ForestError> {
    hp.validate()?;
    if x.n_rows() == 0 {
        return Err(ForestError::EmptyTrainingSet);
    }
    targets.validate(x.n_rows())?;

    let n = x.n_rows();
    let seeds: Vec<u64> = (0..hp.n_estimators)
        .map(|i| split_seed(hp.seed, i as u64))
        .collect();

    let trees: Vec<DecisionTree> = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = SplitMix64::new(seed);
            let bag = if hp.bootstrap {
                bootstrap_indices(&mut rng, n)
            } else {
                (0..n).collect()
            };
            fit_tree_on(x, bag, targets, hp, &mut rng)
        })
        .collect();

    let class_labels = match targets {
        TrainingTargets::Regression(_) => None,
        TrainingTargets::Classification { labels, .. } => Some(labels.to_vec()),
    };
    Ok(RandomForestModel {
        format_version: MODEL_FORMAT_VERSION,
        mode: targets.mode(),
        hyperparams: hp.clone(),
        feature_names: x.columns.clone(),
        class_labels,
        per_tree_seeds: seeds,
        trees,
    })
}

impl RandomForestModel {
    fn check_row(&self, row: &[f64]) -> Result<(), ForestError> {
        if row.len() != self.feature_names.len() {
            return Err(ForestError::SchemaMismatch {
                got: row.len(),
                expected: self.feature_names.len(),
            });
        }
        Ok(())
    }

    fn check_mode(&self, needed: TreeMode) -> Result<(), ForestError> {
        if self.mode != needed {
            return Err(ForestError::ModeMismatch {
                actual: self.mode.as_str(),
                needed: needed.as_str(),
            });
        }
        Ok(())
    }

    /// Mean of the per-tree leaf values.
    pub fn predict_regression(&self, row: &[f64]) -> Result<f64, ForestError> {
        self.check_mode(TreeMode::Regression)?;
        self.check_row(row)?;
        let sum: f64 = self.trees.iter().map(|t| t.predict_value(row)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// Number of trees voting each class.
    pub fn predict_votes(&self, row: &[f64]) -> Result<Vec<u64>, ForestError> {
        self.check_mode(TreeMode::Classification)?;
        self.check_row(row)?;
        let n_classes = self.class_labels.as_ref().map_or(0, |l| l.len());
        let mut votes = vec![0u64; n_classes];
        for tree in &self.trees {
            votes[tree.vote(row)] += 1;
        }
        Ok(votes)
    }

    /// Vote fractions per class; sums to 1 as a ratio of integers over
    /// `n_estimators`.
    pub fn predict_proba(&self, row: &[f64]) -> Result<Vec<f64>, ForestError> {
        let votes = self.predict_votes(row)?;
        let n = self.trees.len() as f64;
        Ok(votes.iter().map(|&v| v as f64 / n).collect())
    }

    /// Class index with the most votes; ties break to the lowest index,
    /// i.e. the earliest label in `class_labels`.
    pub fn predict_class(&self, row: &[f64]) -> Result<usize, ForestError> {
        let votes = self.predict_votes(row)?;
        let mut best = 0;
        for (i, v) in votes.iter().enumerate() {
            if *v > votes[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Canonical JSON rendering; a fixed point of parse-then-render.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ForestError> {
        let model: RandomForestModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(ForestError::Version(model.format_version));
        }
        Ok(model)
    }
}
