//! Model evaluation: k-fold cross-validation, hyper-parameter search,
//! error metrics, and the leave-one-application-out protocol.
//!
//! Regression quality is root-mean-square error per held-out fold with the
//! cross-validation score being the plain mean of the per-fold RMSEs;
//! classification quality is accuracy. Fold models use the derived seed
//! `split_seed(hp.seed, fold_index)` so an outside re-run of any single
//! fold reproduces the harness exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{
    fit_forest, ForestError, Hyperparams, MaxFeatures, TrainingTargets,
};
use crate::ingest::RunRecord;
use crate::metrics::OffloadLabel;
use crate::rng::{split_seed, SplitMix64};
use crate::stats::FeatureMatrix;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("vector lengths differ: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("input is empty")]
    Empty,
    #[error("invalid fold count k={k} for {n} rows (need 2 <= k <= n)")]
    BadFoldCount { k: usize, n: usize },
    #[error("search space is empty")]
    EmptySpace,
    #[error("fold {fold}: {source}")]
    FoldFit {
        fold: usize,
        #[source]
        source: ForestError,
    },
    #[error("application {0:?} not present in the corpus")]
    AppNotFound(String),
    #[error("no labeled records outside application {0:?}")]
    NoOtherLabeledApps(String),
    #[error("application {0:?} has no labeled records to test on")]
    NoLabeledTestRows(String),
    #[error("model: {0}")]
    Model(String),
    #[error(transparent)]
    Forest(#[from] ForestError),
}

/// Assignment of every row to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    /// `assignment[row] = fold id` in `[0, k)`.
    pub assignment: Vec<usize>,
}

impl FoldAssignment {
    /// Row indices of one fold, ascending.
    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Row indices outside one fold, ascending.
    pub fn complement_rows(&self, fold: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Splits `n` rows into `k` near-equal folds after a seeded shuffle.
///
/// Fold sizes differ by at most one; the first `n % k` folds take the
/// extra row.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldAssignment, EvalError> {
    if k < 2 || k > n {
        return Err(EvalError::BadFoldCount { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(seed);
    rng.shuffle(&mut order);

    let base = n / k;
    let extra = n % k;
    let mut assignment = vec![0usize; n];
    let mut cursor = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &row in &order[cursor..cursor + size] {
            assignment[row] = fold;
        }
        cursor += size;
    }
    Ok(FoldAssignment { k, assignment })
}

/// Root-mean-square error, `N` = vector length.
pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64, EvalError> {
    if predicted.len() != actual.len() {
        return Err(EvalError::ShapeMismatch(predicted.len(), actual.len()));
    }
    if predicted.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = predicted.len() as f64;
    let sum_sq: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok((sum_sq / n).sqrt())
}

/// Fraction of predictions matching the actuals.
pub fn accuracy<T: PartialEq>(predictions: &[T], actuals: &[T]) -> Result<f64, EvalError> {
    if predictions.len() != actuals.len() {
        return Err(EvalError::ShapeMismatch(predictions.len(), actuals.len()));
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let correct = predictions
        .iter()
        .zip(actuals)
        .filter(|(p, a)| p == a)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Cross-validation outcome of one regression hyper-parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub per_fold_rmse: Vec<f64>,
    /// Arithmetic mean of `per_fold_rmse`.
    pub cv_score: f64,
    pub hp: Hyperparams,
}

/// Cross-validation outcome of one classification hyper-parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCvReport {
    pub per_fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub hp: Hyperparams,
}

/// K-fold cross-validation of a regression forest.
pub fn cross_validate(
    m: &FeatureMatrix,
    targets: &[f64],
    hp: &Hyperparams,
    k: usize,
    seed: u64,
) -> Result<CvReport, EvalError> {
    if targets.len() != m.n_rows() {
        return Err(EvalError::ShapeMismatch(targets.len(), m.n_rows()));
    }
    let folds = kfold_split(m.n_rows(), k, seed)?;
    let mut per_fold_rmse = Vec::with_capacity(k);
    for fold in 0..k {
        let train_rows = folds.complement_rows(fold);
        let test_rows = folds.fold_rows(fold);
        let train_m = m.select_rows(&train_rows);
        let train_y: Vec<f64> = train_rows.iter().map(|&r| targets[r]).collect();
        let fold_hp = Hyperparams {
            seed: split_seed(hp.seed, fold as u64),
            ..hp.clone()
        };
        let model = fit_forest(&train_m, &TrainingTargets::Regression(&train_y), &fold_hp)
            .map_err(|source| EvalError::FoldFit { fold, source })?;
        let mut predicted = Vec::with_capacity(test_rows.len());
        let mut actual = Vec::with_capacity(test_rows.len());
        for &r in &test_rows {
            predicted.push(model.predict_regression(&m.rows[r])?);
            actual.push(targets[r]);
        }
        per_fold_rmse.push(rmse(&predicted, &actual)?);
    }
    let cv_score = per_fold_rmse.iter().sum::<f64>() / per_fold_rmse.len() as f64;
    Ok(CvReport {
        per_fold_rmse,
        cv_score,
        hp: hp.clone(),
    })
}

/// K-fold cross-validation of a classification forest, scored by accuracy.
pub fn cross_validate_classes(
    m: &FeatureMatrix,
    classes: &[usize],
    labels: &[String],
    hp: &Hyperparams,
    k: usize,
    seed: u64,
) -> Result<ClassCvReport, EvalError> {
    if classes.len() != m.n_rows() {
        return Err(EvalError::ShapeMismatch(classes.len(), m.n_rows()));
    }
    let folds = kfold_split(m.n_rows(), k, seed)?;
    let mut per_fold_accuracy = Vec::with_capacity(k);
    for fold in 0..k {
        let train_rows = folds.complement_rows(fold);
        let test_rows = folds.fold_rows(fold);
        let train_m = m.select_rows(&train_rows);
        let train_c: Vec<usize> = train_rows.iter().map(|&r| classes[r]).collect();
        let fold_hp = Hyperparams {
            seed: split_seed(hp.seed, fold as u64),
            ..hp.clone()
        };
        let model = fit_forest(
            &train_m,
            &TrainingTargets::Classification {
                classes: &train_c,
                labels,
            },
            &fold_hp,
        )
        .map_err(|source| EvalError::FoldFit { fold, source })?;
        let mut predicted = Vec::with_capacity(test_rows.len());
        let mut actual = Vec::with_capacity(test_rows.len());
        for &r in &test_rows {
            predicted.push(model.predict_class(&m.rows[r])?);
            actual.push(classes[r]);
        }
        per_fold_accuracy.push(accuracy(&predicted, &actual)?);
    }
    let mean_accuracy = per_fold_accuracy.iter().sum::<f64>() / per_fold_accuracy.len() as f64;
    Ok(ClassCvReport {
        per_fold_accuracy,
        mean_accuracy,
        hp: hp.clone(),
    })
}

/// Candidate values per tunable hyper-parameter.
///
/// [`HyperparamSpace::expand`] enumerates the Cartesian product in
/// lexicographic order over the fields as declared here (`n_estimators`
/// varies slowest, `min_samples_leaf` fastest); searches break ties by
/// keeping the earliest candidate in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamSpace {
    pub n_estimators: Vec<usize>,
    pub max_features: Vec<MaxFeatures>,
    pub max_depth: Vec<Option<usize>>,
    pub min_samples_split: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
}

impl HyperparamSpace {
    /// A single-point space around one parameter set.
    pub fn singleton(hp: &Hyperparams) -> Self {
        Self {
            n_estimators: vec![hp.n_estimators],
            max_features: vec![hp.max_features],
            max_depth: vec![hp.max_depth],
            min_samples_split: vec![hp.min_samples_split],
            min_samples_leaf: vec![hp.min_samples_leaf],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n_estimators.is_empty()
            || self.max_features.is_empty()
            || self.max_depth.is_empty()
            || self.min_samples_split.is_empty()
            || self.min_samples_leaf.is_empty()
    }

    /// All combinations, taking `bootstrap` and `seed` from `base`.
    pub fn expand(&self, base: &Hyperparams) -> Vec<Hyperparams> {
        let mut out = Vec::new();
        for &n_estimators in &self.n_estimators {
            for &max_features in &self.max_features {
                for &max_depth in &self.max_depth {
                    for &min_samples_split in &self.min_samples_split {
                        for &min_samples_leaf in &self.min_samples_leaf {
                            out.push(Hyperparams {
                                n_estimators,
                                max_features,
                                max_depth,
                                min_samples_split,
                                min_samples_leaf,
                                bootstrap: base.bootstrap,
                                seed: base.seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// What a search optimizes over.
pub enum SearchTargets<'a> {
    /// Minimize the cross-validation RMSE.
    Regression(&'a [f64]),
    /// Maximize the cross-validation accuracy.
    Classification {
        classes: &'a [usize],
        labels: &'a [String],
    },
}

/// Scored outcome of one searched candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SearchReport {
    Regression(CvReport),
    Classification(ClassCvReport),
}

impl SearchReport {
    pub fn hp(&self) -> &Hyperparams {
        match self {
            SearchReport::Regression(r) => &r.hp,
            SearchReport::Classification(r) => &r.hp,
        }
    }

    /// Score where larger is always better.
    fn merit(&self) -> f64 {
        match self {
            SearchReport::Regression(r) => -r.cv_score,
            SearchReport::Classification(r) => r.mean_accuracy,
        }
    }
}

fn evaluate_candidate(
    m: &FeatureMatrix,
    targets: &SearchTargets,
    hp: &Hyperparams,
    k: usize,
    seed: u64,
) -> Result<SearchReport, EvalError> {
    match targets {
        SearchTargets::Regression(y) => {
            Ok(SearchReport::Regression(cross_validate(m, y, hp, k, seed)?))
        }
        SearchTargets::Classification { classes, labels } => Ok(SearchReport::Classification(
            cross_validate_classes(m, classes, labels, hp, k, seed)?,
        )),
    }
}

fn best_of(candidates: Vec<SearchReport>) -> SearchReport {
    // Strict improvement keeps the first candidate on ties.
    let mut best: Option<SearchReport> = None;
    for c in candidates {
        match &best {
            Some(b) if c.merit() <= b.merit() => {}
            _ => best = Some(c),
        }
    }
    best.expect("non-empty candidate list")
}

/// Evaluates every combination in the space and returns the best.
pub fn grid_search(
    m: &FeatureMatrix,
    targets: &SearchTargets,
    space: &HyperparamSpace,
    base: &Hyperparams,
    k: usize,
    seed: u64,
) -> Result<SearchReport, EvalError> {
    if space.is_empty() {
        return Err(EvalError::EmptySpace);
    }
    let mut reports = Vec::new();
    for hp in space.expand(base) {
        reports.push(evaluate_candidate(m, targets, &hp, k, seed)?);
    }
    Ok(best_of(reports))
}

/// Evaluates `n_draws` seeded uniform draws (with replacement) from the
/// space and returns the best.
pub fn random_search(
    m: &FeatureMatrix,
    targets: &SearchTargets,
    space: &HyperparamSpace,
    base: &Hyperparams,
    n_draws: usize,
    k: usize,
    seed: u64,
) -> Result<SearchReport, EvalError> {
    if space.is_empty() || n_draws == 0 {
        return Err(EvalError::EmptySpace);
    }
    let expanded = space.expand(base);
    let mut rng = SplitMix64::new(seed);
    let mut reports = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let hp = &expanded[rng.next_index(expanded.len())];
        reports.push(evaluate_candidate(m, targets, hp, k, seed)?);
    }
    Ok(best_of(reports))
}

/// Label-by-label count table; rows are actual classes, columns predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Printed in every rendering so the table cannot be misread.
    pub orientation: String,
    pub labels: [OffloadLabel; 3],
    pub counts: [[u64; 3]; 3],
    pub total: u64,
}

pub const CONFUSION_ORIENTATION: &str = "rows=actual, columns=predicted";

impl Default for ConfusionMatrix {
    fn default() -> Self {
        Self::new()
    }
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self {
            orientation: CONFUSION_ORIENTATION.to_string(),
            labels: OffloadLabel::ALL,
            counts: [[0; 3]; 3],
            total: 0,
        }
    }

    pub fn add(&mut self, actual: OffloadLabel, predicted: OffloadLabel) {
        self.counts[actual.index()][predicted.index()] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for a in 0..3 {
            for p in 0..3 {
                self.counts[a][p] += other.counts[a][p];
            }
        }
        self.total += other.total;
    }

    /// trace / total.
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let trace: u64 = (0..3).map(|i| self.counts[i][i]).sum();
        trace as f64 / self.total as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# {}\nactual\\predicted", self.orientation);
        for l in &self.labels {
            out.push(',');
            out.push_str(l.as_str());
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(l.as_str());
            for c in &self.counts[i] {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Builds the confusion matrix of a prediction run.
pub fn confusion(
    predictions: &[OffloadLabel],
    actuals: &[OffloadLabel],
) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != actuals.len() {
        return Err(EvalError::ShapeMismatch(predictions.len(), actuals.len()));
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut cm = ConfusionMatrix::new();
    for (&p, &a) in predictions.iter().zip(actuals) {
        cm.add(a, p);
    }
    Ok(cm)
}

/// One held-out prediction from the leave-one-application-out protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutPrediction {
    pub run: String,
    pub actual: OffloadLabel,
    pub predicted: OffloadLabel,
    /// Probability per label, in [`OffloadLabel::ALL`] order.
    pub probabilities: Vec<f64>,
}

/// Test metrics for one held-out application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppHoldoutReport {
    pub app: String,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<HoldoutPrediction>,
}

/// Leave-one-application-out evaluation.
///
/// Trains on the labeled records of every application except `app` via the
/// `train` closure, then predicts every labeled record of `app` via
/// `predict` (returning the label and the per-label probabilities in
/// [`OffloadLabel::ALL`] order). The held-out application's rows are never
/// given to `train`. Returns the trained model together with the test
/// metrics.
pub fn leave_one_app_out<M, E, TrainFn, PredictFn>(
    records: &[RunRecord],
    app: &str,
    train: TrainFn,
    predict: PredictFn,
) -> Result<(M, AppHoldoutReport), EvalError>
where
    E: std::fmt::Display,
    TrainFn: FnOnce(&[&RunRecord]) -> Result<M, E>,
    PredictFn: Fn(&M, &RunRecord) -> Result<(OffloadLabel, Vec<f64>), E>,
{
    if !records.iter().any(|r| r.spec.app == app) {
        return Err(EvalError::AppNotFound(app.to_string()));
    }
    let train_set: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.spec.app != app && r.label.is_some())
        .collect();
    if train_set.is_empty() {
        return Err(EvalError::NoOtherLabeledApps(app.to_string()));
    }
    let test_set: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.spec.app == app && r.label.is_some())
        .collect();
    if test_set.is_empty() {
        return Err(EvalError::NoLabeledTestRows(app.to_string()));
    }

    let model = train(&train_set).map_err(|e| EvalError::Model(e.to_string()))?;

    let mut predictions = Vec::with_capacity(test_set.len());
    let mut predicted_labels = Vec::with_capacity(test_set.len());
    let mut actual_labels = Vec::with_capacity(test_set.len());
    for rec in &test_set {
        let (label, probabilities) =
            predict(&model, rec).map_err(|e| EvalError::Model(e.to_string()))?;
        let actual = rec.label.expect("test set is labeled");
        predictions.push(HoldoutPrediction {
            run: rec.spec.display_id(),
            actual,
            predicted: label,
            probabilities,
        });
        predicted_labels.push(label);
        actual_labels.push(actual);
    }
    let cm = confusion(&predicted_labels, &actual_labels)?;
    Ok((
        model,
        AppHoldoutReport {
            app: app.to_string(),
            n_train: train_set.len(),
            n_test: test_set.len(),
            accuracy: cm.accuracy(),
            confusion: cm,
            predictions,
        },
    ))
}
