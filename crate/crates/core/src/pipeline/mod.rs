//! End-to-end orchestration: build the labeled corpus, train the
//! two-stage model, persist it, and predict offload suitability for
//! unseen applications.
//!
//! Stage 1 is a regression forest predicting the simulated IPC from
//! host-side features only; stage 2 is a classification forest consuming
//! the same host features plus the IPC (the true value during training,
//! the stage-1 prediction at inference). Prediction therefore never needs
//! simulator data.

pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{
    grid_search, random_search, ClassCvReport, CvReport, EvalError, HyperparamSpace, SearchReport,
    SearchTargets,
};
use crate::forest::{
    fit_forest, ForestError, Hyperparams, RandomForestModel, TrainingTargets, MODEL_FORMAT_VERSION,
};
use crate::ingest::{load_corpus, IngestError, PerfProfile, PerfSchema, Role, RunRecord, RunSpec};
use crate::metrics::{
    derive_features, label_decision_with, roofline_classify, BoundaryConvention, DerivedFeatures,
    MachineRoofline, MetricsError, OffloadLabel, RooflineRegion, UnitConfig,
};
use crate::rng::split_seed;
use crate::stats::{
    correlation_matrix, select_features, CorrelationMatrix, FeatureMatrix, StatsError,
};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Feature column order of the training matrix.
pub const FEATURE_COLUMNS: [&str; 12] = [
    "host_total_energy_j",
    "host_edp_js",
    "host_dram_access_gb",
    "host_flops",
    "host_gflops_per_s",
    "host_flop_per_byte",
    "threads",
    "nmc_ipc",
    "nmc_total_time_ns",
    "nmc_trace_energy_pj",
    "nmc_edp_js",
    "edp_speedup",
];

/// Host-side features available at prediction time.
pub const HOST_FEATURE_CANDIDATES: [&str; 7] = [
    "host_total_energy_j",
    "host_edp_js",
    "host_dram_access_gb",
    "host_flops",
    "host_gflops_per_s",
    "host_flop_per_byte",
    "threads",
];

/// Stage-1 regression target and stage-2 extra input.
pub const IPC_FEATURE: &str = "nmc_ipc";

/// Selection target.
pub const TARGET_FEATURE: &str = "edp_speedup";

/// Simulator-side columns that must never become model inputs.
pub const LEAKAGE_BANNED: [&str; 4] = [
    "nmc_ipc",
    "nmc_total_time_ns",
    "nmc_trace_energy_pj",
    "nmc_edp_js",
];

pub fn class_label_names() -> Vec<String> {
    OffloadLabel::ALL.iter().map(|l| l.as_str().to_string()).collect()
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage}: {source}")]
    Ingest {
        stage: &'static str,
        #[source]
        source: IngestError,
    },
    #[error("{stage}: {source}")]
    Metrics {
        stage: &'static str,
        #[source]
        source: MetricsError,
    },
    #[error("{stage}: {source}")]
    Stats {
        stage: &'static str,
        #[source]
        source: StatsError,
    },
    #[error("{stage}: {source}")]
    Eval {
        stage: &'static str,
        #[source]
        source: EvalError,
    },
    #[error("{stage}: {source}")]
    Forest {
        stage: &'static str,
        #[source]
        source: ForestError,
    },
    #[error("corpus has {0} labeled training application(s); at least 2 required")]
    TooFewApps(usize),
    #[error("training run {0} has no simulator data")]
    IncompleteTrainRecord(String),
    #[error("profile does not satisfy the model feature schema; missing {0:?}")]
    Schema(Vec<String>),
    #[error("bundle format version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("model file corrupted: {0}")]
    Integrity(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("output {0} already exists (re-run with force to overwrite)")]
    OutputExists(PathBuf),
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("internal: {0}")]
    Internal(String),
}

impl PipelineError {
    fn ingest(stage: &'static str) -> impl FnOnce(IngestError) -> Self {
        move |source| PipelineError::Ingest { stage, source }
    }
    fn metrics(stage: &'static str) -> impl FnOnce(MetricsError) -> Self {
        move |source| PipelineError::Metrics { stage, source }
    }
    fn stats(stage: &'static str) -> impl FnOnce(StatsError) -> Self {
        move |source| PipelineError::Stats { stage, source }
    }
    fn eval(stage: &'static str) -> impl FnOnce(EvalError) -> Self {
        move |source| PipelineError::Eval { stage, source }
    }
    fn forest(stage: &'static str) -> impl FnOnce(ForestError) -> Self {
        move |source| PipelineError::Forest { stage, source }
    }
}

/// Machine roofs, given either as bandwidths or directly as ridge points.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RooflineConfig {
    pub peak_gflops: f64,
    pub dram_bw_gbs: Option<f64>,
    pub l3_bw_gbs: Option<f64>,
    pub ridge_dram: Option<f64>,
    pub ridge_l3: Option<f64>,
}

impl Default for RooflineConfig {
    fn default() -> Self {
        Self {
            peak_gflops: 300.8,
            dram_bw_gbs: None,
            l3_bw_gbs: None,
            ridge_dram: Some(7.05),
            ridge_l3: Some(0.73),
        }
    }
}

impl RooflineConfig {
    pub fn to_machine(&self) -> Result<MachineRoofline, MetricsError> {
        match (self.dram_bw_gbs, self.l3_bw_gbs) {
            (Some(dram), Some(l3)) => MachineRoofline::new(self.peak_gflops, dram, l3),
            _ => {
                let rd = self.ridge_dram.unwrap_or(7.05);
                let rl = self.ridge_l3.unwrap_or(0.73);
                MachineRoofline::from_ridges(self.peak_gflops, rd, rl)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Keep features with `|r|` to the target at or above this.
    pub threshold: f64,
    pub must_keep: Vec<String>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            must_keep: vec![],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMethod {
    Grid,
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub method: SearchMethod,
    /// Draw count for random search.
    pub n_draws: usize,
    pub bootstrap: bool,
    pub regressor: HyperparamSpace,
    pub classifier: HyperparamSpace,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            method: SearchMethod::Grid,
            n_draws: 16,
            bootstrap: true,
            regressor: HyperparamSpace::singleton(&Hyperparams::regression_default(0)),
            classifier: HyperparamSpace::singleton(&Hyperparams::classification_default(0)),
        }
    }
}

/// Everything a training run needs, loadable from a JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub config_version: u32,
    pub manifest: PathBuf,
    pub seed: u64,
    pub cv_k: usize,
    pub perf_schema: PerfSchema,
    pub roofline: RooflineConfig,
    pub units: UnitConfig,
    pub selection: SelectionConfig,
    pub label_boundary: BoundaryConvention,
    /// Additionally evaluate a host-features-only classifier for
    /// comparison against the two-stage path.
    pub direct_classifier: bool,
    pub search: SearchConfig,
    /// Optional paired profiler timings for the overhead report:
    /// (app, fast profiler seconds, reference profiler seconds).
    pub overhead_timings: Option<Vec<report::OverheadTiming>>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            config_version: 1,
            manifest: PathBuf::from("manifest.json"),
            seed: 42,
            cv_k: 5,
            perf_schema: PerfSchema::default(),
            roofline: RooflineConfig::default(),
            units: UnitConfig::default(),
            selection: SelectionConfig::default(),
            label_boundary: BoundaryConvention::default(),
            direct_classifier: false,
            search: SearchConfig::default(),
            overhead_timings: None,
        }
    }
}

impl PipelineConfig {
    /// Loads a config file, resolving the manifest path against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        if cfg.config_version != 1 {
            return Err(PipelineError::Config {
                path: path.to_path_buf(),
                message: format!("config_version {} unsupported", cfg.config_version),
            });
        }
        if cfg.manifest.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.manifest = dir.join(&cfg.manifest);
            }
        }
        Ok(cfg)
    }
}

/// Ordered host features plus the name of the predicted-IPC slot the
/// classifier consumes after them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub host_features: Vec<String>,
    pub ipc_feature: String,
}

impl FeatureSchema {
    pub fn classifier_columns(&self) -> Vec<String> {
        let mut cols = self.host_features.clone();
        cols.push(self.ipc_feature.clone());
        cols
    }
}

/// How the input features were chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub target: String,
    pub threshold: f64,
    pub selected: Vec<String>,
    pub correlation: CorrelationMatrix,
}

/// The persisted pair of models plus everything prediction needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub created_at: String,
    pub feature_schema: FeatureSchema,
    pub ipc_regressor: RandomForestModel,
    pub suitability_classifier: RandomForestModel,
    pub selection_report: SelectionReport,
    pub roofline: MachineRoofline,
    pub units: UnitConfig,
    pub perf_schema: PerfSchema,
    pub label_boundary: BoundaryConvention,
}

impl ModelBundle {
    /// Canonical JSON rendering; a fixed point of parse-then-render.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    /// FNV-1a 64-bit hash of the canonical JSON, as `fnv1a64:<hex>`.
    pub fn provenance_hash(&self) -> String {
        format!("fnv1a64:{:016x}", fnv1a64(self.to_json().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.format_version != BUNDLE_FORMAT_VERSION {
            return Err(PipelineError::Version {
                found: self.format_version,
                expected: BUNDLE_FORMAT_VERSION,
            });
        }
        for (name, model) in [
            ("ipc_regressor", &self.ipc_regressor),
            ("suitability_classifier", &self.suitability_classifier),
        ] {
            if model.format_version != MODEL_FORMAT_VERSION {
                return Err(PipelineError::Version {
                    found: model.format_version,
                    expected: MODEL_FORMAT_VERSION,
                });
            }
            if model.trees.is_empty() {
                return Err(PipelineError::Integrity(format!("{name} has no trees")));
            }
        }
        if self.ipc_regressor.feature_names != self.feature_schema.host_features {
            return Err(PipelineError::Integrity(
                "regressor schema differs from host feature list".into(),
            ));
        }
        if self.suitability_classifier.feature_names != self.feature_schema.classifier_columns() {
            return Err(PipelineError::Integrity(
                "classifier schema is not host features plus the IPC slot".into(),
            ));
        }
        if self.suitability_classifier.class_labels.as_deref() != Some(&class_label_names()[..]) {
            return Err(PipelineError::Integrity(
                "classifier labels are not the offload label set".into(),
            ));
        }
        Ok(())
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Writes the bundle as canonical JSON via a temporary file and an atomic
/// rename; no partial file is left on failure.
pub fn save_model(bundle: &ModelBundle, path: &Path) -> Result<(), PipelineError> {
    bundle.validate()?;
    let json = bundle.to_json();
    atomic_write(path, json.as_bytes())
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp-write");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|source| PipelineError::Io {
        path: tmp.clone(),
        source,
    })?;
    std::fs::rename(&tmp, path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads and validates a bundle written by [`save_model`].
pub fn load_model(path: &Path) -> Result<ModelBundle, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| PipelineError::Integrity(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| PipelineError::Integrity("missing format_version".into()))?;
    if version != u64::from(BUNDLE_FORMAT_VERSION) {
        return Err(PipelineError::Version {
            found: version as u32,
            expected: BUNDLE_FORMAT_VERSION,
        });
    }
    let bundle: ModelBundle =
        serde_json::from_value(value).map_err(|e| PipelineError::Integrity(e.to_string()))?;
    bundle.validate()?;
    Ok(bundle)
}

/// Derives features and labels in place for every record that has the
/// data for them.
pub fn prepare_records(
    records: &mut [RunRecord],
    units: &UnitConfig,
    boundary: BoundaryConvention,
) -> Result<(), PipelineError> {
    for rec in records.iter_mut() {
        let derived = derive_features(rec, units).map_err(PipelineError::metrics("derive"))?;
        rec.label = match derived.edp_speedup {
            Some(s) => Some(label_decision_with(s, boundary).map_err(PipelineError::metrics("label"))?),
            None => None,
        };
        rec.derived = Some(derived);
        rec.validate().map_err(PipelineError::ingest("assemble"))?;
    }
    Ok(())
}

fn host_feature_value(derived: &DerivedFeatures, spec: &RunSpec, name: &str) -> Option<f64> {
    match name {
        "host_total_energy_j" => Some(derived.host_total_energy_j),
        "host_edp_js" => Some(derived.host_edp_js),
        "host_dram_access_gb" => Some(derived.host_dram_access_gb),
        "host_flops" => Some(derived.host_flops),
        "host_gflops_per_s" => Some(derived.host_gflops_per_s),
        "host_flop_per_byte" => Some(derived.host_flop_per_byte),
        "threads" => Some(f64::from(spec.threads)),
        _ => None,
    }
}

/// Builds the full 12-column training matrix over labeled records.
pub fn training_matrix(records: &[&RunRecord]) -> Result<FeatureMatrix, PipelineError> {
    let columns: Vec<String> = FEATURE_COLUMNS.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::with_capacity(records.len());
    for rec in records {
        let derived = rec
            .derived
            .as_ref()
            .ok_or_else(|| PipelineError::Internal(format!("{} lacks derived features", rec.spec.display_id())))?;
        let nmc = |v: Option<f64>| {
            v.ok_or_else(|| PipelineError::IncompleteTrainRecord(rec.spec.display_id()))
        };
        let mut row = Vec::with_capacity(FEATURE_COLUMNS.len());
        for name in HOST_FEATURE_CANDIDATES {
            row.push(host_feature_value(derived, &rec.spec, name).expect("host feature"));
        }
        row.push(nmc(derived.nmc_ipc)?);
        row.push(nmc(derived.nmc_total_time_ns)?);
        row.push(nmc(derived.nmc_trace_energy_pj)?);
        row.push(nmc(derived.nmc_edp_js)?);
        row.push(nmc(derived.edp_speedup)?);
        rows.push(row);
    }
    FeatureMatrix::new(columns, rows, Some(TARGET_FEATURE.to_string()))
        .map_err(PipelineError::stats("matrix"))
}

/// The two trained stages plus the selected feature list.
struct TwoStageModel {
    schema: FeatureSchema,
    regressor: RandomForestModel,
    classifier: RandomForestModel,
}

fn select_host_features(
    cm: &CorrelationMatrix,
    selection: &SelectionConfig,
    warnings: &mut Vec<String>,
) -> Result<Vec<String>, PipelineError> {
    let banned: Vec<String> = LEAKAGE_BANNED.iter().map(|s| s.to_string()).collect();
    let selected = select_features(
        cm,
        TARGET_FEATURE,
        selection.threshold,
        &selection.must_keep,
        &banned,
    )
    .map_err(PipelineError::stats("selection"))?;
    if selected.is_empty() {
        warnings.push(
            "feature selection kept nothing above the threshold; using all host-side candidates"
                .to_string(),
        );
        return Ok(HOST_FEATURE_CANDIDATES.iter().map(|s| s.to_string()).collect());
    }
    Ok(selected)
}

fn class_indices(records: &[&RunRecord]) -> Vec<usize> {
    records
        .iter()
        .map(|r| r.label.expect("labeled training record").index())
        .collect()
}

fn fit_two_stage(
    matrix: &FeatureMatrix,
    records: &[&RunRecord],
    schema: &FeatureSchema,
    hp_reg: &Hyperparams,
    hp_cls: &Hyperparams,
) -> Result<TwoStageModel, PipelineError> {
    let x1 = matrix
        .select_columns(&schema.host_features)
        .map_err(PipelineError::stats("stage1"))?;
    let y1 = matrix
        .column(IPC_FEATURE)
        .map_err(PipelineError::stats("stage1"))?;
    let regressor = fit_forest(&x1, &TrainingTargets::Regression(&y1), hp_reg)
        .map_err(PipelineError::forest("stage1"))?;

    let x2 = matrix
        .select_columns(&schema.classifier_columns())
        .map_err(PipelineError::stats("stage2"))?;
    let classes = class_indices(records);
    let labels = class_label_names();
    let classifier = fit_forest(
        &x2,
        &TrainingTargets::Classification {
            classes: &classes,
            labels: &labels,
        },
        hp_cls,
    )
    .map_err(PipelineError::forest("stage2"))?;

    Ok(TwoStageModel {
        schema: schema.clone(),
        regressor,
        classifier,
    })
}

fn two_stage_predict(
    model: &TwoStageModel,
    derived: &DerivedFeatures,
    spec: &RunSpec,
) -> Result<(OffloadLabel, Vec<f64>, f64), PipelineError> {
    let mut x1 = Vec::with_capacity(model.schema.host_features.len());
    let mut missing = Vec::new();
    for name in &model.schema.host_features {
        match host_feature_value(derived, spec, name) {
            Some(v) => x1.push(v),
            None => missing.push(name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(PipelineError::Schema(missing));
    }
    let ipc_hat = model
        .regressor
        .predict_regression(&x1)
        .map_err(PipelineError::forest("stage1"))?;
    let mut x2 = x1;
    x2.push(ipc_hat);
    let probabilities = model
        .classifier
        .predict_proba(&x2)
        .map_err(PipelineError::forest("stage2"))?;
    let class = model
        .classifier
        .predict_class(&x2)
        .map_err(PipelineError::forest("stage2"))?;
    let label = OffloadLabel::from_index(class)
        .ok_or_else(|| PipelineError::Internal(format!("class index {class} out of range")))?;
    Ok((label, probabilities, ipc_hat))
}

/// Summary emitted next to the bundle after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_train_rows: usize,
    pub n_apps: usize,
    pub selected_features: Vec<String>,
    pub regressor_cv: CvReport,
    pub classifier_cv: ClassCvReport,
    /// Cross-validation of the comparison classifier that sees host
    /// features only (no IPC slot), when enabled.
    pub direct_classifier_cv: Option<ClassCvReport>,
    pub class_counts: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

/// Trains the full pipeline from a config file.
///
/// The bundle timestamp comes from `SOURCE_DATE_EPOCH` when set (seconds
/// since the epoch), otherwise from the system clock; use
/// [`train_pipeline_at`] to pin it explicitly.
pub fn train_pipeline(cfg: &PipelineConfig) -> Result<(ModelBundle, TrainReport), PipelineError> {
    let created_at = timestamp_now();
    train_pipeline_at(cfg, &created_at)
}

pub fn train_pipeline_at(
    cfg: &PipelineConfig,
    created_at: &str,
) -> Result<(ModelBundle, TrainReport), PipelineError> {
    let mut records =
        load_corpus(&cfg.manifest, &cfg.perf_schema).map_err(PipelineError::ingest("ingest"))?;
    prepare_records(&mut records, &cfg.units, cfg.label_boundary)?;
    train_pipeline_on(&records, cfg, created_at)
}

/// Trains on an already ingested and prepared corpus.
pub fn train_pipeline_on(
    records: &[RunRecord],
    cfg: &PipelineConfig,
    created_at: &str,
) -> Result<(ModelBundle, TrainReport), PipelineError> {
    let mut warnings = Vec::new();

    let train_records: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.spec.role == Role::Train)
        .collect();
    for rec in &train_records {
        if rec.nmc.is_none() || rec.label.is_none() {
            return Err(PipelineError::IncompleteTrainRecord(rec.spec.display_id()));
        }
    }
    let mut apps: Vec<&str> = train_records.iter().map(|r| r.spec.app.as_str()).collect();
    apps.sort_unstable();
    apps.dedup();
    if apps.len() < 2 {
        return Err(PipelineError::TooFewApps(apps.len()));
    }

    let matrix = training_matrix(&train_records)?;
    let cm = correlation_matrix(&matrix).map_err(PipelineError::stats("correlation"))?;
    for (a, b) in &cm.undefined_pairs {
        if a == b {
            warnings.push(format!("feature {a:?} is constant; its correlations are undefined"));
        }
    }
    let selected = select_host_features(&cm, &cfg.selection, &mut warnings)?;
    let schema = FeatureSchema {
        host_features: selected.clone(),
        ipc_feature: IPC_FEATURE.to_string(),
    };

    // Class balance check.
    let classes = class_indices(&train_records);
    let mut class_counts: BTreeMap<String, usize> = BTreeMap::new();
    for label in OffloadLabel::ALL {
        class_counts.insert(label.as_str().to_string(), 0);
    }
    for &c in &classes {
        *class_counts
            .get_mut(OffloadLabel::from_index(c).expect("valid class").as_str())
            .expect("all labels present") += 1;
    }
    let scarce: Vec<&str> = class_counts
        .iter()
        .filter(|(_, &n)| (n as f64) < 0.1 * classes.len() as f64)
        .map(|(name, _)| name.as_str())
        .collect();
    if !scarce.is_empty() {
        warnings.push(format!(
            "class imbalance: label(s) {scarce:?} cover less than 10% of training rows"
        ));
    }

    // Stage 1 search: predict IPC from host features.
    let x1 = matrix
        .select_columns(&schema.host_features)
        .map_err(PipelineError::stats("stage1"))?;
    let y1 = matrix
        .column(IPC_FEATURE)
        .map_err(PipelineError::stats("stage1"))?;
    let base_reg = Hyperparams {
        bootstrap: cfg.search.bootstrap,
        ..Hyperparams::regression_default(split_seed(cfg.seed, 1))
    };
    let reg_report = run_search(
        &x1,
        &SearchTargets::Regression(&y1),
        &cfg.search,
        &cfg.search.regressor,
        &base_reg,
        cfg.cv_k,
        split_seed(cfg.seed, 2),
    )?;
    let regressor_cv = match reg_report {
        SearchReport::Regression(r) => r,
        SearchReport::Classification(_) => {
            return Err(PipelineError::Internal("regression search returned classification".into()))
        }
    };

    // Stage 2 search: classify from host features plus the true IPC.
    let x2 = matrix
        .select_columns(&schema.classifier_columns())
        .map_err(PipelineError::stats("stage2"))?;
    let labels = class_label_names();
    let base_cls = Hyperparams {
        bootstrap: cfg.search.bootstrap,
        ..Hyperparams::classification_default(split_seed(cfg.seed, 3))
    };
    let cls_report = run_search(
        &x2,
        &SearchTargets::Classification {
            classes: &classes,
            labels: &labels,
        },
        &cfg.search,
        &cfg.search.classifier,
        &base_cls,
        cfg.cv_k,
        split_seed(cfg.seed, 4),
    )?;
    let classifier_cv = match cls_report {
        SearchReport::Classification(r) => r,
        SearchReport::Regression(_) => {
            return Err(PipelineError::Internal("classification search returned regression".into()))
        }
    };

    let direct_classifier_cv = if cfg.direct_classifier {
        Some(
            crate::eval::cross_validate_classes(
                &x1,
                &classes,
                &labels,
                &classifier_cv.hp,
                cfg.cv_k,
                split_seed(cfg.seed, 5),
            )
            .map_err(PipelineError::eval("direct-classifier"))?,
        )
    } else {
        None
    };

    let model = fit_two_stage(
        &matrix,
        &train_records,
        &schema,
        &regressor_cv.hp,
        &classifier_cv.hp,
    )?;

    let bundle = ModelBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        created_at: created_at.to_string(),
        feature_schema: model.schema,
        ipc_regressor: model.regressor,
        suitability_classifier: model.classifier,
        selection_report: SelectionReport {
            target: TARGET_FEATURE.to_string(),
            threshold: cfg.selection.threshold,
            selected,
            correlation: cm,
        },
        roofline: cfg
            .roofline
            .to_machine()
            .map_err(PipelineError::metrics("roofline"))?,
        units: cfg.units.clone(),
        perf_schema: cfg.perf_schema.clone(),
        label_boundary: cfg.label_boundary,
    };
    bundle.validate()?;

    let report = TrainReport {
        n_train_rows: train_records.len(),
        n_apps: apps.len(),
        selected_features: bundle.feature_schema.host_features.clone(),
        regressor_cv,
        classifier_cv,
        direct_classifier_cv,
        class_counts,
        warnings,
    };
    Ok((bundle, report))
}

#[allow(clippy::too_many_arguments)]
fn run_search(
    m: &FeatureMatrix,
    targets: &SearchTargets,
    search: &SearchConfig,
    space: &HyperparamSpace,
    base: &Hyperparams,
    k: usize,
    seed: u64,
) -> Result<SearchReport, PipelineError> {
    let result = match search.method {
        SearchMethod::Grid => grid_search(m, targets, space, base, k, seed),
        SearchMethod::Random => random_search(m, targets, space, base, search.n_draws, k, seed),
    };
    result.map_err(PipelineError::eval("search"))
}

/// One offload-suitability prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub app: String,
    pub spec: RunSpec,
    pub predicted_ipc: f64,
    pub label: OffloadLabel,
    pub probabilities: Probabilities,
    /// Advisory roofline context; absent when the profile has no
    /// floating-point work to place on the intensity axis.
    pub roofline_region: Option<RooflineRegion>,
    pub model_hash: String,
}

/// Per-label probabilities with a stable field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probabilities {
    pub yes: f64,
    pub maybe: f64,
    pub no: f64,
}

impl Probabilities {
    pub fn from_vec(v: &[f64]) -> Self {
        Self {
            yes: v[OffloadLabel::Yes.index()],
            maybe: v[OffloadLabel::Maybe.index()],
            no: v[OffloadLabel::No.index()],
        }
    }

    pub fn sum(&self) -> f64 {
        self.yes + self.maybe + self.no
    }
}

/// Predicts offload suitability from a host profile alone.
///
/// Derives host features, runs the stage-1 regressor for the IPC estimate,
/// feeds host features plus that estimate to the stage-2 classifier, and
/// attaches the roofline region as advisory context. No simulator-side
/// input exists on this path.
pub fn predict_offload(
    bundle: &ModelBundle,
    host_profile: &PerfProfile,
    spec: &RunSpec,
) -> Result<Prediction, PipelineError> {
    let record = RunRecord::new(spec.clone(), host_profile.clone(), None);
    let derived = derive_features(&record, &bundle.units).map_err(|e| match e {
        MetricsError::MissingEvent(name) => PipelineError::Schema(vec![name]),
        other => PipelineError::Metrics {
            stage: "derive",
            source: other,
        },
    })?;
    predict_from_derived(bundle, &derived, spec)
}

/// Prediction for an already assembled record; simulator-side fields of
/// the record are ignored entirely.
pub fn predict_for_record(
    bundle: &ModelBundle,
    record: &RunRecord,
) -> Result<Prediction, PipelineError> {
    predict_offload(bundle, &record.host, &record.spec)
}

fn predict_from_derived(
    bundle: &ModelBundle,
    derived: &DerivedFeatures,
    spec: &RunSpec,
) -> Result<Prediction, PipelineError> {
    let model = TwoStageModel {
        schema: bundle.feature_schema.clone(),
        regressor: bundle.ipc_regressor.clone(),
        classifier: bundle.suitability_classifier.clone(),
    };
    let (label, proba, ipc_hat) = two_stage_predict(&model, derived, spec)?;
    let roofline_region = if derived.host_flop_per_byte > 0.0 && derived.host_gflops_per_s > 0.0 {
        Some(
            roofline_classify(
                &spec.app,
                derived.host_flop_per_byte,
                derived.host_gflops_per_s,
                &bundle.roofline,
            )
            .map_err(PipelineError::metrics("roofline"))?
            .region,
        )
    } else {
        None
    };
    Ok(Prediction {
        app: spec.app.clone(),
        spec: spec.clone(),
        predicted_ipc: ipc_hat,
        label,
        probabilities: Probabilities::from_vec(&proba),
        roofline_region,
        model_hash: bundle.provenance_hash(),
    })
}

/// Per-split configuration of the leave-one-application-out protocol.
#[derive(Debug, Clone)]
pub struct HoldoutConfig {
    pub selection: SelectionConfig,
    pub hp_regressor: Hyperparams,
    pub hp_classifier: Hyperparams,
}

/// Models trained for one held-out application, with its test metrics.
#[derive(Debug, Clone)]
pub struct HoldoutOutcome {
    pub ipc_regressor: RandomForestModel,
    pub suitability_classifier: RandomForestModel,
    pub report: crate::eval::AppHoldoutReport,
}

/// Leave-one-application-out evaluation of the two-stage pipeline.
///
/// Feature selection and both stage fits run on the training split only;
/// `records` must already carry derived features and labels (see
/// [`prepare_records`]).
pub fn leave_one_app_out_eval(
    records: &[RunRecord],
    app: &str,
    cfg: &HoldoutConfig,
) -> Result<HoldoutOutcome, PipelineError> {
    let (model, report) = crate::eval::leave_one_app_out(
        records,
        app,
        |train| -> Result<TwoStageModel, PipelineError> {
            let matrix = training_matrix(train)?;
            let cm = correlation_matrix(&matrix).map_err(PipelineError::stats("correlation"))?;
            let mut warnings = Vec::new();
            let selected = select_host_features(&cm, &cfg.selection, &mut warnings)?;
            let schema = FeatureSchema {
                host_features: selected,
                ipc_feature: IPC_FEATURE.to_string(),
            };
            fit_two_stage(&matrix, train, &schema, &cfg.hp_regressor, &cfg.hp_classifier)
        },
        |model, rec| {
            let derived = rec
                .derived
                .as_ref()
                .ok_or_else(|| PipelineError::Internal("record lacks derived features".into()))?;
            let (label, proba, _) = two_stage_predict(model, derived, &rec.spec)?;
            Ok((label, proba))
        },
    )
    .map_err(PipelineError::eval("holdout"))?;
    Ok(HoldoutOutcome {
        ipc_regressor: model.regressor,
        suitability_classifier: model.classifier,
        report,
    })
}

/// Current time as UTC RFC 3339, honoring `SOURCE_DATE_EPOCH`.
pub fn timestamp_now() -> String {
    let secs = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse::<u64>().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
    rfc3339_utc(secs)
}

fn rfc3339_utc(secs: u64) -> String {
    let days = (secs / 86_400) as i64;
    let rem = secs % 86_400;
    let (y, m, d) = civil_from_days(days);
    format!(
        "{y:04}-{m:02}-{d:02}T{:02}:{:02}:{:02}Z",
        rem / 3600,
        (rem % 3600) / 60,
        rem % 60
    )
}

// Days-since-epoch to (year, month, day) in the proleptic Gregorian
// calendar.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = (z - era * 146_097) as u64;
    let yoe = (doe - doe / 1_460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe as i64 + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic_corpus, SynthConfig};

    fn memorizing_search() -> SearchConfig {
        let hp = Hyperparams {
            n_estimators: 15,
            max_features: crate::forest::MaxFeatures::All,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            bootstrap: false,
            seed: 0,
        };
        SearchConfig {
            method: SearchMethod::Grid,
            n_draws: 4,
            bootstrap: false,
            regressor: HyperparamSpace::singleton(&hp),
            classifier: HyperparamSpace::singleton(&hp),
        }
    }

    fn synth_records(noise: f64, n_apps: usize) -> Vec<RunRecord> {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_apps,
            levels_per_app: 4,
            noise_sigma: noise,
            ..Default::default()
        };
        generate_synthetic_corpus(&cfg, dir.path()).unwrap();
        let mut records = crate::ingest::load_corpus(
            &dir.path().join("manifest.json"),
            &PerfSchema::default(),
        )
        .unwrap();
        prepare_records(
            &mut records,
            &UnitConfig::default(),
            BoundaryConvention::default(),
        )
        .unwrap();
        records
    }

    fn quick_cfg() -> PipelineConfig {
        PipelineConfig {
            cv_k: 3,
            search: memorizing_search(),
            ..Default::default()
        }
    }

    #[test]
    fn trains_and_memorizes_synthetic_corpus() {
        let records = synth_records(0.0, 3);
        let (bundle, report) = train_pipeline_on(&records, &quick_cfg(), "2026-01-01T00:00:00Z")
            .unwrap();
        bundle.validate().unwrap();
        assert_eq!(report.n_apps, 3);
        assert!(!report.selected_features.is_empty());

        // Memorizing hyper-parameters: training-set predictions are exact.
        let train: Vec<&RunRecord> = records
            .iter()
            .filter(|r| r.spec.role == Role::Train)
            .collect();
        let mut correct = 0;
        for rec in &train {
            let p = predict_for_record(&bundle, rec).unwrap();
            if p.label == rec.label.unwrap() {
                correct += 1;
            }
            assert!((p.probabilities.sum() - 1.0).abs() < 1e-9);
        }
        assert_eq!(correct, train.len());
    }

    #[test]
    fn too_few_apps_rejected() {
        let records: Vec<RunRecord> = synth_records(0.0, 3)
            .into_iter()
            .filter(|r| r.spec.app == "app01")
            .collect();
        assert!(matches!(
            train_pipeline_on(&records, &quick_cfg(), "t"),
            Err(PipelineError::TooFewApps(1))
        ));
    }

    #[test]
    fn all_no_corpus_degenerates_with_warning() {
        // Keep only the applications planted in the lowest band; every
        // label is "no".
        let records: Vec<RunRecord> = synth_records(0.0, 9)
            .into_iter()
            .filter(|r| ["app01", "app04", "app07"].contains(&r.spec.app.as_str()))
            .collect();
        assert!(records.iter().all(|r| r.label != Some(OffloadLabel::Yes)));
        let (bundle, report) = train_pipeline_on(&records, &quick_cfg(), "t").unwrap();
        assert!(report
            .warnings
            .iter()
            .any(|w| w.contains("class imbalance")));
        let p = predict_for_record(&bundle, &records[0]).unwrap();
        assert_eq!(p.label, OffloadLabel::No);
        assert_eq!(p.probabilities.no, 1.0);
    }

    #[test]
    fn prediction_ignores_simulator_fields() {
        let records = synth_records(0.0, 3);
        let (bundle, _) = train_pipeline_on(&records, &quick_cfg(), "t").unwrap();
        let rec = &records[0];
        let clean = predict_for_record(&bundle, rec).unwrap();

        // Tainted copy: simulator-side numbers replaced with NaN.
        let mut tainted = rec.clone();
        tainted.nmc = Some(crate::ingest::NmcSimResult {
            cpu_cycles: f64::NAN,
            ipc: f64::NAN,
            cpu_instructions: f64::NAN,
            total_time_ns: f64::NAN,
            avg_power_mw: f64::NAN,
            trace_energy_pj: f64::NAN,
        });
        tainted.derived = None;
        tainted.label = None;
        let from_tainted = predict_for_record(&bundle, &tainted).unwrap();
        assert_eq!(clean, from_tainted);
    }

    #[test]
    fn compute_bound_profile_gets_region_attached() {
        let records = synth_records(0.0, 3);
        let (bundle, _) = train_pipeline_on(&records, &quick_cfg(), "t").unwrap();
        // Shrink the DRAM traffic so the intensity crosses the compute
        // ridge (7.05 FLOP/Byte on the default machine).
        let mut profile = records[0].host.clone();
        profile.events.insert("uncore_imc/data_reads/".into(), 1.0);
        profile.events.insert("uncore_imc/data_writes/".into(), 1.0);
        let p = predict_offload(&bundle, &profile, &records[0].spec).unwrap();
        assert_eq!(p.roofline_region, Some(RooflineRegion::ComputeBound));
    }

    #[test]
    fn direct_classifier_flag_adds_comparison_cv() {
        let records = synth_records(0.0, 3);
        let cfg = PipelineConfig {
            direct_classifier: true,
            ..quick_cfg()
        };
        let (_, report) = train_pipeline_on(&records, &cfg, "t").unwrap();
        let direct = report.direct_classifier_cv.expect("comparison CV present");
        assert_eq!(direct.per_fold_accuracy.len(), 3);
        let (_, report) = train_pipeline_on(&records, &quick_cfg(), "t").unwrap();
        assert!(report.direct_classifier_cv.is_none());
    }

    #[test]
    fn true_ipc_substitution_keeps_probability_sum() {
        let records = synth_records(0.05, 3);
        let (bundle, _) = train_pipeline_on(&records, &quick_cfg(), "t").unwrap();
        let model = TwoStageModel {
            schema: bundle.feature_schema.clone(),
            regressor: bundle.ipc_regressor.clone(),
            classifier: bundle.suitability_classifier.clone(),
        };
        for rec in records.iter().take(6) {
            let derived = rec.derived.as_ref().unwrap();
            let mut x = Vec::new();
            for name in &model.schema.host_features {
                x.push(host_feature_value(derived, &rec.spec, name).unwrap());
            }
            x.push(derived.nmc_ipc.unwrap()); // true IPC instead of predicted
            let proba = model.classifier.predict_proba(&x).unwrap();
            assert!((proba.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bundle_round_trip_and_corruption() {
        let records = synth_records(0.0, 3);
        let (bundle, _) = train_pipeline_on(&records, &quick_cfg(), "2026-01-01T00:00:00Z")
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&bundle, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(bundle, loaded);
        assert_eq!(bundle.to_json(), loaded.to_json());
        assert_eq!(bundle.provenance_hash(), loaded.provenance_hash());

        // Unknown version.
        let json = bundle.to_json();
        let v999 = json.replacen("\"format_version\":1", "\"format_version\":999", 1);
        std::fs::write(&path, v999).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(PipelineError::Version { found: 999, .. })
        ));

        // Truncated file: typed integrity error, not a crash.
        std::fs::write(&path, &json[..json.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(PipelineError::Integrity(_))));
    }

    #[test]
    fn deterministic_bundles_at_fixed_timestamp() {
        let records = synth_records(0.05, 3);
        let cfg = quick_cfg();
        let (a, _) = train_pipeline_on(&records, &cfg, "2026-01-01T00:00:00Z").unwrap();
        let (b, _) = train_pipeline_on(&records, &cfg, "2026-01-01T00:00:00Z").unwrap();
        assert_eq!(a.to_json(), b.to_json());

        let seeded = PipelineConfig { seed: 43, ..cfg };
        let (c, _) = train_pipeline_on(&records, &seeded, "2026-01-01T00:00:00Z").unwrap();
        assert_ne!(a.provenance_hash(), c.provenance_hash());
    }

    #[test]
    fn schema_error_names_missing_event() {
        let records = synth_records(0.0, 3);
        let (bundle, _) = train_pipeline_on(&records, &quick_cfg(), "t").unwrap();
        let mut profile = records[0].host.clone();
        profile.events.retain(|k, _| !k.starts_with("fp_arith"));
        match predict_offload(&bundle, &profile, &records[0].spec) {
            Err(PipelineError::Schema(names)) => {
                assert!(names[0].contains("fp_arith"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn holdout_eval_runs_per_app() {
        // Two applications per class: the held-out class stays covered.
        let records = synth_records(0.0, 6);
        let hold = HoldoutConfig {
            selection: SelectionConfig::default(),
            hp_regressor: Hyperparams {
                bootstrap: false,
                n_estimators: 10,
                ..Hyperparams::regression_default(1)
            },
            hp_classifier: Hyperparams {
                bootstrap: false,
                n_estimators: 10,
                ..Hyperparams::classification_default(2)
            },
        };
        let outcome = leave_one_app_out_eval(&records, "app02", &hold).unwrap();
        assert_eq!(outcome.report.app, "app02");
        assert!(outcome.report.n_train > 0);
        assert!(!outcome.suitability_classifier.trees.is_empty());
        // Noiseless bands are fully separable.
        assert_eq!(outcome.report.accuracy, 1.0);
    }

    #[test]
    fn timestamp_formatting() {
        assert_eq!(rfc3339_utc(0), "1970-01-01T00:00:00Z");
        assert_eq!(rfc3339_utc(951_782_400), "2000-02-29T00:00:00Z");
        assert_eq!(rfc3339_utc(1_754_611_200), "2025-08-08T00:00:00Z");
    }
}
