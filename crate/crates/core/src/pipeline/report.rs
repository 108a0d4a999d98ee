//! Report documents: roofline placement, energy/time, EDP speedup,
//! model quality (confusion, probabilities, per-application accuracy), and
//! the profiler-overhead comparison.
//!
//! Every table is emitted as a CSV and a JSON twin with stable file names
//! and column orders. The confusion matrix header always states its
//! orientation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{predict_for_record, ModelBundle, PipelineError};
use crate::eval::{confusion, ConfusionMatrix};
use crate::ingest::RunRecord;
use crate::metrics::{
    label_decision_with, roofline_classify, BoundaryConvention, MachineRoofline, OffloadLabel,
};

/// Paired timings of the fast profiler versus a reference
/// instrumentation-based profiler for one application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadTiming {
    pub app: String,
    pub perf_time_s: f64,
    pub reference_time_s: f64,
}

/// Speedup of the fast profiler below this is flagged in the overhead
/// report.
pub const OVERHEAD_FLAG_BELOW: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub app: String,
    pub perf_time_s: f64,
    pub reference_time_s: f64,
    pub speedup: f64,
    pub flagged: bool,
}

/// Computes the overhead speedup table.
pub fn overhead_table(timings: &[OverheadTiming]) -> Result<Vec<OverheadRow>, PipelineError> {
    let mut rows = Vec::with_capacity(timings.len());
    for t in timings {
        if !t.perf_time_s.is_finite()
            || t.perf_time_s <= 0.0
            || !t.reference_time_s.is_finite()
            || t.reference_time_s < 0.0
        {
            return Err(PipelineError::Internal(format!(
                "invalid overhead timing for {}: ({}, {})",
                t.app, t.perf_time_s, t.reference_time_s
            )));
        }
        let speedup = t.reference_time_s / t.perf_time_s;
        rows.push(OverheadRow {
            app: t.app.clone(),
            perf_time_s: t.perf_time_s,
            reference_time_s: t.reference_time_s,
            speedup,
            flagged: speedup < OVERHEAD_FLAG_BELOW,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    pub machine: MachineRoofline,
    pub boundary: BoundaryConvention,
    pub overhead_timings: Option<Vec<OverheadTiming>>,
}

/// A set of report documents: (file name, content), CSV and JSON twins.
#[derive(Debug, Clone, Default)]
pub struct ReportSet {
    pub files: Vec<(String, String)>,
}

impl ReportSet {
    fn push_twin<T: Serialize>(&mut self, stem: &str, csv: String, rows: &T) {
        self.files.push((format!("{stem}.csv"), csv));
        self.files.push((
            format!("{stem}.json"),
            serde_json::to_string_pretty(rows).expect("report serializes") + "\n",
        ));
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.as_str())
    }
}

#[derive(Debug, Clone, Serialize)]
struct RooflineRow<'a> {
    app: &'a str,
    ai: f64,
    gflops: f64,
    region: String,
}

#[derive(Debug, Clone, Serialize)]
struct EnergyTimeRow<'a> {
    app: &'a str,
    dataset_level: u32,
    threads: u32,
    time_s: f64,
    energy_j: f64,
}

#[derive(Debug, Clone, Serialize)]
struct EdpRow<'a> {
    app: &'a str,
    dataset_level: u32,
    threads: u32,
    host_edp_js: f64,
    nmc_edp_js: Option<f64>,
    edp_speedup: Option<f64>,
    label: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct ProbabilityRow {
    app: String,
    dataset_level: u32,
    threads: u32,
    actual: Option<String>,
    predicted: String,
    p_yes: f64,
    p_maybe: f64,
    p_no: f64,
    /// What the label means operationally; "maybe" is left to the user.
    action: String,
}

#[derive(Debug, Clone, Serialize)]
struct AccuracySummary {
    per_app: Vec<AppAccuracy>,
    /// Mean of the per-application accuracies.
    mean_per_app_accuracy: f64,
    /// Accuracy over all rows pooled together.
    overall_accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
struct AppAccuracy {
    app: String,
    n: usize,
    accuracy: f64,
}

fn action_for(label: OffloadLabel) -> &'static str {
    match label {
        OffloadLabel::Yes => "offload",
        OffloadLabel::Maybe => "user decision",
        OffloadLabel::No => "keep on host",
    }
}

/// Builds every report the inputs allow.
///
/// Records need derived features (see [`super::prepare_records`]). Model
/// reports (confusion, probabilities, accuracy) appear only when `bundle`
/// is given, and cover the labeled records.
pub fn build_reports(
    records: &[RunRecord],
    bundle: Option<&ModelBundle>,
    opts: &ReportOptions,
) -> Result<ReportSet, PipelineError> {
    if records.is_empty() {
        return Err(PipelineError::Internal("no records to report on".into()));
    }
    let mut set = ReportSet::default();

    // Roofline placement.
    let mut roofline_rows = Vec::new();
    let mut roofline_csv = String::from("app,ai,gflops,region\n");
    for rec in records {
        let d = rec
            .derived
            .as_ref()
            .ok_or_else(|| PipelineError::Internal("record lacks derived features".into()))?;
        if d.host_flop_per_byte > 0.0 && d.host_gflops_per_s > 0.0 {
            let pt = roofline_classify(
                &rec.spec.app,
                d.host_flop_per_byte,
                d.host_gflops_per_s,
                &opts.machine,
            )
            .map_err(PipelineError::metrics("roofline"))?;
            roofline_csv.push_str(&format!(
                "{},{},{},{}\n",
                rec.spec.app, pt.ai, pt.perf, pt.region
            ));
            roofline_rows.push(RooflineRow {
                app: &rec.spec.app,
                ai: pt.ai,
                gflops: pt.perf,
                region: pt.region.to_string(),
            });
        }
    }
    set.push_twin("roofline", roofline_csv, &roofline_rows);

    // Energy versus execution time.
    let mut et_rows = Vec::new();
    let mut et_csv = String::from("app,dataset_level,threads,time_s,energy_j\n");
    for rec in records {
        let d = rec.derived.as_ref().expect("checked above");
        et_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            rec.spec.app,
            rec.spec.dataset_level,
            rec.spec.threads,
            rec.host.wall_time_s,
            d.host_total_energy_j
        ));
        et_rows.push(EnergyTimeRow {
            app: &rec.spec.app,
            dataset_level: rec.spec.dataset_level,
            threads: rec.spec.threads,
            time_s: rec.host.wall_time_s,
            energy_j: d.host_total_energy_j,
        });
    }
    set.push_twin("energy_time", et_csv, &et_rows);

    // EDP speedup table.
    let mut edp_rows = Vec::new();
    let mut edp_csv =
        String::from("app,dataset_level,threads,host_edp_js,nmc_edp_js,edp_speedup,label\n");
    for rec in records {
        let d = rec.derived.as_ref().expect("checked above");
        let label = match d.edp_speedup {
            Some(s) => Some(
                label_decision_with(s, opts.boundary)
                    .map_err(PipelineError::metrics("label"))?
                    .to_string(),
            ),
            None => None,
        };
        edp_csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            rec.spec.app,
            rec.spec.dataset_level,
            rec.spec.threads,
            d.host_edp_js,
            d.nmc_edp_js.map(|v| v.to_string()).unwrap_or_default(),
            d.edp_speedup.map(|v| v.to_string()).unwrap_or_default(),
            label.clone().unwrap_or_default()
        ));
        edp_rows.push(EdpRow {
            app: &rec.spec.app,
            dataset_level: rec.spec.dataset_level,
            threads: rec.spec.threads,
            host_edp_js: d.host_edp_js,
            nmc_edp_js: d.nmc_edp_js,
            edp_speedup: d.edp_speedup,
            label,
        });
    }
    set.push_twin("edp_speedup", edp_csv, &edp_rows);

    // Model-dependent reports.
    if let Some(bundle) = bundle {
        let labeled: Vec<&RunRecord> = records.iter().filter(|r| r.label.is_some()).collect();
        if !labeled.is_empty() {
            let mut prob_rows = Vec::new();
            let mut prob_csv = String::from(
                "app,dataset_level,threads,actual,predicted,p_yes,p_maybe,p_no,action\n",
            );
            let mut predicted = Vec::new();
            let mut actual = Vec::new();
            let mut by_app: BTreeMap<String, (usize, usize)> = BTreeMap::new();
            for rec in &labeled {
                let p = predict_for_record(bundle, rec)?;
                let act = rec.label.expect("labeled");
                predicted.push(p.label);
                actual.push(act);
                let entry = by_app.entry(rec.spec.app.clone()).or_insert((0, 0));
                entry.1 += 1;
                if p.label == act {
                    entry.0 += 1;
                }
                prob_csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    rec.spec.app,
                    rec.spec.dataset_level,
                    rec.spec.threads,
                    act,
                    p.label,
                    p.probabilities.yes,
                    p.probabilities.maybe,
                    p.probabilities.no,
                    action_for(p.label)
                ));
                prob_rows.push(ProbabilityRow {
                    app: rec.spec.app.clone(),
                    dataset_level: rec.spec.dataset_level,
                    threads: rec.spec.threads,
                    actual: Some(act.to_string()),
                    predicted: p.label.to_string(),
                    p_yes: p.probabilities.yes,
                    p_maybe: p.probabilities.maybe,
                    p_no: p.probabilities.no,
                    action: action_for(p.label).to_string(),
                });
            }
            set.push_twin("probabilities", prob_csv, &prob_rows);

            let cm: ConfusionMatrix =
                confusion(&predicted, &actual).map_err(PipelineError::eval("confusion"))?;
            set.files.push(("confusion.csv".to_string(), cm.to_csv()));
            set.files.push((
                "confusion.json".to_string(),
                serde_json::to_string_pretty(&cm).expect("confusion serializes") + "\n",
            ));

            let per_app: Vec<AppAccuracy> = by_app
                .iter()
                .map(|(app, (ok, n))| AppAccuracy {
                    app: app.clone(),
                    n: *n,
                    accuracy: *ok as f64 / *n as f64,
                })
                .collect();
            let mean_per_app =
                per_app.iter().map(|a| a.accuracy).sum::<f64>() / per_app.len() as f64;
            let summary = AccuracySummary {
                mean_per_app_accuracy: mean_per_app,
                overall_accuracy: cm.accuracy(),
                per_app,
            };
            let mut acc_csv = String::from("app,n,accuracy\n");
            for a in &summary.per_app {
                acc_csv.push_str(&format!("{},{},{}\n", a.app, a.n, a.accuracy));
            }
            set.push_twin("per_app_accuracy", acc_csv, &summary);
        }
    }

    // Profiler-overhead comparison.
    if let Some(timings) = &opts.overhead_timings {
        let rows = overhead_table(timings)?;
        let mut csv = String::from("app,perf_time_s,reference_time_s,speedup,flag\n");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                r.app,
                r.perf_time_s,
                r.reference_time_s,
                r.speedup,
                if r.flagged { "below_100x" } else { "" }
            ));
        }
        set.push_twin("profiler_overhead", csv, &rows);
    }

    Ok(set)
}

/// Writes a report set into `dir`, one file at a time via temp-and-rename.
///
/// Refuses to overwrite existing report files unless `force` is set; the
/// existence check runs before anything is written so a failed call leaves
/// the directory untouched.
pub fn write_reports(set: &ReportSet, dir: &Path, force: bool) -> Result<(), PipelineError> {
    if !force {
        for (name, _) in &set.files {
            let path = dir.join(name);
            if path.exists() {
                return Err(PipelineError::OutputExists(path));
            }
        }
    }
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for (name, content) in &set.files {
        super::atomic_write(&dir.join(name), content.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{load_corpus, PerfSchema};
    use crate::pipeline::{prepare_records, train_pipeline_on, PipelineConfig};
    use crate::synth::{generate_synthetic_corpus, SynthConfig};

    fn prepared_records() -> Vec<RunRecord> {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_apps: 3,
            levels_per_app: 3,
            noise_sigma: 0.0,
            ..Default::default()
        };
        generate_synthetic_corpus(&cfg, dir.path()).unwrap();
        let mut records =
            load_corpus(&dir.path().join("manifest.json"), &PerfSchema::default()).unwrap();
        prepare_records(
            &mut records,
            &Default::default(),
            BoundaryConvention::default(),
        )
        .unwrap();
        records
    }

    #[test]
    fn overhead_ratios_and_flags() {
        let timings = vec![
            OverheadTiming {
                app: "atax".into(),
                perf_time_s: 0.23,
                reference_time_s: 503.85,
            },
            OverheadTiming {
                app: "mvt".into(),
                perf_time_s: 0.24,
                reference_time_s: 356.16,
            },
            OverheadTiming {
                app: "doit".into(),
                perf_time_s: 0.27,
                reference_time_s: 20.78,
            },
        ];
        let rows = overhead_table(&timings).unwrap();
        assert!((rows[0].speedup - 2190.7).abs() / 2190.7 < 1e-3);
        assert!((rows[1].speedup - 1484.0).abs() / 1484.0 < 1e-3);
        assert!(!rows[0].flagged);
        assert!(rows[2].flagged, "sub-100x ratio must be flagged");
        assert!(overhead_table(&[OverheadTiming {
            app: "x".into(),
            perf_time_s: 0.0,
            reference_time_s: 1.0,
        }])
        .is_err());
    }

    #[test]
    fn reports_without_model() {
        let records = prepared_records();
        let set = build_reports(&records, None, &ReportOptions::default()).unwrap();
        let names: Vec<&str> = set.files.iter().map(|(n, _)| n.as_str()).collect();
        assert!(names.contains(&"roofline.csv"));
        assert!(names.contains(&"energy_time.csv"));
        assert!(names.contains(&"edp_speedup.csv"));
        assert!(!names.contains(&"confusion.csv"));

        // One roofline row per record (all have floating-point work).
        let roofline = set.get("roofline.csv").unwrap();
        assert_eq!(roofline.lines().count(), records.len() + 1);
        let edp = set.get("edp_speedup.csv").unwrap();
        assert!(edp.lines().nth(1).unwrap().split(',').count() == 7);
    }

    #[test]
    fn reports_with_model_include_confusion() {
        let records = prepared_records();
        let cfg = PipelineConfig {
            cv_k: 3,
            ..Default::default()
        };
        let (bundle, _) = train_pipeline_on(&records, &cfg, "t").unwrap();
        let set = build_reports(&records, Some(&bundle), &ReportOptions::default()).unwrap();
        let confusion = set.get("confusion.csv").unwrap();
        assert!(confusion.starts_with("# rows=actual"));
        assert!(set.get("probabilities.csv").is_some());
        let acc = set.get("per_app_accuracy.json").unwrap();
        assert!(acc.contains("mean_per_app_accuracy"));
        assert!(acc.contains("overall_accuracy"));
        let probs = set.get("probabilities.csv").unwrap();
        assert!(probs.contains("user decision") || probs.contains("offload") || probs.contains("keep on host"));
    }

    #[test]
    fn write_reports_respects_force() {
        let records = prepared_records();
        let set = build_reports(&records, None, &ReportOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("reports");
        write_reports(&set, &out, false).unwrap();
        assert!(out.join("roofline.csv").is_file());
        // Second write without force refuses; with force succeeds.
        assert!(matches!(
            write_reports(&set, &out, false),
            Err(PipelineError::OutputExists(_))
        ));
        write_reports(&set, &out, true).unwrap();
    }
}
