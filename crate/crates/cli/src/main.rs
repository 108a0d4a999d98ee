//! `nmpo` command-line interface.
//!
//! Subcommands: `train`, `predict`, `correlate`, `report`, `synth`.
//! Machine-readable JSON goes to stdout, diagnostics to stderr. Exit
//! codes: 0 success, 1 usage error, 2 data/parse error, 3 model/version
//! error, 4 internal error. `NMPO_THREADS` caps internal parallelism
//! (0 = automatic).

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Deserialize;

use nmpo_core::ingest::{load_corpus, parse_perf_csv, Role, RunRecord, RunSpec};
use nmpo_core::pipeline::report::{build_reports, write_reports, ReportOptions, ReportSet};
use nmpo_core::pipeline::{
    load_model, predict_offload, prepare_records, save_model, train_pipeline, training_matrix,
    PipelineConfig, PipelineError,
};
use nmpo_core::stats::correlation_matrix;
use nmpo_core::synth::{generate_synthetic_corpus, SynthConfig, SynthError};

#[derive(Parser)]
#[command(
    name = "nmpo",
    version,
    about = "Profiling-and-offloading advisor for near-memory computing"
)]
struct Cli {
    /// Suppress progress notes on stderr.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the two-stage offload model from a profiled corpus.
    Train {
        /// Pipeline config file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Where to write the model bundle (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Reports directory (default: `reports` next to the bundle).
        #[arg(long)]
        reports: Option<PathBuf>,
        /// Overwrite existing outputs.
        #[arg(long)]
        force: bool,
    },
    /// Predict offload suitability for one host profile.
    Predict {
        /// Model bundle written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Host profile file.
        #[arg(long)]
        perf: PathBuf,
        /// Run spec: inline JSON (starts with '{') or a path to a JSON
        /// file. Fields: app, threads; optional dataset_level,
        /// dataset_param, role.
        #[arg(long)]
        spec: String,
    },
    /// Export the feature correlation matrix of the training corpus.
    Correlate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Emit roofline, energy/time, and EDP-speedup tables; with a model
    /// also confusion, probabilities, and per-application accuracy.
    Report {
        #[arg(long)]
        config: PathBuf,
        /// Optional model bundle for prediction-quality reports.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Generate a synthetic corpus in the ingest file formats.
    Synth {
        /// Synth config file (JSON).
        #[arg(long = "synth-config")]
        synth_config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug)]
enum CliError {
    Pipeline(PipelineError),
    Synth(SynthError),
    Data(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Pipeline(e) => write!(f, "{e}"),
            CliError::Synth(e) => write!(f, "{e}"),
            CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Pipeline(e)
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Synth(e)
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => 2,
            CliError::Synth(_) => 2,
            CliError::Pipeline(e) => match e {
                PipelineError::Version { .. } | PipelineError::Integrity(_) => 3,
                PipelineError::OutputExists(_) => 1,
                PipelineError::Internal(_) => 4,
                PipelineError::Forest { .. } => 4,
                _ => 2,
            },
        }
    }
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    if let Ok(v) = std::env::var("NMPO_THREADS") {
        match v.parse::<usize>() {
            Ok(n) => nmpo_core::configure_threads(n),
            Err(_) => {
                eprintln!("error: NMPO_THREADS must be a non-negative integer, got {v:?}");
                return 1;
            }
        }
    }

    let quiet = cli.quiet;
    match dispatch(cli.command, quiet) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn note(quiet: bool, message: &str) {
    if !quiet {
        eprintln!("{message}");
    }
}

fn dispatch(command: Command, quiet: bool) -> Result<(), CliError> {
    match command {
        Command::Train {
            config,
            out,
            seed,
            reports,
            force,
        } => cmd_train(&config, &out, seed, reports.as_deref(), force, quiet),
        Command::Predict { model, perf, spec } => cmd_predict(&model, &perf, &spec),
        Command::Correlate { config, out, force } => cmd_correlate(&config, &out, force, quiet),
        Command::Report {
            config,
            model,
            out,
            force,
        } => cmd_report(&config, model.as_deref(), &out, force, quiet),
        Command::Synth {
            synth_config,
            out,
            seed,
            force,
        } => cmd_synth(&synth_config, &out, seed, force, quiet),
    }
}

fn load_prepared_corpus(cfg: &PipelineConfig) -> Result<Vec<RunRecord>, CliError> {
    let mut records =
        load_corpus(&cfg.manifest, &cfg.perf_schema).map_err(|e| CliError::Data(e.to_string()))?;
    prepare_records(&mut records, &cfg.units, cfg.label_boundary)?;
    Ok(records)
}

fn cmd_train(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    reports: Option<&Path>,
    force: bool,
    quiet: bool,
) -> Result<(), CliError> {
    let mut cfg = PipelineConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if out.exists() && !force {
        return Err(PipelineError::OutputExists(out.to_path_buf()).into());
    }

    let (bundle, report) = train_pipeline(&cfg)?;
    save_model(&bundle, out)?;
    note(
        quiet,
        &format!(
            "trained on {} rows across {} applications; bundle {} ({})",
            report.n_train_rows,
            report.n_apps,
            out.display(),
            bundle.provenance_hash()
        ),
    );
    for warning in &report.warnings {
        note(quiet, &format!("warning: {warning}"));
    }

    let reports_dir = match reports {
        Some(dir) => dir.to_path_buf(),
        None => out
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("reports"),
    };
    let mut set = ReportSet::default();
    set.files.push((
        "train_report.json".to_string(),
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    ));
    set.files.push((
        "correlation.csv".to_string(),
        bundle.selection_report.correlation.to_csv(),
    ));
    set.files.push((
        "correlation.json".to_string(),
        serde_json::to_string_pretty(&bundle.selection_report.correlation)
            .expect("correlation serializes")
            + "\n",
    ));
    write_reports(&set, &reports_dir, force)?;
    note(quiet, &format!("reports in {}", reports_dir.display()));
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PredictSpec {
    app: String,
    #[serde(default = "default_level")]
    dataset_level: u32,
    #[serde(default = "default_param")]
    dataset_param: u64,
    threads: u32,
    #[serde(default = "default_role")]
    role: Role,
}

fn default_level() -> u32 {
    1
}
fn default_param() -> u64 {
    1
}
fn default_role() -> Role {
    Role::Test
}

fn cmd_predict(model: &Path, perf: &Path, spec_arg: &str) -> Result<(), CliError> {
    let bundle = load_model(model)?;

    let spec_text = if spec_arg.trim_start().starts_with('{') {
        spec_arg.to_string()
    } else {
        std::fs::read_to_string(spec_arg)
            .map_err(|e| CliError::Data(format!("reading spec {spec_arg}: {e}")))?
    };
    let spec: PredictSpec =
        serde_json::from_str(&spec_text).map_err(|e| CliError::Data(format!("run spec: {e}")))?;
    if spec.threads == 0 {
        return Err(CliError::Data("run spec: threads must be positive".into()));
    }
    let spec = RunSpec {
        app: spec.app,
        dataset_level: spec.dataset_level,
        dataset_param: spec.dataset_param,
        threads: spec.threads,
        role: spec.role,
    };

    let text = std::fs::read_to_string(perf)
        .map_err(|e| CliError::Data(format!("reading {}: {e}", perf.display())))?;
    let profile =
        parse_perf_csv(&text, &bundle.perf_schema).map_err(|e| CliError::Data(e.to_string()))?;

    let prediction = predict_offload(&bundle, &profile, &spec)?;
    let json = serde_json::to_string_pretty(&prediction).expect("prediction serializes");
    println!("{json}");
    Ok(())
}

fn cmd_correlate(config: &Path, out: &Path, force: bool, quiet: bool) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(config)?;
    let records = load_prepared_corpus(&cfg)?;
    let train: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.spec.role == Role::Train && r.label.is_some())
        .collect();
    if train.is_empty() {
        return Err(CliError::Data(
            "no labeled training records in the corpus".into(),
        ));
    }
    let matrix = training_matrix(&train)?;
    let cm = correlation_matrix(&matrix).map_err(|e| CliError::Data(e.to_string()))?;

    let mut set = ReportSet::default();
    set.files.push(("correlation.csv".to_string(), cm.to_csv()));
    set.files.push((
        "correlation.json".to_string(),
        serde_json::to_string_pretty(&cm).expect("correlation serializes") + "\n",
    ));
    write_reports(&set, out, force)?;
    note(quiet, &format!("correlation matrix in {}", out.display()));
    Ok(())
}

fn cmd_report(
    config: &Path,
    model: Option<&Path>,
    out: &Path,
    force: bool,
    quiet: bool,
) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(config)?;
    let records = load_prepared_corpus(&cfg)?;
    let bundle = match model {
        Some(path) => Some(load_model(path)?),
        None => None,
    };
    let opts = ReportOptions {
        machine: cfg
            .roofline
            .to_machine()
            .map_err(|e| CliError::Data(e.to_string()))?,
        boundary: cfg.label_boundary,
        overhead_timings: cfg.overhead_timings.clone(),
    };
    let set = build_reports(&records, bundle.as_ref(), &opts)?;
    write_reports(&set, out, force)?;
    note(
        quiet,
        &format!("{} report files in {}", set.files.len(), out.display()),
    );
    Ok(())
}

fn cmd_synth(
    synth_config: &Path,
    out: &Path,
    seed: Option<u64>,
    force: bool,
    quiet: bool,
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(synth_config)
        .map_err(|e| CliError::Data(format!("reading {}: {e}", synth_config.display())))?;
    let mut cfg: SynthConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("synth config: {e}")))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if out.join("manifest.json").exists() && !force {
        return Err(PipelineError::OutputExists(out.join("manifest.json")).into());
    }
    let corpus = generate_synthetic_corpus(&cfg, out)?;
    note(
        quiet,
        &format!(
            "wrote {} files ({} runs) under {}",
            corpus.files.len(),
            corpus.ground_truth.len(),
            out.display()
        ),
    );
    Ok(())
}
