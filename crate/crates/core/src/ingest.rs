//! Parsing of host profiling output, NMC simulator statistics, and the run
//! manifest into validated [`RunRecord`]s.
//!
//! Three on-disk formats are consumed:
//!
//! - host profile: line-oriented, separator-delimited (default `;`), columns
//!   `value;unit;event-name[;...]`, trailing columns ignored;
//! - simulator statistics: whitespace-separated `key value` lines, with the
//!   power lines `Average Power` / `Total Trace Energy` accepted in the same
//!   or a companion stream;
//! - manifest: a JSON document with a versioned `manifest_version` field
//!   binding each run to its profile and statistics files.
//!
//! Parsers are total: any input either yields a value satisfying the type
//! invariants or a diagnostic [`IngestError`], never a half-valid value.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical host-profile event names.
pub mod events {
    pub const ENERGY_PKG: &str = "power/energy-pkg/";
    pub const ENERGY_PSYS: &str = "power/energy-psys/";
    pub const ENERGY_RAM: &str = "power/energy-ram/";
    pub const DATA_READS: &str = "uncore_imc/data_reads/";
    pub const DATA_WRITES: &str = "uncore_imc/data_writes/";
    /// Floating-point events are reported as sub-events under this prefix
    /// (e.g. `fp_arith_inst_retired.scalar_double`); totals are formed by
    /// summing every event that carries the prefix.
    pub const FP_ARITH_PREFIX: &str = "fp_arith_inst_retired";
    /// Wall-clock duration of the profiled run.
    pub const DURATION: &str = "duration_time";
}

/// Required statistic keys of a simulator stats stream.
pub mod sim_keys {
    pub const CPU_CYCLES: &str = "ramulator.cpu_cycles";
    pub const IPC: &str = "ramulator.ipc";
    pub const CPU_INSTRUCTIONS: &str = "ramulator.cpu_instructions";
    pub const TOTAL_TIME: &str = "ramulator.total_time";
    pub const AVG_POWER: &str = "Average Power";
    pub const TRACE_ENERGY: &str = "Total Trace Energy";

    pub const ALL: [&str; 6] = [
        CPU_CYCLES,
        IPC,
        CPU_INSTRUCTIONS,
        TOTAL_TIME,
        AVG_POWER,
        TRACE_ENERGY,
    ];
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed numeric value {value:?}")]
    MalformedValue { line: usize, value: String },
    #[error("line {line}: negative value {value} for event {event:?}")]
    NegativeValue {
        line: usize,
        event: String,
        value: f64,
    },
    #[error("line {line}: duplicate event {event:?}")]
    DuplicateEvent { line: usize, event: String },
    #[error("no parseable event lines in input")]
    EmptyInput,
    #[error("required events absent from profile: {0:?}")]
    MissingEvents(Vec<String>),
    #[error("profile wall time is {0}; must be > 0")]
    InvalidWallTime(f64),
    #[error("statistics stream missing required keys: {0:?}")]
    MissingStatistics(Vec<String>),
    #[error("line {line}: negative statistic {key:?} = {value}")]
    NegativeStatistic {
        line: usize,
        key: String,
        value: f64,
    },
    #[error(
        "inconsistent simulator statistics: ipc {ipc} but instructions/cycles = {computed}"
    )]
    InconsistentIpc { ipc: f64, computed: f64 },
    #[error("manifest version {0} unsupported (expected 1)")]
    ManifestVersion(u32),
    #[error("manifest run {run}: {message}")]
    ManifestRun { run: String, message: String },
    #[error("duplicate run (app={app}, dataset_level={level}, threads={threads})")]
    DuplicateRun { app: String, level: u32, threads: u32 },
    #[error("run {run}: file not found: {path}")]
    DanglingPath { run: String, path: PathBuf },
    #[error("no profile for run {0}")]
    UnmatchedSpec(String),
    #[error("record for run {0}: label present without simulator data")]
    LabelWithoutNmc(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}: {source}")]
    ManifestJson {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Which events a host profile must carry, and how to read the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerfSchema {
    /// Field separator of the profile lines.
    pub separator: char,
    /// Events that must be present (or explicitly marked missing).
    pub required_events: Vec<String>,
    /// Prefixes of which at least one event must be present.
    pub required_prefixes: Vec<String>,
    /// Event holding the run wall time; normalized to seconds.
    pub time_event: String,
}

impl Default for PerfSchema {
    fn default() -> Self {
        Self {
            separator: ';',
            required_events: vec![
                events::ENERGY_PKG.to_string(),
                events::DATA_READS.to_string(),
                events::DATA_WRITES.to_string(),
            ],
            required_prefixes: vec![events::FP_ARITH_PREFIX.to_string()],
            time_event: events::DURATION.to_string(),
        }
    }
}

/// One averaged host profiling run.
///
/// Averaging over repeated runs happens upstream of this tool; `run_count`
/// records how many runs the values are the mean of.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfProfile {
    /// Event name to value. Counts are plain numbers; energies are Joules;
    /// memory-controller traffic is MiB as reported by the profiler.
    pub events: BTreeMap<String, f64>,
    /// Events the profiler reported as not supported / not counted.
    pub missing: BTreeSet<String>,
    pub run_count: u32,
    pub wall_time_s: f64,
}

impl PerfProfile {
    pub fn event(&self, name: &str) -> Option<f64> {
        self.events.get(name).copied()
    }

    /// Sum of all events sharing `prefix`, weighted by `weights`
    /// (weight 1 when unlisted). Returns `None` when no event matches.
    pub fn prefixed_sum(&self, prefix: &str, weights: &BTreeMap<String, f64>) -> Option<f64> {
        let mut total = 0.0;
        let mut any = false;
        for (name, value) in &self.events {
            if name.starts_with(prefix) {
                any = true;
                total += value * weights.get(name).copied().unwrap_or(1.0);
            }
        }
        any.then_some(total)
    }
}

/// Parses a host profile stream.
///
/// Lines are `value<sep>unit<sep>event-name[<sep>...]`; blank lines and
/// `#` comments are skipped. Values of `<not supported>` or `<not counted>`
/// mark the event as missing rather than erroring. The time event is
/// normalized to seconds from a declared `ns`/`us`/`ms`/`s` unit.
pub fn parse_perf_csv(text: &str, schema: &PerfSchema) -> Result<PerfProfile, IngestError> {
    let sep = schema.separator;
    let mut events: BTreeMap<String, f64> = BTreeMap::new();
    let mut units: BTreeMap<String, String> = BTreeMap::new();
    let mut missing: BTreeSet<String> = BTreeSet::new();
    let mut parsed_any = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(sep);
        let value_field = fields.next().unwrap_or("").trim();
        let unit_field = fields.next().unwrap_or("").trim();
        let event_field = fields.next().unwrap_or("").trim();
        if event_field.is_empty() {
            // Not an event record (e.g. a summary line); tolerated.
            continue;
        }
        if events.contains_key(event_field) || missing.contains(event_field) {
            return Err(IngestError::DuplicateEvent {
                line: line_no,
                event: event_field.to_string(),
            });
        }
        parsed_any = true;
        if value_field == "<not supported>" || value_field == "<not counted>" {
            missing.insert(event_field.to_string());
            continue;
        }
        let value: f64 = value_field
            .parse()
            .map_err(|_| IngestError::MalformedValue {
                line: line_no,
                value: value_field.to_string(),
            })?;
        if !value.is_finite() {
            return Err(IngestError::MalformedValue {
                line: line_no,
                value: value_field.to_string(),
            });
        }
        if value < 0.0 {
            return Err(IngestError::NegativeValue {
                line: line_no,
                event: event_field.to_string(),
                value,
            });
        }
        events.insert(event_field.to_string(), value);
        units.insert(event_field.to_string(), unit_field.to_string());
    }

    if !parsed_any {
        return Err(IngestError::EmptyInput);
    }

    let mut absent: Vec<String> = Vec::new();
    for name in &schema.required_events {
        if !events.contains_key(name) && !missing.contains(name) {
            absent.push(name.clone());
        }
    }
    for prefix in &schema.required_prefixes {
        let present = events.keys().any(|k| k.starts_with(prefix.as_str()))
            || missing.iter().any(|k| k.starts_with(prefix.as_str()));
        if !present {
            absent.push(format!("{prefix}*"));
        }
    }
    if !events.contains_key(&schema.time_event) && !missing.contains(&schema.time_event) {
        absent.push(schema.time_event.clone());
    }
    if !absent.is_empty() {
        return Err(IngestError::MissingEvents(absent));
    }

    let wall_time_s = match events.remove(&schema.time_event) {
        Some(raw) => {
            let unit = units.remove(&schema.time_event).unwrap_or_default();
            raw * time_scale(&unit)
        }
        None => return Err(IngestError::InvalidWallTime(0.0)),
    };
    if !wall_time_s.is_finite() || wall_time_s <= 0.0 {
        return Err(IngestError::InvalidWallTime(wall_time_s));
    }

    Ok(PerfProfile {
        events,
        missing,
        run_count: 1,
        wall_time_s,
    })
}

fn time_scale(unit: &str) -> f64 {
    match unit {
        "ns" => 1e-9,
        "us" | "µs" => 1e-6,
        "ms" => 1e-3,
        _ => 1.0, // "s" or undeclared: already seconds
    }
}

/// Renders a profile in the canonical on-disk format (`value;unit;event`),
/// such that re-parsing yields an identical profile.
///
/// Events are emitted in name order, missing markers as `<not counted>`,
/// and the wall time as the schema's time event in seconds.
pub fn format_perf_csv(profile: &PerfProfile, schema: &PerfSchema) -> String {
    let sep = schema.separator;
    let mut out = String::new();
    for (name, value) in &profile.events {
        out.push_str(&format!("{value}{sep}{sep}{name}\n"));
    }
    for name in &profile.missing {
        out.push_str(&format!("<not counted>{sep}{sep}{name}\n"));
    }
    out.push_str(&format!(
        "{}{sep}s{sep}{}\n",
        profile.wall_time_s, schema.time_event
    ));
    out
}

/// Performance of one run on the simulated NMC system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmcSimResult {
    pub cpu_cycles: f64,
    pub ipc: f64,
    pub cpu_instructions: f64,
    pub total_time_ns: f64,
    pub avg_power_mw: f64,
    pub trace_energy_pj: f64,
}

/// Parses a simulator statistics stream.
///
/// `ramulator.*` keys are single tokens followed by the value; the power
/// model lines spell their key out in words (`Average Power 155.2 mW`).
/// A trailing `:` on the key and trailing unit tokens are tolerated;
/// unknown keys are ignored.
pub fn parse_ramulator_stats(text: &str) -> Result<NmcSimResult, IngestError> {
    let mut found: BTreeMap<&'static str, f64> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let key = sim_keys::ALL.iter().find(|k| {
            line.starts_with(**k)
                && matches!(
                    line.as_bytes().get(k.len()),
                    None | Some(b' ') | Some(b'\t') | Some(b':')
                )
        });
        let Some(&key) = key else { continue };
        let rest = line[key.len()..].trim_start_matches(':').trim();
        let token = rest.split_whitespace().next().unwrap_or("");
        let value: f64 = token.parse().map_err(|_| IngestError::MalformedValue {
            line: line_no,
            value: token.to_string(),
        })?;
        if !value.is_finite() || value < 0.0 {
            return Err(IngestError::NegativeStatistic {
                line: line_no,
                key: key.to_string(),
                value,
            });
        }
        // Last occurrence wins; companion streams may repeat headers.
        found.insert(key, value);
    }

    let absent: Vec<String> = sim_keys::ALL
        .iter()
        .filter(|k| !found.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    if !absent.is_empty() {
        return Err(IngestError::MissingStatistics(absent));
    }

    let result = NmcSimResult {
        cpu_cycles: found[sim_keys::CPU_CYCLES],
        ipc: found[sim_keys::IPC],
        cpu_instructions: found[sim_keys::CPU_INSTRUCTIONS],
        total_time_ns: found[sim_keys::TOTAL_TIME],
        avg_power_mw: found[sim_keys::AVG_POWER],
        trace_energy_pj: found[sim_keys::TRACE_ENERGY],
    };

    if result.cpu_cycles > 0.0 {
        let computed = result.cpu_instructions / result.cpu_cycles;
        let tol = 0.01 * computed.abs().max(result.ipc.abs());
        if (result.ipc - computed).abs() > tol {
            return Err(IngestError::InconsistentIpc {
                ipc: result.ipc,
                computed,
            });
        }
    }
    Ok(result)
}

/// Renders simulator statistics in the canonical on-disk format.
pub fn format_ramulator_stats(sim: &NmcSimResult) -> String {
    format!(
        "{} {}\n{} {}\n{} {}\n{} {}\n{} {} mW\n{} {} pJ\n",
        sim_keys::CPU_CYCLES,
        sim.cpu_cycles,
        sim_keys::IPC,
        sim.ipc,
        sim_keys::CPU_INSTRUCTIONS,
        sim.cpu_instructions,
        sim_keys::TOTAL_TIME,
        sim.total_time_ns,
        sim_keys::AVG_POWER,
        sim.avg_power_mw,
        sim_keys::TRACE_ENERGY,
        sim.trace_energy_pj,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Train => write!(f, "train"),
            Role::Test => write!(f, "test"),
        }
    }
}

/// Identity of one observation: which application, dataset level, and
/// thread count it ran with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub app: String,
    pub dataset_level: u32,
    pub dataset_param: u64,
    pub threads: u32,
    pub role: Role,
}

impl RunSpec {
    pub fn key(&self) -> RunKey {
        (self.app.clone(), self.dataset_level, self.threads)
    }

    pub fn display_id(&self) -> String {
        format!("{}/l{}/t{}", self.app, self.dataset_level, self.threads)
    }
}

/// Manifest uniqueness key: (app, dataset_level, threads).
pub type RunKey = (String, u32, u32);

/// One fully joined observation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec: RunSpec,
    pub host: PerfProfile,
    pub nmc: Option<NmcSimResult>,
    pub derived: Option<crate::metrics::DerivedFeatures>,
    pub label: Option<crate::metrics::OffloadLabel>,
}

impl RunRecord {
    pub fn new(spec: RunSpec, host: PerfProfile, nmc: Option<NmcSimResult>) -> Self {
        Self {
            spec,
            host,
            nmc,
            derived: None,
            label: None,
        }
    }

    /// Enforces the label-requires-simulator-data invariant.
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.label.is_some() && self.nmc.is_none() {
            return Err(IngestError::LabelWithoutNmc(self.spec.display_id()));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct ManifestDoc {
    manifest_version: u32,
    runs: Vec<ManifestRunDoc>,
}

#[derive(Debug, Deserialize)]
struct ManifestRunDoc {
    app: String,
    dataset_level: u32,
    dataset_param: u64,
    threads: u32,
    role: Role,
    perf: String,
    #[serde(default)]
    sim: Option<String>,
    #[serde(default)]
    run_count: Option<u32>,
    #[serde(default)]
    #[allow(dead_code)] // provenance note only; all profiles are treated alike
    scope: Option<String>,
}

/// A run spec plus the files backing it.
#[derive(Debug, Clone)]
pub struct RunBinding {
    pub spec: RunSpec,
    pub perf_path: PathBuf,
    pub sim_path: Option<PathBuf>,
    pub run_count: u32,
}

/// Loads and validates a manifest.
///
/// Relative file paths are resolved against the manifest's directory; every
/// referenced file must exist.
pub fn load_manifest(path: &Path) -> Result<Vec<RunBinding>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let doc: ManifestDoc =
        serde_json::from_str(&text).map_err(|source| IngestError::ManifestJson {
            path: path.to_path_buf(),
            source,
        })?;
    if doc.manifest_version != 1 {
        return Err(IngestError::ManifestVersion(doc.manifest_version));
    }

    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen: BTreeSet<RunKey> = BTreeSet::new();
    let mut bindings = Vec::with_capacity(doc.runs.len());

    for run in doc.runs {
        let spec = RunSpec {
            app: run.app,
            dataset_level: run.dataset_level,
            dataset_param: run.dataset_param,
            threads: run.threads,
            role: run.role,
        };
        let id = spec.display_id();
        if spec.app.is_empty() {
            return Err(IngestError::ManifestRun {
                run: id,
                message: "empty app name".into(),
            });
        }
        if spec.dataset_level == 0 || spec.threads == 0 || spec.dataset_param == 0 {
            return Err(IngestError::ManifestRun {
                run: id,
                message: "dataset_level, dataset_param and threads must be positive".into(),
            });
        }
        let run_count = run.run_count.unwrap_or(1);
        if run_count == 0 {
            return Err(IngestError::ManifestRun {
                run: id,
                message: "run_count must be positive".into(),
            });
        }
        if !seen.insert(spec.key()) {
            return Err(IngestError::DuplicateRun {
                app: spec.app,
                level: spec.dataset_level,
                threads: spec.threads,
            });
        }
        let perf_path = base.join(&run.perf);
        if !perf_path.is_file() {
            return Err(IngestError::DanglingPath {
                run: id,
                path: perf_path,
            });
        }
        let sim_path = match run.sim {
            Some(rel) => {
                let p = base.join(rel);
                if !p.is_file() {
                    return Err(IngestError::DanglingPath { run: id, path: p });
                }
                Some(p)
            }
            None => None,
        };
        bindings.push(RunBinding {
            spec,
            perf_path,
            sim_path,
            run_count,
        });
    }
    Ok(bindings)
}

/// Joins specs with their parsed profiles and simulator results.
///
/// Output order equals input (manifest) order. Every spec must resolve to
/// exactly one profile; simulator results are optional.
pub fn assemble_run_records(
    specs: &[RunSpec],
    profiles: &BTreeMap<RunKey, PerfProfile>,
    sims: &BTreeMap<RunKey, NmcSimResult>,
) -> Result<Vec<RunRecord>, IngestError> {
    let mut records = Vec::with_capacity(specs.len());
    for spec in specs {
        let key = spec.key();
        let host = profiles
            .get(&key)
            .cloned()
            .ok_or_else(|| IngestError::UnmatchedSpec(spec.display_id()))?;
        let nmc = sims.get(&key).cloned();
        records.push(RunRecord::new(spec.clone(), host, nmc));
    }
    Ok(records)
}

/// Reads a manifest and every file it references, returning joined records
/// in manifest order.
pub fn load_corpus(manifest_path: &Path, schema: &PerfSchema) -> Result<Vec<RunRecord>, IngestError> {
    let bindings = load_manifest(manifest_path)?;
    let mut specs = Vec::with_capacity(bindings.len());
    let mut profiles = BTreeMap::new();
    let mut sims = BTreeMap::new();

    for binding in &bindings {
        let text =
            std::fs::read_to_string(&binding.perf_path).map_err(|source| IngestError::Io {
                path: binding.perf_path.clone(),
                source,
            })?;
        let mut profile = parse_perf_csv(&text, schema)?;
        profile.run_count = binding.run_count;
        profiles.insert(binding.spec.key(), profile);

        if let Some(sim_path) = &binding.sim_path {
            let text = std::fs::read_to_string(sim_path).map_err(|source| IngestError::Io {
                path: sim_path.clone(),
                source,
            })?;
            sims.insert(binding.spec.key(), parse_ramulator_stats(&text)?);
        }
        specs.push(binding.spec.clone());
    }
    assemble_run_records(&specs, &profiles, &sims)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> PerfSchema {
        PerfSchema::default()
    }

    fn full_profile_text() -> String {
        concat!(
            "# started on Thu Aug  6 2026\n",
            "12.5;Joules;power/energy-pkg/\n",
            "512;MiB;uncore_imc/data_reads/\n",
            "512;MiB;uncore_imc/data_writes/\n",
            "500000000;;fp_arith_inst_retired.scalar_double\n",
            "1234;;cache-misses;42;100.00\n",
            "<not supported>;;power/energy-ram/\n",
            "0.5;s;duration_time\n",
        )
        .to_string()
    }

    #[test]
    fn parses_events_and_missing_markers() {
        let p = parse_perf_csv(&full_profile_text(), &schema()).unwrap();
        assert_eq!(p.event("cache-misses"), Some(1234.0));
        assert_eq!(p.event("power/energy-pkg/"), Some(12.5));
        assert!(p.missing.contains("power/energy-ram/"));
        assert_eq!(p.wall_time_s, 0.5);
    }

    #[test]
    fn malformed_value_names_line() {
        let text = "abc;;cycles;\n";
        match parse_perf_csv(text, &PerfSchema { required_events: vec![], required_prefixes: vec![], ..schema() }) {
            Err(IngestError::MalformedValue { line, value }) => {
                assert_eq!(line, 1);
                assert_eq!(value, "abc");
            }
            other => panic!("expected malformed-value error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_event_rejected() {
        let text = format!("{}1;;cache-misses\n", full_profile_text());
        match parse_perf_csv(&text, &schema()) {
            Err(IngestError::DuplicateEvent { event, .. }) => assert_eq!(event, "cache-misses"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            parse_perf_csv("# only a comment\n", &schema()),
            Err(IngestError::EmptyInput)
        ));
    }

    #[test]
    fn missing_required_event_listed() {
        let text = "1;;cache-misses\n0.5;s;duration_time\n";
        match parse_perf_csv(text, &schema()) {
            Err(IngestError::MissingEvents(names)) => {
                assert!(names.contains(&"power/energy-pkg/".to_string()));
                assert!(names.iter().any(|n| n.starts_with("fp_arith")));
            }
            other => panic!("expected missing-events error, got {other:?}"),
        }
    }

    #[test]
    fn separator_is_configurable() {
        let text = full_profile_text().replace(';', ",");
        let comma = PerfSchema {
            separator: ',',
            ..schema()
        };
        let p = parse_perf_csv(&text, &comma).unwrap();
        assert_eq!(p.event("cache-misses"), Some(1234.0));
        assert_eq!(p.wall_time_s, 0.5);
    }

    #[test]
    fn time_units_normalized() {
        let mut text = full_profile_text().replace("0.5;s;duration_time", "500;ms;duration_time");
        let p = parse_perf_csv(&text, &schema()).unwrap();
        assert!((p.wall_time_s - 0.5).abs() < 1e-12);
        text = full_profile_text().replace("0.5;s;duration_time", "500000000;ns;duration_time");
        let p = parse_perf_csv(&text, &schema()).unwrap();
        assert!((p.wall_time_s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_wall_time_rejected() {
        let text = full_profile_text().replace("0.5;s;duration_time", "0;s;duration_time");
        assert!(matches!(
            parse_perf_csv(&text, &schema()),
            Err(IngestError::InvalidWallTime(_))
        ));
    }

    #[test]
    fn negative_value_rejected() {
        let text = full_profile_text().replace("1234;;cache-misses", "-3;;cache-misses");
        assert!(matches!(
            parse_perf_csv(&text, &schema()),
            Err(IngestError::NegativeValue { .. })
        ));
    }

    #[test]
    fn perf_round_trip_identical() {
        let p = parse_perf_csv(&full_profile_text(), &schema()).unwrap();
        let canonical = format_perf_csv(&p, &schema());
        let reparsed = parse_perf_csv(&canonical, &schema()).unwrap();
        assert_eq!(p, reparsed);
        // Canonical form is a fixed point.
        assert_eq!(canonical, format_perf_csv(&reparsed, &schema()));
    }

    fn full_stats_text() -> String {
        concat!(
            "ramulator.cpu_cycles 1000 # total cycles\n",
            "ramulator.ipc 0.5\n",
            "ramulator.cpu_instructions 500\n",
            "ramulator.total_time 800\n",
            "ramulator.dram_cycles 999\n",
            "Average Power: 155.2 mW\n",
            "Total Trace Energy 124160 pJ\n",
        )
        .to_string()
    }

    #[test]
    fn parses_stats_with_unknown_keys() {
        let s = parse_ramulator_stats(&full_stats_text()).unwrap();
        assert_eq!(s.cpu_cycles, 1000.0);
        assert_eq!(s.ipc, 0.5);
        assert_eq!(s.cpu_instructions, 500.0);
        assert_eq!(s.total_time_ns, 800.0);
        assert_eq!(s.avg_power_mw, 155.2);
        assert_eq!(s.trace_energy_pj, 124160.0);
    }

    #[test]
    fn missing_statistic_names_absentees() {
        let text = full_stats_text().replace("ramulator.total_time 800\n", "");
        match parse_ramulator_stats(&text) {
            Err(IngestError::MissingStatistics(names)) => {
                assert_eq!(names, vec!["ramulator.total_time".to_string()]);
            }
            other => panic!("expected missing-statistics error, got {other:?}"),
        }
    }

    #[test]
    fn ipc_consistency_enforced() {
        let text = full_stats_text().replace("ramulator.ipc 0.5", "ramulator.ipc 0.9");
        assert!(matches!(
            parse_ramulator_stats(&text),
            Err(IngestError::InconsistentIpc { .. })
        ));
    }

    #[test]
    fn stats_round_trip() {
        let s = parse_ramulator_stats(&full_stats_text()).unwrap();
        let r = parse_ramulator_stats(&format_ramulator_stats(&s)).unwrap();
        assert_eq!(s, r);
    }

    fn spec(app: &str, level: u32, threads: u32) -> RunSpec {
        RunSpec {
            app: app.to_string(),
            dataset_level: level,
            dataset_param: 4000,
            threads,
            role: Role::Train,
        }
    }

    #[test]
    fn assemble_joins_in_order() {
        let p = parse_perf_csv(&full_profile_text(), &schema()).unwrap();
        let s = parse_ramulator_stats(&full_stats_text()).unwrap();
        let specs = vec![spec("atax", 1, 16), spec("mvt", 1, 16)];
        let mut profiles = BTreeMap::new();
        profiles.insert(specs[0].key(), p.clone());
        profiles.insert(specs[1].key(), p.clone());
        let mut sims = BTreeMap::new();
        sims.insert(specs[0].key(), s);

        let records = assemble_run_records(&specs, &profiles, &sims).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].spec.app, "atax");
        assert!(records[0].nmc.is_some());
        assert!(records[1].nmc.is_none());
        assert!(records[1].label.is_none());
    }

    #[test]
    fn assemble_unmatched_spec_errors() {
        let p = parse_perf_csv(&full_profile_text(), &schema()).unwrap();
        let specs = vec![spec("atax", 1, 16), spec("mvt", 1, 16)];
        let mut profiles = BTreeMap::new();
        profiles.insert(specs[0].key(), p);
        let sims = BTreeMap::new();
        match assemble_run_records(&specs, &profiles, &sims) {
            Err(IngestError::UnmatchedSpec(id)) => assert_eq!(id, "mvt/l1/t16"),
            other => panic!("expected unmatched-spec error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_load_and_duplicate_detection() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), full_profile_text()).unwrap();
        std::fs::write(dir.path().join("a.stats"), full_stats_text()).unwrap();
        let manifest = serde_json::json!({
            "manifest_version": 1,
            "runs": [
                {"app": "atax", "dataset_level": 1, "dataset_param": 4000, "threads": 16,
                 "role": "train", "perf": "a.csv", "sim": "a.stats", "run_count": 5},
                {"app": "atax", "dataset_level": 8, "dataset_param": 17000, "threads": 16,
                 "role": "test", "perf": "a.csv"}
            ]
        });
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();

        let bindings = load_manifest(&mpath).unwrap();
        assert_eq!(bindings.len(), 2);
        assert_eq!(bindings[0].run_count, 5);
        assert_eq!(bindings[1].spec.role, Role::Test);
        assert_eq!(bindings[1].spec.dataset_param, 17000);

        let records = load_corpus(&mpath, &schema()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].host.run_count, 5);

        // Duplicate (app, level, threads) rejected.
        let dup = serde_json::json!({
            "manifest_version": 1,
            "runs": [
                {"app": "atax", "dataset_level": 1, "dataset_param": 4000, "threads": 16,
                 "role": "train", "perf": "a.csv"},
                {"app": "atax", "dataset_level": 1, "dataset_param": 9999, "threads": 16,
                 "role": "train", "perf": "a.csv"}
            ]
        });
        std::fs::write(&mpath, serde_json::to_string(&dup).unwrap()).unwrap();
        assert!(matches!(
            load_manifest(&mpath),
            Err(IngestError::DuplicateRun { .. })
        ));
    }

    #[test]
    fn manifest_dangling_path_names_run() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = serde_json::json!({
            "manifest_version": 1,
            "runs": [{"app": "atax", "dataset_level": 1, "dataset_param": 4000, "threads": 16,
                      "role": "train", "perf": "nope.csv"}]
        });
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, serde_json::to_string(&manifest).unwrap()).unwrap();
        match load_manifest(&mpath) {
            Err(IngestError::DanglingPath { run, .. }) => assert_eq!(run, "atax/l1/t16"),
            other => panic!("expected dangling-path error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_version_checked() {
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("manifest.json");
        std::fs::write(
            &mpath,
            r#"{"manifest_version": 2, "runs": []}"#,
        )
        .unwrap();
        assert!(matches!(
            load_manifest(&mpath),
            Err(IngestError::ManifestVersion(2))
        ));
    }
}
