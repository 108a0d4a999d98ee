//! Reproducible synthetic corpora with a known feature-to-label
//! relationship, standing in for real profiler and simulator runs in
//! end-to-end tests.
//!
//! Every run gets a planted clean EDP speedup `z` drawn from one of three
//! well-separated bands (one per label, centers 0.5 / 1.5 / 3.0), and the
//! simulated IPC is an affine function of `z`. Host features are smooth
//! functions of `z` and the thread count, so a model trained on other
//! applications can recover the label of a held-out one. Relative noise on
//! the energies and the IPC is clamped at 2.5 sigma; at the default
//! `noise_sigma = 0.05` the band edges are placed so that observed
//! speedups can never cross a label boundary, which keeps the on-disk
//! labels equal to the planted ones.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{format_ramulator_stats, NmcSimResult};
use crate::metrics::{label_decision, OffloadLabel};
use crate::rng::{split_seed, SplitMix64};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("generated corpus covers only labels {0:?}; all three are required")]
    IncompleteClasses(Vec<String>),
    #[error("writing {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Planted affine map from clean speedup to simulated IPC
/// (`ipc = intercept + slope * speedup`); a nonzero slope keeps it
/// invertible over the generated range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedMapping {
    pub ipc_intercept: f64,
    pub ipc_slope: f64,
}

impl Default for PlantedMapping {
    fn default() -> Self {
        Self {
            ipc_intercept: 0.15,
            ipc_slope: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_apps: usize,
    /// Training dataset levels per application; one extra test level is
    /// always added on top.
    pub levels_per_app: usize,
    pub threads: Vec<u32>,
    /// Relative noise applied to energies and IPC.
    pub noise_sigma: f64,
    pub seed: u64,
    pub mapping: PlantedMapping,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_apps: 9,
            levels_per_app: 7,
            threads: vec![8, 16],
            noise_sigma: 0.05,
            seed: 7,
            mapping: PlantedMapping::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_apps < 2 {
            return Err(SynthError::Config("n_apps must be >= 2".into()));
        }
        if self.levels_per_app < 2 {
            return Err(SynthError::Config("levels_per_app must be >= 2".into()));
        }
        if self.threads.is_empty() || self.threads.contains(&0) {
            return Err(SynthError::Config(
                "threads must be non-empty and positive".into(),
            ));
        }
        let mut t = self.threads.clone();
        t.sort_unstable();
        t.dedup();
        if t.len() != self.threads.len() {
            return Err(SynthError::Config("duplicate thread counts".into()));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(SynthError::Config("noise_sigma must be >= 0".into()));
        }
        if self.mapping.ipc_slope == 0.0 {
            return Err(SynthError::Config("ipc_slope must be nonzero".into()));
        }
        Ok(())
    }
}

/// Speedup bands per label, ascending: (no, maybe, yes).
///
/// Centers sit at 0.5, 1.5 and 3.0. Widths are chosen so that the
/// multiplicative noise factor `(1 + e1) / (1 + e2)` with `|e| <= 2.5 *
/// 0.05` cannot push an observed speedup across the boundaries at 1 and 2.
pub const SPEEDUP_BANDS: [(f64, f64); 3] = [(0.30, 0.70), (1.445, 1.555), (2.60, 3.40)];

/// Ground truth for one generated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub app: String,
    pub dataset_level: u32,
    pub threads: u32,
    pub role: String,
    pub speedup_clean: f64,
    pub ipc_clean: f64,
    pub label: OffloadLabel,
}

/// A generated corpus: every file content plus ground truth, before any
/// I/O happens.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    /// (relative path, content) in write order.
    pub files: Vec<(String, String)>,
    pub ground_truth: Vec<GroundTruthRow>,
}

struct RunPlan {
    app: String,
    level: u32,
    param: u64,
    threads: u32,
    is_test: bool,
    z: f64,
    ipc_clean: f64,
}

fn clamp_gauss(rng: &mut SplitMix64, sigma: f64) -> f64 {
    (rng.next_gaussian().clamp(-2.5, 2.5)) * sigma
}

/// Generates the corpus in memory.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    cfg.validate()?;

    let levels = cfg.levels_per_app as u32;
    let t_max = *cfg.threads.iter().max().expect("non-empty") as f64;
    let mut rng = SplitMix64::new(cfg.seed);

    // Per-app jitter keeps same-class applications from being exact copies
    // of each other while staying inside the band.
    let jitter: Vec<f64> = (0..cfg.n_apps)
        .map(|i| {
            let mut r = SplitMix64::new(split_seed(cfg.seed, i as u64));
            (r.next_f64() - 0.5) * 0.08
        })
        .collect();

    let mut plans: Vec<RunPlan> = Vec::new();
    let mut classes_seen = [false; 3];
    for app_idx in 0..cfg.n_apps {
        let app = format!("app{:02}", app_idx + 1);
        let band = SPEEDUP_BANDS[app_idx % 3];
        classes_seen[app_idx % 3] = true;
        for level in 1..=levels + 1 {
            let is_test = level == levels + 1;
            let u = if is_test {
                0.45
            } else {
                (level - 1) as f64 / (levels - 1) as f64
            };
            let pos = (0.05 + 0.90 * u + jitter[app_idx]).clamp(0.0, 1.0);
            let z = band.0 + (band.1 - band.0) * pos;
            let ipc_clean = cfg.mapping.ipc_intercept + cfg.mapping.ipc_slope * z;
            for &threads in &cfg.threads {
                plans.push(RunPlan {
                    app: app.clone(),
                    level,
                    param: 1000 + 500 * level as u64,
                    threads,
                    is_test,
                    z,
                    ipc_clean,
                });
            }
        }
    }

    if !classes_seen.iter().all(|&c| c) {
        let produced: Vec<String> = classes_seen
            .iter()
            .enumerate()
            .filter(|(_, &seen)| seen)
            .map(|(i, _)| {
                [OffloadLabel::No, OffloadLabel::Maybe, OffloadLabel::Yes][i]
                    .as_str()
                    .to_string()
            })
            .collect();
        return Err(SynthError::IncompleteClasses(produced));
    }

    let mut files: Vec<(String, String)> = Vec::new();
    let mut ground_truth = Vec::with_capacity(plans.len());
    let mut manifest_runs = Vec::with_capacity(plans.len());

    for plan in &plans {
        let z = plan.z;
        let thread_slow = 1.0 + 0.4 * (1.0 - plan.threads as f64 / t_max);
        let thread_hot = 1.0 + 0.1 * (1.0 - plan.threads as f64 / t_max);

        let host_time_s = (2.0 + 0.5 * z) * thread_slow;
        let host_energy_clean = (10.0 + 6.0 * z) * thread_hot;
        let flops = (0.8 + 0.5 * z) * 1e9;
        let reads_mib = 400.0 + 150.0 * z;
        let writes_mib = 200.0 + 75.0 * z;

        let e_host = clamp_gauss(&mut rng, cfg.noise_sigma);
        let e_trace = clamp_gauss(&mut rng, cfg.noise_sigma);
        let e_ipc = clamp_gauss(&mut rng, cfg.noise_sigma);

        let host_energy = host_energy_clean * (1.0 + e_host);
        let ipc = plan.ipc_clean * (1.0 + e_ipc);

        // NMC side solves for the planted speedup on clean quantities,
        // then takes its own energy noise.
        let host_edp_clean = host_energy_clean * host_time_s;
        let nmc_edp_clean = host_edp_clean / z;
        let nmc_time_ns = host_time_s * 1e9 / (1.0 + z);
        let trace_energy_pj = nmc_edp_clean / (nmc_time_ns * 1e-9) * 1e12 * (1.0 + e_trace);
        let cpu_cycles = (nmc_time_ns * 1.25).round();
        let cpu_instructions = (ipc * cpu_cycles).round();
        let ipc_stored = cpu_instructions / cpu_cycles;
        let avg_power_mw = trace_energy_pj / nmc_time_ns;

        let host_ipc = 1.2 + 0.1 * z;
        let instructions = (3e9 * (1.0 + z)).round();
        let cycles = (instructions / host_ipc).round();

        let mut perf = String::new();
        let mut ev = |value: f64, unit: &str, name: &str| {
            perf.push_str(&format!("{value};{unit};{name}\n"));
        };
        ev(host_energy, "Joules", "power/energy-pkg/");
        ev(host_energy * 1.3, "Joules", "power/energy-psys/");
        ev(host_energy * 0.25, "Joules", "power/energy-ram/");
        ev(reads_mib, "MiB", "uncore_imc/data_reads/");
        ev(writes_mib, "MiB", "uncore_imc/data_writes/");
        ev(flops * 0.7, "", "fp_arith_inst_retired.scalar_double");
        ev(flops * 0.3, "", "fp_arith_inst_retired.256b_packed_double");
        ev(instructions, "", "instructions");
        ev(cycles, "", "cycles");
        ev(host_ipc, "", "ipc");
        ev((1e7 * (1.0 + z)).round(), "", "cache-misses");
        ev(6e8, "", "branches");
        ev((1e6 * (1.0 + 0.5 * z)).round(), "", "branch-misses");
        ev(1.1e9, "", "L1-dcache-loads");
        ev(2e7, "", "L1-dcache-load-misses");
        ev(5e8, "", "L1-dcache-stores");
        ev(1e5, "", "L1-icache-load-misses");
        ev((3e7 * (1.0 + z)).round(), "", "LLC-loads");
        ev((2.5e7 * (1.0 + z)).round(), "", "LLC-load-misses");
        ev(1.5e7, "", "LLC-stores");
        ev(1e7, "", "LLC-store-misses");
        ev(6e8, "", "branch-loads");
        ev(9e5, "", "branch-load-misses");
        ev(120.0, "", "context-switches");
        ev(host_time_s, "s", "duration_time");

        let sim = format_ramulator_stats(&NmcSimResult {
            cpu_cycles,
            ipc: ipc_stored,
            cpu_instructions,
            total_time_ns: nmc_time_ns,
            avg_power_mw,
            trace_energy_pj,
        });

        let stem = format!("{}_l{}_t{}", plan.app, plan.level, plan.threads);
        let perf_rel = format!("perf/{stem}.csv");
        let sim_rel = format!("sim/{stem}.txt");
        files.push((perf_rel.clone(), perf));
        files.push((sim_rel.clone(), sim));

        manifest_runs.push(serde_json::json!({
            "app": plan.app,
            "dataset_level": plan.level,
            "dataset_param": plan.param,
            "threads": plan.threads,
            "role": if plan.is_test { "test" } else { "train" },
            "perf": perf_rel,
            "sim": sim_rel,
            "run_count": 5,
        }));

        ground_truth.push(GroundTruthRow {
            app: plan.app.clone(),
            dataset_level: plan.level,
            threads: plan.threads,
            role: if plan.is_test { "test" } else { "train" }.to_string(),
            speedup_clean: z,
            ipc_clean: plan.ipc_clean,
            label: label_decision(z).expect("planted speedup is finite"),
        });
    }

    let manifest = serde_json::json!({
        "manifest_version": 1,
        "runs": manifest_runs,
    });
    files.push((
        "manifest.json".to_string(),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    ));

    let mut gt_csv = String::from("app,dataset_level,threads,role,speedup_clean,ipc_clean,label\n");
    for row in &ground_truth {
        gt_csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.app,
            row.dataset_level,
            row.threads,
            row.role,
            row.speedup_clean,
            row.ipc_clean,
            row.label
        ));
    }
    files.push(("ground_truth.csv".to_string(), gt_csv));

    Ok(SynthCorpus {
        files,
        ground_truth,
    })
}

/// Generates the corpus and writes it under `out_dir`.
///
/// Contents are produced fully in memory first; each file is then written
/// via a temporary name and an atomic rename.
pub fn generate_synthetic_corpus(
    cfg: &SynthConfig,
    out_dir: &Path,
) -> Result<SynthCorpus, SynthError> {
    let corpus = generate_corpus(cfg)?;
    for (rel, content) in &corpus.files {
        let path = out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| SynthError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let tmp = path.with_extension("tmp-write");
        std::fs::write(&tmp, content).map_err(|source| SynthError::Io {
            path: tmp.clone(),
            source,
        })?;
        std::fs::rename(&tmp, &path).map_err(|source| SynthError::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(corpus)
}
