//! Derived features, energy-delay products, offload labels, and roofline
//! classification.
//!
//! Host-side quantities come from the profile events; NMC-side quantities
//! from the simulator statistics. The decision figure of merit is the
//! energy-delay-product speedup `host_edp / nmc_edp`: above 2 offloading is
//! labeled `yes`, between 1 and 2 `maybe`, at or below 1 `no`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{events, RunRecord};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("time must be > 0, got {0}")]
    NonPositiveTime(f64),
    #[error("nmc edp must be > 0, got {0}")]
    NonPositiveEdp(f64),
    #[error("speedup must be finite, got {0}")]
    NonFiniteSpeedup(f64),
    #[error("arithmetic intensity must be > 0, got {0}")]
    NonPositiveIntensity(f64),
    #[error("dram traffic is zero while flops = {0}; intensity undefined")]
    UndefinedIntensity(f64),
    #[error("required event {0:?} absent from profile")]
    MissingEvent(String),
    #[error("invalid roofline: {0}")]
    InvalidRoofline(String),
    #[error("negative quantity: {name} = {value}")]
    Negative { name: &'static str, value: f64 },
}

/// Offload decision for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffloadLabel {
    Yes,
    Maybe,
    No,
}

impl OffloadLabel {
    /// All labels in classifier vote-priority order.
    pub const ALL: [OffloadLabel; 3] = [OffloadLabel::Yes, OffloadLabel::Maybe, OffloadLabel::No];

    pub fn as_str(&self) -> &'static str {
        match self {
            OffloadLabel::Yes => "yes",
            OffloadLabel::Maybe => "maybe",
            OffloadLabel::No => "no",
        }
    }

    /// Index in [`OffloadLabel::ALL`].
    pub fn index(&self) -> usize {
        match self {
            OffloadLabel::Yes => 0,
            OffloadLabel::Maybe => 1,
            OffloadLabel::No => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for OffloadLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OffloadLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "yes" => Ok(OffloadLabel::Yes),
            "maybe" => Ok(OffloadLabel::Maybe),
            "no" => Ok(OffloadLabel::No),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Where the label boundaries s = 1 and s = 2 belong.
///
/// `LowerClosed` (the default) assigns a boundary value to the lower class:
/// s = 2 is `maybe`, s = 1 is `no`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryConvention {
    #[default]
    LowerClosed,
    UpperClosed,
}

/// Labels an EDP speedup.
pub fn label_decision(edp_speedup: f64) -> Result<OffloadLabel, MetricsError> {
    label_decision_with(edp_speedup, BoundaryConvention::LowerClosed)
}

pub fn label_decision_with(
    edp_speedup: f64,
    convention: BoundaryConvention,
) -> Result<OffloadLabel, MetricsError> {
    if !edp_speedup.is_finite() {
        return Err(MetricsError::NonFiniteSpeedup(edp_speedup));
    }
    let label = match convention {
        BoundaryConvention::LowerClosed => {
            if edp_speedup > 2.0 {
                OffloadLabel::Yes
            } else if edp_speedup > 1.0 {
                OffloadLabel::Maybe
            } else {
                OffloadLabel::No
            }
        }
        BoundaryConvention::UpperClosed => {
            if edp_speedup >= 2.0 {
                OffloadLabel::Yes
            } else if edp_speedup >= 1.0 {
                OffloadLabel::Maybe
            } else {
                OffloadLabel::No
            }
        }
    };
    Ok(label)
}

/// Host energy-delay product in Joule-seconds.
pub fn compute_host_edp(energy_j: f64, time_s: f64) -> Result<f64, MetricsError> {
    if energy_j < 0.0 || !energy_j.is_finite() {
        return Err(MetricsError::Negative {
            name: "energy_j",
            value: energy_j,
        });
    }
    if !time_s.is_finite() || time_s <= 0.0 {
        return Err(MetricsError::NonPositiveTime(time_s));
    }
    Ok(energy_j * time_s)
}

/// NMC energy-delay product in Joule-seconds from picojoules and nanoseconds.
pub fn compute_nmc_edp(trace_energy_pj: f64, total_time_ns: f64) -> Result<f64, MetricsError> {
    if trace_energy_pj < 0.0 || !trace_energy_pj.is_finite() {
        return Err(MetricsError::Negative {
            name: "trace_energy_pj",
            value: trace_energy_pj,
        });
    }
    if !total_time_ns.is_finite() || total_time_ns <= 0.0 {
        return Err(MetricsError::NonPositiveTime(total_time_ns));
    }
    Ok((trace_energy_pj * 1e-12) * (total_time_ns * 1e-9))
}

/// EDP speedup `host_edp / nmc_edp`.
pub fn compute_edp_speedup(host_edp: f64, nmc_edp: f64) -> Result<f64, MetricsError> {
    if !nmc_edp.is_finite() || nmc_edp <= 0.0 {
        return Err(MetricsError::NonPositiveEdp(nmc_edp));
    }
    if host_edp < 0.0 || !host_edp.is_finite() {
        return Err(MetricsError::Negative {
            name: "host_edp",
            value: host_edp,
        });
    }
    Ok(host_edp / nmc_edp)
}

/// Unit and accounting options for feature derivation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct UnitConfig {
    /// Add `power/energy-ram/` to the host energy when available.
    pub include_ram_energy: bool,
    /// Per-event weights for floating-point sub-events (default 1).
    pub flop_weights: BTreeMap<String, f64>,
}

const MIB: f64 = (1u64 << 20) as f64;
const GB: f64 = 1e9;

/// Features derived from one run record. NMC-side fields are present only
/// when simulator data was.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedFeatures {
    pub host_total_energy_j: f64,
    pub host_edp_js: f64,
    pub host_dram_access_gb: f64,
    pub host_flops: f64,
    pub host_gflops_per_s: f64,
    pub host_flop_per_byte: f64,
    pub nmc_ipc: Option<f64>,
    pub nmc_total_time_ns: Option<f64>,
    pub nmc_trace_energy_pj: Option<f64>,
    pub nmc_edp_js: Option<f64>,
    pub edp_speedup: Option<f64>,
}

/// Derives the feature set of one record.
///
/// DRAM traffic is the MiB reported by the memory controller converted to
/// raw bytes for the FLOP/Byte ratio and to 1e9-byte gigabytes for the
/// reported traffic figure.
pub fn derive_features(rec: &RunRecord, cfg: &UnitConfig) -> Result<DerivedFeatures, MetricsError> {
    let host = &rec.host;
    let need = |name: &str| -> Result<f64, MetricsError> {
        host.event(name)
            .ok_or_else(|| MetricsError::MissingEvent(name.to_string()))
    };

    let mut energy = need(events::ENERGY_PKG)?;
    if cfg.include_ram_energy {
        if let Some(ram) = host.event(events::ENERGY_RAM) {
            energy += ram;
        }
    }
    let time_s = host.wall_time_s;
    let edp = compute_host_edp(energy, time_s)?;

    let reads_mib = need(events::DATA_READS)?;
    let writes_mib = need(events::DATA_WRITES)?;
    let dram_bytes = (reads_mib + writes_mib) * MIB;
    let dram_gb = dram_bytes / GB;

    let flops = host
        .prefixed_sum(events::FP_ARITH_PREFIX, &cfg.flop_weights)
        .ok_or_else(|| MetricsError::MissingEvent(format!("{}*", events::FP_ARITH_PREFIX)))?;
    let gflops = flops / time_s / 1e9;
    let flop_per_byte = if dram_bytes > 0.0 {
        flops / dram_bytes
    } else if flops > 0.0 {
        return Err(MetricsError::UndefinedIntensity(flops));
    } else {
        0.0
    };

    let mut out = DerivedFeatures {
        host_total_energy_j: energy,
        host_edp_js: edp,
        host_dram_access_gb: dram_gb,
        host_flops: flops,
        host_gflops_per_s: gflops,
        host_flop_per_byte: flop_per_byte,
        nmc_ipc: None,
        nmc_total_time_ns: None,
        nmc_trace_energy_pj: None,
        nmc_edp_js: None,
        edp_speedup: None,
    };

    if let Some(nmc) = &rec.nmc {
        out.nmc_ipc = Some(nmc.ipc);
        out.nmc_total_time_ns = Some(nmc.total_time_ns);
        out.nmc_trace_energy_pj = Some(nmc.trace_energy_pj);
        let nmc_edp = compute_nmc_edp(nmc.trace_energy_pj, nmc.total_time_ns)?;
        out.nmc_edp_js = Some(nmc_edp);
        if nmc_edp > 0.0 {
            out.edp_speedup = Some(compute_edp_speedup(edp, nmc_edp)?);
        }
    }
    Ok(out)
}

/// Machine compute and bandwidth roofs.
///
/// The ridge points are where the bandwidth roofs meet peak compute:
/// `ridge = peak / bandwidth` in FLOP/Byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineRoofline {
    pub peak_gflops: f64,
    pub dram_bw_gbs: f64,
    pub l3_bw_gbs: f64,
}

impl MachineRoofline {
    pub fn new(peak_gflops: f64, dram_bw_gbs: f64, l3_bw_gbs: f64) -> Result<Self, MetricsError> {
        if !peak_gflops.is_finite() || peak_gflops <= 0.0 {
            return Err(MetricsError::InvalidRoofline(format!(
                "peak must be > 0, got {peak_gflops}"
            )));
        }
        if !dram_bw_gbs.is_finite() || dram_bw_gbs <= 0.0 || l3_bw_gbs < dram_bw_gbs {
            return Err(MetricsError::InvalidRoofline(format!(
                "need l3_bw >= dram_bw > 0, got dram {dram_bw_gbs}, l3 {l3_bw_gbs}"
            )));
        }
        Ok(Self {
            peak_gflops,
            dram_bw_gbs,
            l3_bw_gbs,
        })
    }

    /// Builds the machine from its two ridge points instead of bandwidths.
    pub fn from_ridges(
        peak_gflops: f64,
        ridge_dram: f64,
        ridge_l3: f64,
    ) -> Result<Self, MetricsError> {
        if ridge_dram <= 0.0 || ridge_l3 <= 0.0 || ridge_dram.is_nan() || ridge_l3.is_nan() {
            return Err(MetricsError::InvalidRoofline(format!(
                "ridges must be > 0, got {ridge_dram}, {ridge_l3}"
            )));
        }
        Self::new(peak_gflops, peak_gflops / ridge_dram, peak_gflops / ridge_l3)
    }

    pub fn ridge_dram(&self) -> f64 {
        self.peak_gflops / self.dram_bw_gbs
    }

    pub fn ridge_l3(&self) -> f64 {
        self.peak_gflops / self.l3_bw_gbs
    }
}

impl Default for MachineRoofline {
    /// Reference desktop machine: 300.8 GFLOP/s peak with ridge points at
    /// 7.05 (DRAM) and 0.73 (L3) FLOP/Byte.
    fn default() -> Self {
        Self::from_ridges(300.8, 7.05, 0.73).expect("reference roofline is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RooflineRegion {
    ComputeBound,
    DramBound,
    L3Bound,
}

impl fmt::Display for RooflineRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RooflineRegion::ComputeBound => write!(f, "compute_bound"),
            RooflineRegion::DramBound => write!(f, "dram_bound"),
            RooflineRegion::L3Bound => write!(f, "l3_bound"),
        }
    }
}

/// One application's position in the roofline plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RooflinePoint {
    pub app: String,
    /// Arithmetic intensity in FLOP/Byte.
    pub ai: f64,
    /// Achieved performance in GFLOP/s.
    pub perf: f64,
    pub region: RooflineRegion,
}

/// Classifies an (arithmetic intensity, performance) point against the
/// machine roofs.
///
/// Regions partition the positive intensity axis: `ai >= ridge_dram` is
/// compute-bound, `ridge_l3 <= ai < ridge_dram` DRAM-bound, `ai < ridge_l3`
/// L3-bound.
pub fn roofline_classify(
    app: &str,
    ai: f64,
    perf: f64,
    machine: &MachineRoofline,
) -> Result<RooflinePoint, MetricsError> {
    if !ai.is_finite() || ai <= 0.0 {
        return Err(MetricsError::NonPositiveIntensity(ai));
    }
    if !perf.is_finite() || perf <= 0.0 {
        return Err(MetricsError::Negative {
            name: "perf",
            value: perf,
        });
    }
    let region = if ai >= machine.ridge_dram() {
        RooflineRegion::ComputeBound
    } else if ai >= machine.ridge_l3() {
        RooflineRegion::DramBound
    } else {
        RooflineRegion::L3Bound
    };
    Ok(RooflinePoint {
        app: app.to_string(),
        ai,
        perf,
        region,
    })
}
