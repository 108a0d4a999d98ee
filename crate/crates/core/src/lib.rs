//! Core library for `nmpo`, a profiling-and-offloading advisor for
//! near-memory-computing (NMC) systems.
//!
//! The library turns host hardware-counter profiles and NMC-simulator
//! statistics into offload decisions:
//!
//! 1. [`ingest`] parses host profiles, simulator statistics, and a run
//!    manifest into validated [`ingest::RunRecord`]s.
//! 2. [`metrics`] derives energy-delay products, EDP speedup, offload
//!    labels, and roofline classifications.
//! 3. [`stats`] computes Pearson correlation matrices and selects features.
//! 4. [`forest`] implements CART decision trees and random forests from
//!    scratch, deterministic under a pinned seed-split scheme.
//! 5. [`eval`] provides k-fold cross-validation, grid/random search,
//!    accuracy/confusion metrics, and the leave-one-application-out
//!    protocol.
//! 6. [`pipeline`] orchestrates the two-stage model (IPC regressor followed
//!    by a suitability classifier), bundle persistence, and reports.
//! 7. [`synth`] generates reproducible synthetic corpora with a planted
//!    feature-to-label relationship for end-to-end testing.

pub mod eval;
pub mod forest;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod synth;

/// Configures the global thread pool used for forest training.
///
/// `cap` = 0 leaves the pool at its automatic size. Must be called before
/// the first parallel operation; later calls are ignored (the pool can only
/// be built once per process).
pub fn configure_threads(cap: usize) {
    if cap > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cap)
            .build_global();
    }
}
