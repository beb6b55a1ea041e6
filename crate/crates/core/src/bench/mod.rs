//! Latency benchmarks, report rendering and the invariant suite behind the
//! `turbobench` command.

mod config;
mod report;
mod run;
mod verify;

pub use config::{AttnPlan, BenchConfig, BenchKind};
pub use report::{emit_report, render_report, LatencyReport, ReportFormat, RunSummary, StageTimes, STAGES};
pub use run::{
    linear_bench_inputs, norm_bench_inputs, run_component_bench, run_e2e_bench, run_e2e_bench_with_samples,
};
pub use verify::{
    invariant_inventory, run_verify_suite, run_verify_suite_with, Faults, InvariantResult, Scope,
    VerifySummary,
};

use crate::error::{Error, Result};

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "TURBOBENCH_THREADS";

/// Installs a global pool of `TURBOBENCH_THREADS` workers when the variable is
/// set, and returns the thread count in effect. Outputs never depend on it.
pub fn configure_threads() -> Result<usize> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

/// `baseline_s / fast_s`.
pub fn speedup_ratio(baseline_s: f64, fast_s: f64) -> Result<f64> {
    if !(baseline_s > 0.0 && fast_s > 0.0) || !baseline_s.is_finite() || !fast_s.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "latencies must be positive and finite, got {baseline_s} and {fast_s}"
        )));
    }
    Ok(baseline_s / fast_s)
}

/// End-to-end generation latencies (seconds, single GPU) quoted for the
/// published accelerated video models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PublishedLatency {
    pub model: &'static str,
    pub original_s: f64,
    /// FastVideo baseline, where reported.
    pub fastvideo_s: Option<f64>,
    pub turbo_s: f64,
}

pub const PUBLISHED_LATENCIES: [PublishedLatency; 4] = [
    PublishedLatency {
        model: "Wan2.1-T2V-1.3B-480P",
        original_s: 184.0,
        fastvideo_s: Some(5.3),
        turbo_s: 1.9,
    },
    PublishedLatency {
        model: "Wan2.2-I2V-A14B-720P",
        original_s: 4549.0,
        fastvideo_s: None,
        turbo_s: 38.0,
    },
    PublishedLatency {
        model: "Wan2.1-T2V-14B-720P",
        original_s: 4767.0,
        fastvideo_s: Some(72.6),
        turbo_s: 24.0,
    },
    PublishedLatency {
        model: "Wan2.1-T2V-14B-480P",
        original_s: 1676.0,
        fastvideo_s: Some(26.3),
        turbo_s: 9.9,
    },
];
