//! Trace-driven simulator for SSD-internal interconnects: shared-bus
//! baselines, packetized meshes, and Venice's circuit-reserving mesh.
//!
//! ```
//! use venice_core::engine::{simulate, SimConfig};
//! use venice_core::controller::{IoRequest, RequestKind};
//! use venice_core::interconnect::TopologyKind;
//!
//! let cfg = SimConfig::performance_optimized(TopologyKind::VeniceMesh);
//! let req = IoRequest {
//!     arrival_time: 0,
//!     kind: RequestKind::Read,
//!     logical_page_start: 0,
//!     page_count: 1,
//!     source_stream: 0,
//! };
//! let out = simulate(&cfg, &[req]).unwrap();
//! assert!(out.completed[0].completion_time > 3_000);
//! ```

pub mod config;
pub mod controller;
pub mod engine;
pub mod error;
pub mod flash;
pub mod ftl;
pub mod interconnect;
pub mod metrics;
pub mod routing;
pub mod sim;
pub mod workload;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::config::{RunConfig, StreamSource};
use crate::controller::{CompletedRequest, IoRequest};
use crate::engine::{simulate, EngineStats};
use crate::error::RunError;
use crate::interconnect::TopologyKind;
use crate::metrics::RunReport;
use crate::workload::{generate_synthetic, mix_streams, parse_trace, to_requests, TraceRecord};

pub use crate::error::{ConfigError, ReportError, SimError, TraceError};

/// Everything one simulation produced.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: RunReport,
    pub completed: Vec<CompletedRequest>,
    pub stats: EngineStats,
}

fn load_stream(src: &StreamSource, stream: u16) -> Result<Vec<TraceRecord>, RunError> {
    let mut recs = match (&src.trace, &src.synthetic) {
        (Some(path), _) => parse_trace(path)?,
        (None, Some(spec)) => generate_synthetic(spec).map_err(ConfigError::Invalid)?,
        (None, None) => return Err(ConfigError::Invalid("empty workload stream".into()).into()),
    };
    for r in &mut recs {
        r.stream = stream;
    }
    Ok(recs)
}

/// Byte-level records of the configured workload, merged and time-sorted.
pub fn load_workload(cfg: &RunConfig) -> Result<Vec<TraceRecord>, RunError> {
    let w = &cfg.workload;
    if let Some(mix) = &w.mix {
        let streams = mix
            .iter()
            .enumerate()
            .map(|(i, s)| load_stream(s, i as u16))
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(mix_streams(&streams));
    }
    load_stream(
        &StreamSource {
            trace: w.trace.clone(),
            synthetic: w.synthetic,
        },
        0,
    )
}

/// The configured workload as page-granular requests for this geometry.
pub fn load_requests(cfg: &RunConfig) -> Result<Vec<IoRequest>, RunError> {
    let records = load_workload(cfg)?;
    let sim = cfg.sim_config();
    let logical = ((sim.geometry.total_pages() as f64) * (1.0 - sim.overprovision)).floor() as u64;
    Ok(to_requests(&records, sim.geometry.page_size, logical.max(1)))
}

/// Simulate prepared requests under `cfg`.
pub fn run_requests(cfg: &RunConfig, requests: &[IoRequest]) -> Result<RunResult, RunError> {
    let sim = cfg.sim_config();
    let out = simulate(&sim, requests)?;
    let report = RunReport::build(cfg.architecture, &out.completed, out.energy, out.routers, &sim.power)?;
    Ok(RunResult {
        report,
        completed: out.completed,
        stats: out.stats,
    })
}

/// Load the workload and simulate it.
pub fn run(cfg: &RunConfig) -> Result<RunResult, RunError> {
    cfg.validate()?;
    let requests = load_requests(cfg)?;
    run_requests(cfg, &requests)
}

/// Reports for several architectures over one workload, plus speedups.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub reports: Vec<RunReport>,
    /// Baseline execution time over each architecture's; present when the
    /// baseline is among the compared architectures.
    pub speedup_over_baseline: BTreeMap<TopologyKind, f64>,
    #[serde(skip)]
    pub completed: Vec<Vec<CompletedRequest>>,
}

/// Run the same workload on each architecture in parallel.
pub fn compare(cfg: &RunConfig, architectures: &[TopologyKind]) -> Result<Comparison, RunError> {
    let requests = load_requests(cfg)?;
    let results: Vec<Result<RunResult, RunError>> = std::thread::scope(|s| {
        let handles: Vec<_> = architectures
            .iter()
            .map(|&arch| {
                let mut c = cfg.clone();
                c.architecture = arch;
                let reqs = &requests;
                s.spawn(move || {
                    c.validate()?;
                    run_requests(&c, reqs)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });
    let mut reports = Vec::new();
    let mut completed = Vec::new();
    for r in results {
        let r = r?;
        reports.push(r.report);
        completed.push(r.completed);
    }
    let base = reports
        .iter()
        .find(|r| r.architecture == TopologyKind::BaselineBus)
        .map(|r| r.total_execution_time_ns);
    let speedup_over_baseline = match base {
        Some(b) => reports
            .iter()
            .map(|r| (r.architecture, b as f64 / r.total_execution_time_ns.max(1) as f64))
            .collect(),
        None => BTreeMap::new(),
    };
    Ok(Comparison {
        reports,
        speedup_over_baseline,
        completed,
    })
}
