//! Run-level accounting: latency percentiles, conflict rates, power, energy,
//! and report serialization.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::controller::CompletedRequest;
use crate::error::{ReportError, SimError};
use crate::interconnect::TopologyKind;
use crate::sim::Nanos;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerModel {
    /// Static power of one router, charged for the whole run.
    pub router_power: f64,
    /// One link while it carries a transfer.
    pub link_transfer_power: f64,
    /// One shared channel while it carries a transfer.
    pub bus_transfer_power: f64,
    /// Per active die. Placeholders; only orderings are meaningful.
    pub flash_read_power: f64,
    pub flash_program_power: f64,
    pub flash_erase_power: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            router_power: 0.241,
            link_transfer_power: 1.08,
            bus_transfer_power: 10.8,
            flash_read_power: 25.0,
            flash_program_power: 50.0,
            flash_erase_power: 35.0,
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            ("router_power", self.router_power),
            ("link_transfer_power", self.link_transfer_power),
            ("bus_transfer_power", self.bus_transfer_power),
            ("flash_read_power", self.flash_read_power),
            ("flash_program_power", self.flash_program_power),
            ("flash_erase_power", self.flash_erase_power),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("power.{name} must be a finite value >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Energy per component, in mW·ns (1 mW·ns = 1e-9 mJ).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub router: f64,
    pub link: f64,
    pub bus: f64,
    pub flash: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.router + self.link + self.bus + self.flash
    }

    pub fn total_mj(&self) -> f64 {
        self.total() * 1e-9
    }
}

/// Nearest-rank percentile of unsorted samples: the value at rank
/// `ceil(p/100 * N)` (1-based) in sorted order.
pub fn percentile(samples: &[Nanos], p: f64) -> Result<Nanos, SimError> {
    if samples.is_empty() {
        return Err(SimError::EmptyRun);
    }
    let mut v = samples.to_vec();
    v.sort_unstable();
    Ok(percentile_sorted(&v, p))
}

fn percentile_sorted(sorted: &[Nanos], p: f64) -> Nanos {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// `(latency, cumulative fraction)` for each distinct latency.
pub fn latency_cdf(samples: &[Nanos]) -> Vec<(Nanos, f64)> {
    let mut v = samples.to_vec();
    v.sort_unstable();
    let n = v.len() as f64;
    let mut out: Vec<(Nanos, f64)> = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = frac,
            _ => out.push((x, frac)),
        }
    }
    out
}

/// Streaming per-request accumulator.
#[derive(Debug, Clone, Default)]
pub struct Accumulator {
    pub latencies: Vec<Nanos>,
    pub conflicts: usize,
    pub first_try_ok: usize,
    pub first_try_total: usize,
    pub min_arrival: Option<Nanos>,
    pub max_completion: Nanos,
}

impl Accumulator {
    pub fn record_completion(&mut self, r: &CompletedRequest) {
        self.latencies.push(r.latency());
        if r.conflict {
            self.conflicts += 1;
        }
        if let Some(ok) = r.first_try_reserved {
            self.first_try_total += 1;
            if ok {
                self.first_try_ok += 1;
            }
        }
        self.min_arrival = Some(self.min_arrival.map_or(r.arrival_time, |m| m.min(r.arrival_time)));
        self.max_completion = self.max_completion.max(r.completion_time);
    }

    pub fn count(&self) -> usize {
        self.latencies.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub architecture: TopologyKind,
    pub request_count: usize,
    pub total_execution_time_ns: Nanos,
    pub iops: f64,
    pub mean_latency_ns: f64,
    pub p50_latency_ns: Nanos,
    pub p99_latency_ns: Nanos,
    pub p999_latency_ns: Nanos,
    pub conflict_fraction: f64,
    pub first_try_success_fraction: Option<f64>,
    pub avg_power_mw: f64,
    pub energy_mj: f64,
    pub energy_breakdown_mj: EnergyBreakdown,
}

impl RunReport {
    /// Build a report from completed requests and the run's energy integral.
    ///
    /// `routers` is the number of always-on routers whose static power is
    /// charged across the whole execution time.
    pub fn build(
        architecture: TopologyKind,
        completed: &[CompletedRequest],
        dynamic: EnergyBreakdown,
        routers: usize,
        power: &PowerModel,
    ) -> Result<Self, SimError> {
        let mut acc = Accumulator::default();
        for r in completed {
            acc.record_completion(r);
        }
        Self::from_accumulator(architecture, &acc, dynamic, routers, power)
    }

    pub fn from_accumulator(
        architecture: TopologyKind,
        acc: &Accumulator,
        dynamic: EnergyBreakdown,
        routers: usize,
        power: &PowerModel,
    ) -> Result<Self, SimError> {
        let n = acc.count();
        let start = acc.min_arrival.ok_or(SimError::EmptyRun)?;
        let exec = acc.max_completion - start;
        let mut sorted = acc.latencies.clone();
        sorted.sort_unstable();
        let mean = sorted.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
        let mut energy = dynamic;
        energy.router = routers as f64 * power.router_power * exec as f64;
        let total = energy.total();
        let avg_power = if exec == 0 { 0.0 } else { total / exec as f64 };
        let iops = if exec == 0 {
            0.0
        } else {
            n as f64 / (exec as f64 * 1e-9)
        };
        Ok(Self {
            architecture,
            request_count: n,
            total_execution_time_ns: exec,
            iops,
            mean_latency_ns: mean,
            p50_latency_ns: percentile_sorted(&sorted, 50.0),
            p99_latency_ns: percentile_sorted(&sorted, 99.0),
            p999_latency_ns: percentile_sorted(&sorted, 99.9),
            conflict_fraction: acc.conflicts as f64 / n as f64,
            first_try_success_fraction: (acc.first_try_total > 0)
                .then(|| acc.first_try_ok as f64 / acc.first_try_total as f64),
            avg_power_mw: avg_power,
            energy_mj: total * 1e-9,
            energy_breakdown_mj: EnergyBreakdown {
                router: energy.router * 1e-9,
                link: energy.link * 1e-9,
                bus: energy.bus * 1e-9,
                flash: energy.flash * 1e-9,
            },
        })
    }

    pub const CSV_HEADER: &'static str = "arch,exec_ns,iops,p99_ns,conflict_frac,energy_mJ";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.3},{},{:.6},{:.9}",
            self.architecture,
            self.total_execution_time_ns,
            self.iops,
            self.p99_latency_ns,
            self.conflict_fraction,
            self.energy_mj
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Csv,
    Json,
    LatencyLog,
    Cdf,
}

impl std::str::FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "latency-log" => Ok(Self::LatencyLog),
            "cdf" => Ok(Self::Cdf),
            other => Err(ReportError::UnsupportedFormat(other.to_string())),
        }
    }
}

/// Serialize reports. The latency log and CDF need the per-request records.
pub fn emit_report(
    reports: &[RunReport],
    completed: &[&[CompletedRequest]],
    format: ReportFormat,
) -> Result<Vec<u8>, ReportError> {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(RunReport::CSV_HEADER);
            out.push('\n');
            for r in reports {
                out.push_str(&r.csv_row());
                out.push('\n');
            }
        }
        ReportFormat::Json => {
            let s = if reports.len() == 1 {
                serde_json::to_string_pretty(&reports[0])
            } else {
                serde_json::to_string_pretty(reports)
            }
            .map_err(|e| ReportError::UnsupportedFormat(e.to_string()))?;
            out.push_str(&s);
            out.push('\n');
        }
        ReportFormat::LatencyLog => {
            for (report, reqs) in reports.iter().zip(completed) {
                if reports.len() > 1 {
                    let _ = writeln!(out, "# {}", report.architecture);
                }
                for r in reqs.iter() {
                    let _ = writeln!(
                        out,
                        "{},{},{},{}",
                        r.arrival_time,
                        r.completion_time,
                        r.kind.as_str(),
                        u8::from(r.conflict)
                    );
                }
            }
        }
        ReportFormat::Cdf => {
            for (report, reqs) in reports.iter().zip(completed) {
                let lat: Vec<Nanos> = reqs.iter().map(|r| r.latency()).collect();
                for (x, f) in latency_cdf(&lat) {
                    let _ = writeln!(out, "{},{},{:.6}", report.architecture, x, f);
                }
            }
        }
    }
    Ok(out.into_bytes())
}
