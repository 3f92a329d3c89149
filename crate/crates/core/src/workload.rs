//! Trace ingestion, synthetic workloads, and stream mixing.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric};
use serde::{Deserialize, Serialize};

use crate::controller::{IoRequest, RequestKind};
use crate::error::TraceError;
use crate::sim::Nanos;

/// One I/O from a trace or generator. Timestamps are ns from the trace start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub timestamp: Nanos,
    pub op: RequestKind,
    pub offset: u64,
    pub size: u64,
    pub stream: u16,
}

/// Windows FILETIME ticks are 100 ns.
const FILETIME_TICK_NS: u64 = 100;

fn parse_line(line: &str) -> Option<(u64, RequestKind, u64, u64)> {
    let f: Vec<&str> = line.split(',').map(str::trim).collect();
    if f.len() != 7 {
        return None;
    }
    let ts: u64 = f[0].parse().ok()?;
    let op = match f[3].to_ascii_lowercase().as_str() {
        "read" => RequestKind::Read,
        "write" => RequestKind::Write,
        _ => return None,
    };
    let offset: u64 = f[4].parse().ok()?;
    let size: u64 = f[5].parse().ok()?;
    if size == 0 {
        return None;
    }
    Some((ts, op, offset, size))
}

/// Parse MSR-Cambridge style CSV text:
/// `timestamp,hostname,disk,op,offset,size,latency`.
///
/// Blank lines are ignored. Malformed lines are skipped and counted; more
/// than 1% malformed aborts.
pub fn parse_trace_str(text: &str, name: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut raw = Vec::new();
    let mut malformed = 0usize;
    let mut total = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match parse_line(line) {
            Some(r) => raw.push(r),
            None => malformed += 1,
        }
    }
    if malformed * 100 > total {
        return Err(TraceError::ParseQuality {
            path: name.to_string(),
            malformed,
            total,
        });
    }
    let base = raw.iter().map(|r| r.0).min().unwrap_or(0);
    let mut out: Vec<TraceRecord> = raw
        .into_iter()
        .map(|(ts, op, offset, size)| TraceRecord {
            timestamp: (ts - base) * FILETIME_TICK_NS,
            op,
            offset,
            size,
            stream: 0,
        })
        .collect();
    out.sort_by_key(|r| r.timestamp);
    Ok(out)
}

pub fn parse_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_trace_str(&text, &path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SizeDist {
    Fixed { bytes: u64 },
    /// Whole 512-byte sectors, geometrically distributed with the given mean.
    Geometric { mean_bytes: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ArrivalDist {
    Poisson { mean_ns: u64 },
    Fixed { ns: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum AddressDist {
    Uniform,
    /// `probability` of requests fall in the first `fraction` of the space.
    Hotspot { fraction: f64, probability: f64 },
    /// Page-aligned offsets restricted to multiples of `stride_pages`.
    /// With channel-first striping, a stride equal to the channel count
    /// sends every request to one channel.
    Strided { stride_pages: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub read_fraction: f64,
    pub request_size: SizeDist,
    pub inter_arrival: ArrivalDist,
    pub address: AddressDist,
    pub count: usize,
    pub seed: u64,
    /// Size of the addressed space; offsets are page-aligned within it.
    #[serde(default = "default_space")]
    pub address_space_bytes: u64,
    #[serde(default = "default_align")]
    pub alignment_bytes: u64,
}

fn default_space() -> u64 {
    16 << 30
}

fn default_align() -> u64 {
    4096
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return Err(format!("read_fraction must be in [0, 1], got {}", self.read_fraction));
        }
        if self.count == 0 {
            return Err("count must be >= 1".into());
        }
        if self.alignment_bytes == 0 || self.address_space_bytes < self.alignment_bytes {
            return Err("address_space_bytes must cover at least one aligned slot".into());
        }
        match self.request_size {
            SizeDist::Fixed { bytes: 0 } => return Err("request size must be >= 1".into()),
            SizeDist::Geometric { mean_bytes } if mean_bytes < 512 => {
                return Err("geometric mean size must be >= 512 bytes".into())
            }
            _ => {}
        }
        if let ArrivalDist::Poisson { mean_ns: 0 } = self.inter_arrival {
            return Err("poisson mean inter-arrival must be >= 1 ns".into());
        }
        match self.address {
            AddressDist::Hotspot {
                fraction,
                probability,
            } if !(fraction > 0.0 && fraction <= 1.0 && (0.0..=1.0).contains(&probability)) => {
                return Err("hotspot fraction must be in (0, 1] and probability in [0, 1]".into())
            }
            AddressDist::Strided { stride_pages: 0 } => {
                return Err("stride_pages must be >= 1".into())
            }
            _ => {}
        }
        Ok(())
    }
}

/// Deterministic synthetic workload.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<TraceRecord>, String> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let slots = spec.address_space_bytes / spec.alignment_bytes;
    let arrival = match spec.inter_arrival {
        ArrivalDist::Poisson { mean_ns } => {
            Some(Exp::new(1.0 / mean_ns as f64).map_err(|e| e.to_string())?)
        }
        ArrivalDist::Fixed { .. } => None,
    };
    let sectors = match spec.request_size {
        SizeDist::Geometric { mean_bytes } => {
            Some(Geometric::new(512.0 / mean_bytes as f64).map_err(|e| e.to_string())?)
        }
        SizeDist::Fixed { .. } => None,
    };
    let mut t = 0u64;
    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        if i > 0 {
            t += match (spec.inter_arrival, &arrival) {
                (ArrivalDist::Fixed { ns }, _) => ns,
                (_, Some(exp)) => exp.sample(&mut rng).round() as u64,
                _ => unreachable!(),
            };
        }
        let op = if rng.random::<f64>() < spec.read_fraction {
            RequestKind::Read
        } else {
            RequestKind::Write
        };
        let size = match (spec.request_size, &sectors) {
            (SizeDist::Fixed { bytes }, _) => bytes,
            (_, Some(g)) => (1 + g.sample(&mut rng)) * 512,
            _ => unreachable!(),
        };
        let slot = match spec.address {
            AddressDist::Uniform => rng.random_range(0..slots),
            AddressDist::Hotspot {
                fraction,
                probability,
            } => {
                let hot = ((slots as f64 * fraction) as u64).max(1);
                if rng.random::<f64>() < probability {
                    rng.random_range(0..hot)
                } else {
                    rng.random_range(0..slots)
                }
            }
            AddressDist::Strided { stride_pages } => {
                let n = (slots / stride_pages).max(1);
                rng.random_range(0..n) * stride_pages
            }
        };
        out.push(TraceRecord {
            timestamp: t,
            op,
            offset: slot * spec.alignment_bytes,
            size,
            stream: 0,
        });
    }
    Ok(out)
}

/// Stable merge by timestamp; each record is tagged with its stream index.
pub fn mix_streams(streams: &[Vec<TraceRecord>]) -> Vec<TraceRecord> {
    let mut out: Vec<TraceRecord> = streams
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            s.iter().map(move |r| TraceRecord {
                stream: i as u16,
                ..*r
            })
        })
        .collect();
    out.sort_by_key(|r| r.timestamp);
    out
}

/// Convert byte-addressed records into page-granular requests.
pub fn to_requests(records: &[TraceRecord], page_size: u64, logical_pages: u64) -> Vec<IoRequest> {
    records
        .iter()
        .map(|r| {
            let (lpn, count) = offset_to_pages(r.offset, r.size, page_size);
            IoRequest {
                arrival_time: r.timestamp,
                kind: r.op,
                logical_page_start: lpn % logical_pages.max(1),
                page_count: count,
                source_stream: r.stream,
            }
        })
        .collect()
}

/// First logical page and the number of pages an access spans.
pub fn offset_to_pages(offset: u64, size: u64, page_size: u64) -> (u64, u64) {
    let lpn = offset / page_size;
    let count = ((offset % page_size) + size).div_ceil(page_size);
    (lpn, count.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub requests: usize,
    pub read_fraction: f64,
    pub mean_size_bytes: f64,
    pub mean_inter_arrival_ns: f64,
    pub duration_ns: Nanos,
}

pub fn trace_stats(records: &[TraceRecord]) -> TraceStats {
    let n = records.len();
    if n == 0 {
        return TraceStats {
            requests: 0,
            read_fraction: 0.0,
            mean_size_bytes: 0.0,
            mean_inter_arrival_ns: 0.0,
            duration_ns: 0,
        };
    }
    let reads = records.iter().filter(|r| r.op == RequestKind::Read).count();
    let bytes: u64 = records.iter().map(|r| r.size).sum();
    let first = records.iter().map(|r| r.timestamp).min().unwrap_or(0);
    let last = records.iter().map(|r| r.timestamp).max().unwrap_or(0);
    TraceStats {
        requests: n,
        read_fraction: reads as f64 / n as f64,
        mean_size_bytes: bytes as f64 / n as f64,
        mean_inter_arrival_ns: if n > 1 {
            (last - first) as f64 / (n - 1) as f64
        } else {
            0.0
        },
        duration_ns: last - first,
    }
}
