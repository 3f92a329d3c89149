//! Run configuration: a TOML file naming the architecture, flash preset,
//! workload source and outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::SimConfig;
use crate::error::ConfigError;
use crate::flash::{FlashGeometry, FlashTimingConfig};
use crate::ftl::GcConfig;
use crate::interconnect::{LinkParams, TopologyKind};
use crate::metrics::{PowerModel, ReportFormat};
use crate::routing::RoutingMode;
use crate::sim::Nanos;
use crate::workload::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    PerformanceOptimized,
    CostOptimized,
    /// Geometry and timing must be given explicitly.
    Custom,
}

/// One workload stream: a trace file or a generator spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct StreamSource {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

/// Exactly one of `trace`, `synthetic` or `mix` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mix: Option<Vec<StreamSource>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_format")]
    pub format: ReportFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

fn default_format() -> ReportFormat {
    ReportFormat::Csv
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            format: ReportFormat::Csv,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub architecture: TopologyKind,
    #[serde(default)]
    pub preset: Preset,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Venice only; the buffered mesh always uses dimension-order routing.
    #[serde(default)]
    pub routing: RoutingMode,
    #[serde(default = "default_scout_hop")]
    pub scout_hop_ns: Nanos,
    #[serde(default = "default_overprovision")]
    pub overprovision: f64,
    #[serde(default = "default_true")]
    pub multiplane: bool,
    #[serde(default = "default_buffer")]
    pub nossd_buffer_bytes: u64,
    #[serde(default)]
    pub check_invariants: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<FlashGeometry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<FlashTimingConfig>,
    #[serde(default)]
    pub link: LinkParams,
    #[serde(default)]
    pub gc: GcConfig,
    #[serde(default)]
    pub power: PowerModel,
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    1
}
fn default_scout_hop() -> Nanos {
    3
}
fn default_overprovision() -> f64 {
    0.07
}
fn default_true() -> bool {
    true
}
fn default_buffer() -> u64 {
    16 * 1024
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    /// Parse TOML text. `origin` names the source in error messages.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file. Relative trace paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text, &path.display().to_string())?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(t) = self.workload.trace.as_mut() {
            fix(t);
        }
        for s in self.workload.mix.iter_mut().flatten() {
            if let Some(t) = s.trace.as_mut() {
                fix(t);
            }
        }
    }

    pub fn geometry(&self) -> FlashGeometry {
        self.geometry.unwrap_or(match self.preset {
            Preset::CostOptimized => FlashGeometry::cost_optimized(),
            _ => FlashGeometry::performance_optimized(),
        })
    }

    pub fn timing(&self) -> FlashTimingConfig {
        self.timing.unwrap_or(match self.preset {
            Preset::CostOptimized => FlashTimingConfig::cost_optimized(),
            _ => FlashTimingConfig::performance_optimized(),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.preset == Preset::Custom && (self.geometry.is_none() || self.timing.is_none()) {
            return invalid("preset = \"custom\" needs both [geometry] and [timing]".into());
        }
        let g = self.geometry();
        g.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.timing()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.architecture == TopologyKind::PnssdGrid && g.rows != g.chips_per_row {
            return invalid(format!(
                "pnssd-grid requires a square chip array (rows == chips_per_row), got {}x{}",
                g.rows, g.chips_per_row
            ));
        }
        if self.architecture == TopologyKind::VeniceMesh {
            if self.routing == RoutingMode::Dor {
                return invalid("venice-mesh routing must be venice-nonminimal or venice-minimal-only".into());
            }
            if g.rows > 8 || g.total_chips() > 64 {
                return invalid(format!(
                    "venice-mesh supports at most 8 rows and 64 chips (scout flit fields), got {}x{}",
                    g.rows, g.chips_per_row
                ));
            }
        }
        if self.scout_hop_ns == 0 {
            return invalid("scout_hop_ns must be >= 1".into());
        }
        if self.link.link_width == 0 || self.link.link_cycle == 0 {
            return invalid("link.link_width and link.link_cycle must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.overprovision) {
            return invalid(format!("overprovision must be in [0, 1), got {}", self.overprovision));
        }
        self.gc.validate().map_err(ConfigError::Invalid)?;
        self.power.validate().map_err(ConfigError::Invalid)?;
        if self.architecture == TopologyKind::NossdMesh && self.nossd_buffer_bytes < g.page_size {
            return invalid(format!(
                "nossd_buffer_bytes ({}) must hold one page ({})",
                self.nossd_buffer_bytes, g.page_size
            ));
        }
        let w = &self.workload;
        let sources =
            usize::from(w.trace.is_some()) + usize::from(w.synthetic.is_some()) + usize::from(w.mix.is_some());
        if sources != 1 {
            return invalid(format!(
                "[workload] needs exactly one of trace, synthetic or mix; found {sources}"
            ));
        }
        if let Some(s) = &w.synthetic {
            s.validate().map_err(|m| ConfigError::Invalid(format!("workload.synthetic: {m}")))?;
        }
        if let Some(mix) = &w.mix {
            if mix.is_empty() {
                return invalid("workload.mix must list at least one stream".into());
            }
            for (i, s) in mix.iter().enumerate() {
                if usize::from(s.trace.is_some()) + usize::from(s.synthetic.is_some()) != 1 {
                    return invalid(format!(
                        "workload.mix[{i}] needs exactly one of trace or synthetic"
                    ));
                }
                if let Some(sp) = &s.synthetic {
                    sp.validate()
                        .map_err(|m| ConfigError::Invalid(format!("workload.mix[{i}]: {m}")))?;
                }
            }
        }
        Ok(())
    }

    /// The simulator parameters this config describes.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            architecture: self.architecture,
            geometry: self.geometry(),
            timing: self.timing(),
            link: self.link,
            routing: if self.architecture == TopologyKind::NossdMesh {
                RoutingMode::Dor
            } else {
                self.routing
            },
            scout_hop_ns: self.scout_hop_ns,
            gc: self.gc,
            overprovision: self.overprovision,
            power: self.power,
            seed: self.seed,
            nossd_buffer_bytes: self.nossd_buffer_bytes,
            multiplane: self.multiplane,
            check_invariants: self.check_invariants,
        }
    }

    /// The same config with the preset spelled out, so it reloads to an
    /// identical run even if preset defaults change.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.geometry = Some(self.geometry());
        c.timing = Some(self.timing());
        c.preset = Preset::Custom;
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }
}
