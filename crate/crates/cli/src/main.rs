use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use venice_core::config::RunConfig;
use venice_core::error::RunError;
use venice_core::interconnect::TopologyKind;
use venice_core::metrics::{emit_report, ReportFormat, RunReport};
use venice_core::workload::{parse_trace, trace_stats};
use venice_core::{compare, load_workload, run, ConfigError, SimError};

/// Simulate SSD-internal interconnects over I/O traces.
#[derive(Parser)]
#[command(name = "venice", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one architecture and print its report.
    Run(RunArgs),
    /// Run the workload on several architectures and report speedups.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated architectures (default: all six).
        #[arg(long, value_delimiter = ',')]
        archs: Vec<TopologyKind>,
    },
    /// Check a config file; optionally print it with presets expanded.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        dump: bool,
    },
    /// Summarize a trace: read share, mean size, mean inter-arrival.
    TraceInfo {
        /// Trace file; without it, the config's workload is summarized.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        config: Option<String>,
        #[arg(long, env = "VENICE_CONFIG_DIR", default_value = "configs")]
        config_dir: PathBuf,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Config file, or the name of one in the config directory.
    #[arg(long, default_value = "performance-optimized")]
    config: String,
    #[arg(long, env = "VENICE_CONFIG_DIR", default_value = "configs")]
    config_dir: PathBuf,
    #[arg(long)]
    arch: Option<TopologyKind>,
    /// Replace the configured workload with this trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv, json, latency-log or cdf (default: the config's).
    #[arg(long)]
    format: Option<String>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

fn resolve_config(name: &str, dir: &Path) -> PathBuf {
    let direct = PathBuf::from(name);
    if direct.exists() || name.contains(std::path::MAIN_SEPARATOR) || name.contains('/') {
        return direct;
    }
    let named = dir.join(name);
    if named.extension().is_none() {
        named.with_extension("toml")
    } else {
        named
    }
}

fn load(common: &CommonArgs) -> Result<RunConfig, RunError> {
    let mut cfg = RunConfig::load(&resolve_config(&common.config, &common.config_dir))?;
    if let Some(a) = common.arch {
        cfg.architecture = a;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = &common.trace {
        cfg.workload.trace = Some(t.clone());
        cfg.workload.synthetic = None;
        cfg.workload.mix = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn format_of(args: &RunArgs, cfg: &RunConfig) -> Result<ReportFormat, RunError> {
    match &args.format {
        Some(f) => Ok(f.parse()?),
        None => Ok(cfg.output.format),
    }
}

fn write_out(args: &RunArgs, cfg: &RunConfig, bytes: &[u8]) -> anyhow::Result<()> {
    match args.out.as_ref().or(cfg.output.path.as_ref()) {
        Some(p) => std::fs::write(p, bytes).map_err(|e| anyhow::anyhow!("writing {}: {e}", p.display())),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn exec(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load(&args.common)?;
            let fmt = format_of(&args, &cfg)?;
            let res = run(&cfg)?;
            let bytes = emit_report(&[res.report], &[&res.completed], fmt)?;
            write_out(&args, &cfg, &bytes)
        }
        Command::Compare { run: args, archs } => {
            let cfg = load(&args.common)?;
            let fmt = format_of(&args, &cfg)?;
            let archs = if archs.is_empty() {
                TopologyKind::ALL.to_vec()
            } else {
                archs
            };
            let cmp = compare(&cfg, &archs)?;
            let bytes = match fmt {
                ReportFormat::Csv => {
                    let mut s = format!("{},speedup\n", RunReport::CSV_HEADER);
                    for r in &cmp.reports {
                        let sp = cmp.speedup_over_baseline.get(&r.architecture);
                        s.push_str(&r.csv_row());
                        s.push_str(&sp.map_or(",".to_string(), |v| format!(",{v:.4}")));
                        s.push('\n');
                    }
                    s.into_bytes()
                }
                ReportFormat::Json => {
                    let mut v = serde_json::to_vec_pretty(&cmp)?;
                    v.push(b'\n');
                    v
                }
                other => {
                    let done: Vec<&[_]> = cmp.completed.iter().map(Vec::as_slice).collect();
                    emit_report(&cmp.reports, &done, other)?
                }
            };
            write_out(&args, &cfg, &bytes)
        }
        Command::Validate { common, dump } => {
            let cfg = load(&common)?;
            if dump {
                print!("{}", cfg.effective().to_toml());
            } else {
                let sim = cfg.sim_config();
                println!(
                    "ok: {} on {}x{} chips, {} B pages",
                    cfg.architecture, sim.geometry.rows, sim.geometry.chips_per_row, sim.geometry.page_size
                );
            }
            Ok(())
        }
        Command::TraceInfo {
            trace,
            config,
            config_dir,
        } => {
            let records = match (trace, config) {
                (Some(t), _) => parse_trace(&t).map_err(RunError::from)?,
                (None, Some(c)) => {
                    let cfg = RunConfig::load(&resolve_config(&c, &config_dir)).map_err(RunError::from)?;
                    load_workload(&cfg)?
                }
                (None, None) => {
                    return Err(RunError::from(ConfigError::Invalid(
                        "trace-info needs --trace or --config".into(),
                    ))
                    .into())
                }
            };
            let s = trace_stats(&records);
            println!("requests:            {}", s.requests);
            println!("read fraction:       {:.4}", s.read_fraction);
            println!("mean size (B):       {:.1}", s.mean_size_bytes);
            println!("mean inter-arrival:  {:.1} ns", s.mean_inter_arrival_ns);
            println!("duration:            {} ns", s.duration_ns);
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<RunError>() {
        Some(RunError::Config(_) | RunError::Trace(_) | RunError::Report(_)) => EXIT_CONFIG,
        Some(RunError::Sim(SimError::InvalidGeometry(_))) => EXIT_CONFIG,
        Some(RunError::Sim(_)) => EXIT_INVARIANT,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match exec(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
