use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn venice(args: &[&str], config_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_venice"))
        .args(args)
        .env("VENICE_CONFIG_DIR", config_dir)
        .output()
        .expect("spawn venice")
}

fn repo_configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const SMALL: &str = r#"
architecture = "baseline-bus"
preset = "performance-optimized"

[workload.synthetic]
read_fraction = 0.9
count = 200
seed = 3
request_size = { kind = "fixed", bytes = 4096 }
inter_arrival = { kind = "poisson", mean_ns = 5000 }
address = { kind = "uniform" }
"#;

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

#[test]
fn validate_shipped_configs() {
    for name in ["performance-optimized", "cost-optimized"] {
        let out = venice(&["validate", "--config", name], &repo_configs());
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn run_prints_csv_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = venice(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("arch,exec_ns"));
    assert!(lines.next().unwrap().starts_with("baseline-bus,"));
}

#[test]
fn non_square_pnssd_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = venice(
        &["run", "--config", cfg.to_str().unwrap(), "--arch", "pnssd-grid"],
        dir.path(),
    );
    // The preset is square, so this one is fine.
    assert_eq!(out.status.code(), Some(0));

    let text = SMALL.replace(
        "preset = \"performance-optimized\"",
        "preset = \"custom\"\n\n[geometry]\nrows = 4\nchips_per_row = 16\ndies_per_chip = 1\nplanes_per_die = 2\n\
         blocks_per_plane = 64\npages_per_block = 64\npage_size = 4096\n\n[timing]\nt_read = 3000\n\
         t_program = 100000\nt_erase = 1000000\ncmd_transfer_time = 10\npage_transfer_time_bus = 4000\n",
    );
    let p = dir.path().join("wide.toml");
    std::fs::write(&p, text).unwrap();
    let out = venice(
        &["run", "--config", p.to_str().unwrap(), "--arch", "pnssd-grid"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("square"), "{err}");
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = venice(&["run", "--config", "nope"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_key_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "architecture = \"venice-mesh\"\nbogus = 1\n").unwrap();
    let out = venice(&["validate", "--config", p.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn baseline_against_itself_has_unit_speedup() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = venice(
        &["compare", "--config", cfg.to_str().unwrap(), "--archs", "baseline-bus,baseline-bus", "--format", "json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["reports"].as_array().unwrap().len(), 2);
    assert_eq!(v["speedup_over_baseline"]["baseline-bus"].as_f64(), Some(1.0));
}

#[test]
fn trace_replaces_workload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let trace = dir.path().join("t.csv");
    std::fs::write(
        &trace,
        "0,h,0,Read,0,4096,0\n100,h,0,Write,8192,4096,0\n250,h,0,Read,4096,8192,0\n",
    )
    .unwrap();
    let out = venice(
        &["trace-info", "--trace", trace.to_str().unwrap()],
        dir.path(),
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("requests:            3"));
    let out = venice(
        &["run", "--config", cfg.to_str().unwrap(), "--trace", trace.to_str().unwrap(), "--format", "json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["request_count"].as_u64(), Some(3), "{v}");
}
