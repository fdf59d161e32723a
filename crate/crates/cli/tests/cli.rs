//! End-to-end tests of the `bpcsim` binary: exit codes, emitted files and
//! override handling.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_bpcsim")
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("bpcsim_cli_tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Short constant-ish trajectory so CLI runs stay fast.
fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(
        &path,
        r#"
[sim]
seed = 5
f_data_hz = 50.0
latency_tau_ms = 10.0

[trajectory]
source = "synthetic"
initial_speed_mps = 12.0

[[trajectory.segments]]
kind = "straight"
length_m = 150.0
end_speed_mps = 15.0

[[trajectory.segments]]
kind = "arc"
radius_m = 60.0
sweep_deg = 60.0

[[trajectory.segments]]
kind = "straight"
length_m = 150.0
end_speed_mps = 10.0
"#,
    )
    .unwrap();
    path
}

fn run_cmd(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("BPCSIM_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn summary_value(summary: &str, key: &str) -> f64 {
    summary
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("summary key {key} missing"))
        .parse()
        .unwrap()
}

#[test]
fn run_produces_outputs() {
    let dir = temp_dir("run");
    let config = small_config(&dir);
    let out_dir = dir.join("out");
    let output = run_cmd(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
    for file in ["results.csv", "summary.txt", "cdf.csv"] {
        assert!(out_dir.join(file).exists(), "{file} missing");
    }
    let results = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert!(results.starts_with(
        "t,d,omega1_az,omega1_el,omega2_az,omega2_el,ptx_dbm,snr_db,outage,err_az1"
    ));
    let cdf = std::fs::read_to_string(out_dir.join("cdf.csv")).unwrap();
    assert!(cdf.starts_with("snr_db,cdf"));
}

#[test]
fn fixed_mode_override_lands_in_summary() {
    let dir = temp_dir("fixed_mode");
    let config = small_config(&dir);
    let out_dir = dir.join("out");
    let output = run_cmd(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--mode",
        "fixed",
        "--fixed-beam-deg",
        "13",
    ]);
    assert!(output.status.success(), "{output:?}");
    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!((summary_value(&summary, "beam_min_deg") - 13.0).abs() < 1e-9);
    assert!((summary_value(&summary, "beam_max_deg") - 13.0).abs() < 1e-9);
}

#[test]
fn missing_trajectory_exits_2_without_outputs() {
    let dir = temp_dir("missing_traj");
    let config = small_config(&dir);
    let out_dir = dir.join("out");
    let output = run_cmd(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--trajectory",
        dir.join("does_not_exist.csv").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2), "{output:?}");
    assert!(!out_dir.exists(), "no partial outputs on config errors");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = temp_dir("unknown_key");
    let config = dir.join("bad.toml");
    std::fs::write(&config, "[sim]\nwarp_factor = 9\n").unwrap();
    let output = run_cmd(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn same_seed_is_byte_identical() {
    let dir = temp_dir("determinism");
    let config = small_config(&dir);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out in [&out_a, &out_b] {
        let output = run_cmd(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
            "--seed",
            "123",
        ]);
        assert!(output.status.success());
    }
    for file in ["results.csv", "summary.txt", "cdf.csv"] {
        assert_eq!(
            std::fs::read(out_a.join(file)).unwrap(),
            std::fs::read(out_b.join(file)).unwrap(),
            "{file} differs between identical seeds"
        );
    }
}

#[test]
fn sweep_emits_merged_comparison() {
    let dir = temp_dir("sweep");
    let config = small_config(&dir);
    let out_dir = dir.join("out");
    let output = run_cmd(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--axis",
        "tau",
        "--values",
        "1,10,50,100",
    ]);
    assert!(output.status.success(), "{output:?}");
    let sweep = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 5, "header plus one row per value");
    let cdf = std::fs::read_to_string(out_dir.join("cdf_sweep.csv")).unwrap();
    let header = cdf.lines().next().unwrap();
    assert_eq!(header, "snr_db,cdf_1,cdf_10,cdf_50,cdf_100");
}

#[test]
fn sweep_over_sampling_rate() {
    let dir = temp_dir("sweep_fdata");
    let config = small_config(&dir);
    let out_dir = dir.join("out");
    let output = run_cmd(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--axis",
        "f_data",
        "--values",
        "100,1000",
    ]);
    assert!(output.status.success(), "{output:?}");
    let sweep = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    // ten times the sampling rate means roughly ten times the steps
    let steps: Vec<f64> = sweep
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(steps[1] > 8.0 * steps[0]);
}

#[test]
fn sweep_rejects_empty_values_and_bad_axis() {
    let dir = temp_dir("sweep_bad");
    let config = small_config(&dir);
    let empty = run_cmd(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--axis",
        "tau",
        "--values",
        "",
    ]);
    assert_eq!(empty.status.code(), Some(2));
    let bad_axis = run_cmd(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--axis",
        "bandwidth",
        "--values",
        "1,2",
    ]);
    assert_eq!(bad_axis.status.code(), Some(2));
}

#[test]
fn calibrate_writes_constant_and_is_idempotent() {
    let dir = temp_dir("calibrate");
    let out = dir.join("calibration.toml");
    let first = run_cmd(&["calibrate", "--out", out.to_str().unwrap()]);
    assert!(first.status.success(), "{first:?}");
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert!(stdout.contains("gain constant"));
    assert!(stdout.contains("residual"));
    let contents_first = std::fs::read(&out).unwrap();

    let second = run_cmd(&["calibrate", "--out", out.to_str().unwrap()]);
    assert!(second.status.success());
    assert_eq!(contents_first, std::fs::read(&out).unwrap());

    // the calibration file feeds back through the config
    let config = dir.join("with_cal.toml");
    std::fs::write(
        &config,
        format!(
            "[link]\ncalibration_file = \"{}\"\n\n[trajectory]\nsource = \"synthetic\"\n\n[[trajectory.segments]]\nkind = \"straight\"\nlength_m = 120.0\nend_speed_mps = 10.0\n",
            out.display()
        ),
    )
    .unwrap();
    let run_out = dir.join("out");
    let output = run_cmd(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        run_out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{output:?}");
}
