//! Configuration handling and command implementations behind the `bpcsim`
//! binary. Angles and latencies cross this boundary in degrees and
//! milliseconds; everything internal is radians and seconds.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use bpc_core::channel::{calibrate_gain_constant, snr_min_from_ber, Calibration, LinkConfig};
use bpc_core::fusion::NoiseConfig;
use bpc_core::geometry::Vec3;
use bpc_core::sim::{
    self, estimate_outage, metrics, run, snr_cdf, FusionMode, Mode, SimConfig, Summary,
};
use bpc_core::trajectory::{
    curvy_default_segments, generate_trajectory, load_trajectory, Segment, TrajectorySample,
    TrajectorySpec,
};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "BPCSIM_OUT_DIR";

#[derive(Debug)]
pub enum CliError {
    /// Configuration or input problem → exit code 2.
    Config(String),
    /// Numerical or simulation failure → exit code 3.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numerical(m) => m,
        }
    }
}

fn config_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn numerical_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

// ---------------------------------------------------------------------------
// Config file schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub link: LinkSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub trajectory: TrajectorySection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub mode: Option<String>,
    pub fusion: Option<String>,
    pub seed: Option<u64>,
    pub delta_t_gap_s: Option<f64>,
    pub latency_tau_ms: Option<f64>,
    pub f_data_hz: Option<f64>,
    pub gps_rate_hz: Option<f64>,
    pub sigma_p_m: Option<f64>,
    pub sigma_gamma_deg: Option<f64>,
    pub k: Option<f64>,
    pub omega_min_deg: Option<f64>,
    pub omega_max_deg: Option<f64>,
    pub fixed_beam_deg: Option<f64>,
    pub p_out_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub f0_ghz: Option<f64>,
    pub bandwidth_mhz: Option<f64>,
    pub noise_power_dbm: Option<f64>,
    pub eirp_max_dbm: Option<f64>,
    pub snr_min_db: Option<f64>,
    pub ber_target: Option<f64>,
    pub gain_constant: Option<f64>,
    pub calibration_file: Option<String>,
    pub power_margin_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma_a: Option<f64>,
    pub sigma_omega: Option<f64>,
    pub sigma_gnss: Option<f64>,
    pub sigma_v: Option<f64>,
    pub sigma_gamma_obs_deg: Option<f64>,
    pub accel_bias: Option<[f64; 3]>,
    pub gyro_bias: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySection {
    /// "synthetic" (default) or "csv".
    pub source: Option<String>,
    pub csv_path: Option<String>,
    pub initial_speed_mps: Option<f64>,
    pub segments: Option<Vec<SegmentCfg>>,
}

/// Config-file segment; arc sweeps are given in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentCfg {
    Straight { length_m: f64, end_speed_mps: f64 },
    Arc { radius_m: f64, sweep_deg: f64 },
}

impl SegmentCfg {
    fn to_segment(&self) -> Segment {
        match *self {
            SegmentCfg::Straight {
                length_m,
                end_speed_mps,
            } => Segment::Straight {
                length_m,
                end_speed_mps,
            },
            SegmentCfg::Arc {
                radius_m,
                sweep_deg,
            } => Segment::Arc {
                radius_m,
                sweep_rad: sweep_deg.to_radians(),
            },
        }
    }
}

/// Command-line overrides layered on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub trajectory: Option<PathBuf>,
    pub tau_ms: Option<f64>,
    pub f_data_hz: Option<f64>,
    pub sigma_p_m: Option<f64>,
    pub sigma_gamma_deg: Option<f64>,
    pub k: Option<f64>,
    pub fixed_beam_deg: Option<f64>,
    pub delta_t_s: Option<f64>,
}

/// Where the trajectory comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TrajectorySource {
    Synthetic(TrajectorySpec),
    Csv(PathBuf),
}

/// Fully resolved run setup.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveConfig {
    pub sim: SimConfig,
    pub trajectory: TrajectorySource,
}

pub fn load_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(config_err)
        }
    }
}

fn parse_mode(s: &str) -> Result<Mode, CliError> {
    match s {
        "heuristic" => Ok(Mode::Heuristic),
        "fixed" => Ok(Mode::Fixed),
        "optimizer" => Ok(Mode::Optimizer),
        other => Err(CliError::Config(format!(
            "unknown mode `{other}` (heuristic|fixed|optimizer)"
        ))),
    }
}

fn parse_fusion(s: &str) -> Result<FusionMode, CliError> {
    match s {
        "sampled" => Ok(FusionMode::Sampled),
        "full_ekf" => Ok(FusionMode::FullEkf),
        other => Err(CliError::Config(format!(
            "unknown fusion mode `{other}` (sampled|full_ekf)"
        ))),
    }
}

/// Resolves file config plus overrides into the effective run setup, applying
/// the standard defaults for everything omitted.
pub fn build_effective(
    file: &ConfigFile,
    overrides: &Overrides,
) -> Result<EffectiveConfig, CliError> {
    let defaults = SimConfig::default();
    let s = &file.sim;

    let mut link = LinkConfig::<f64>::default();
    let l = &file.link;
    if let Some(f0) = l.f0_ghz {
        link.f0_hz = f0 * 1e9;
    }
    if let Some(bw) = l.bandwidth_mhz {
        link.bandwidth_hz = bw * 1e6;
    }
    if let Some(np) = l.noise_power_dbm {
        link.noise_power_dbm = np;
    }
    if let Some(e) = l.eirp_max_dbm {
        link.eirp_max_dbm = e;
    }
    if let Some(m) = l.power_margin_db {
        link.power_margin_db = m;
    }
    if let Some(ber) = l.ber_target {
        link.snr_min_db = snr_min_from_ber(ber).map_err(config_err)?;
    }
    if let Some(snr) = l.snr_min_db {
        link.snr_min_db = snr;
    }
    if let Some(path) = &l.calibration_file {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read calibration file {path}: {e}")))?;
        let cal: CalibrationFile = toml::from_str(&text).map_err(config_err)?;
        link.gain_constant = cal.gain_constant;
    }
    if let Some(k) = l.gain_constant {
        link.gain_constant = k;
    }

    let mut noise = NoiseConfig::<f64>::default();
    let n = &file.noise;
    if let Some(v) = n.sigma_a {
        noise.sigma_a = v;
    }
    if let Some(v) = n.sigma_omega {
        noise.sigma_omega = v;
    }
    if let Some(v) = n.sigma_gnss {
        noise.sigma_gnss = v;
    }
    if let Some(v) = n.sigma_v {
        noise.sigma_v = v;
    }
    if let Some(deg) = n.sigma_gamma_obs_deg {
        let per_axis = deg.to_radians() / 3.0f64.sqrt();
        noise.c_gamma = nalgebra_diag(per_axis * per_axis);
    }
    if let Some(b) = n.accel_bias {
        noise.accel_bias = Vec3::new(b[0], b[1], b[2]);
    }
    if let Some(b) = n.gyro_bias {
        noise.gyro_bias = Vec3::new(b[0], b[1], b[2]);
    }

    let mode = match (&overrides.mode, &s.mode) {
        (Some(m), _) => parse_mode(m)?,
        (None, Some(m)) => parse_mode(m)?,
        (None, None) => defaults.mode,
    };
    let fusion_mode = match &s.fusion {
        Some(f) => parse_fusion(f)?,
        None => defaults.fusion_mode,
    };

    let sim = SimConfig {
        delta_t_gap_s: overrides
            .delta_t_s
            .or(s.delta_t_gap_s)
            .unwrap_or(defaults.delta_t_gap_s),
        latency_tau_s: overrides
            .tau_ms
            .or(s.latency_tau_ms)
            .map(|ms| ms / 1e3)
            .unwrap_or(defaults.latency_tau_s),
        f_data_hz: overrides
            .f_data_hz
            .or(s.f_data_hz)
            .unwrap_or(defaults.f_data_hz),
        gps_rate_hz: s.gps_rate_hz.unwrap_or(defaults.gps_rate_hz),
        sigma_p_m: overrides
            .sigma_p_m
            .or(s.sigma_p_m)
            .unwrap_or(defaults.sigma_p_m),
        sigma_gamma_rad: overrides
            .sigma_gamma_deg
            .or(s.sigma_gamma_deg)
            .map(|d| d.to_radians())
            .unwrap_or(defaults.sigma_gamma_rad),
        k: overrides.k.or(s.k).unwrap_or(defaults.k),
        omega_min_rad: s
            .omega_min_deg
            .map(|d| d.to_radians())
            .unwrap_or(defaults.omega_min_rad),
        omega_max_rad: s
            .omega_max_deg
            .map(|d| d.to_radians())
            .unwrap_or(defaults.omega_max_rad),
        fixed_beam_rad: overrides
            .fixed_beam_deg
            .or(s.fixed_beam_deg)
            .map(|d| d.to_radians())
            .unwrap_or(defaults.fixed_beam_rad),
        p_out_max: s.p_out_max.unwrap_or(defaults.p_out_max),
        link,
        noise,
        seed: overrides.seed.or(s.seed).unwrap_or(defaults.seed),
        mode,
        fusion_mode,
    };

    let t = &file.trajectory;
    let trajectory = if let Some(path) = &overrides.trajectory {
        TrajectorySource::Csv(path.clone())
    } else {
        match t.source.as_deref().unwrap_or("synthetic") {
            "csv" => {
                let path = t.csv_path.as_ref().ok_or_else(|| {
                    CliError::Config("trajectory.source = csv requires csv_path".into())
                })?;
                TrajectorySource::Csv(PathBuf::from(path))
            }
            "synthetic" => {
                let segments = match &t.segments {
                    Some(list) if !list.is_empty() => {
                        list.iter().map(SegmentCfg::to_segment).collect()
                    }
                    _ => curvy_default_segments(),
                };
                TrajectorySource::Synthetic(TrajectorySpec {
                    initial_speed_mps: t.initial_speed_mps.unwrap_or(10.0),
                    segments,
                    f_data_hz: sim.f_data_hz,
                })
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown trajectory source `{other}` (synthetic|csv)"
                )))
            }
        }
    };

    Ok(EffectiveConfig { sim, trajectory })
}

fn nalgebra_diag(v: f64) -> bpc_core::nalgebra::Matrix3<f64> {
    bpc_core::nalgebra::Matrix3::from_diagonal_element(v)
}

/// Loads or generates the trajectory for an effective config.
pub fn resolve_trajectory(effective: &EffectiveConfig) -> Result<Vec<TrajectorySample>, CliError> {
    match &effective.trajectory {
        TrajectorySource::Csv(path) => load_trajectory(path).map_err(config_err),
        TrajectorySource::Synthetic(spec) => generate_trajectory(spec).map_err(config_err),
    }
}

pub fn default_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// `run`: executes one simulation and writes results.csv, summary.txt and
/// cdf.csv into the output directory.
pub fn cmd_run(effective: &EffectiveConfig, out_dir: &Path) -> Result<Summary, CliError> {
    // resolve all inputs before creating any output
    let samples = resolve_trajectory(effective)?;
    let result = run(&effective.sim, &samples).map_err(numerical_err)?;
    let summary = metrics(&result);
    let cdf = snr_cdf(&result);

    fs::create_dir_all(out_dir).map_err(config_err)?;
    sim::write_results_csv(&out_dir.join("results.csv"), &result).map_err(numerical_err)?;
    sim::write_summary(&out_dir.join("summary.txt"), &summary).map_err(numerical_err)?;
    sim::write_cdf_csv(&out_dir.join("cdf.csv"), &cdf).map_err(numerical_err)?;
    Ok(summary)
}

/// Sweepable parameter axes.
pub const SWEEP_AXES: [&str; 5] = ["tau", "f_data", "sigma_p", "sigma_gamma", "k"];

/// `sweep`: one run per value on the chosen axis with a shared seed; merged
/// comparison CSV plus per-value CDF columns.
pub fn cmd_sweep(
    effective: &EffectiveConfig,
    axis: &str,
    values: &[f64],
    out_dir: &Path,
) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    if !SWEEP_AXES.contains(&axis) {
        return Err(CliError::Config(format!(
            "unknown sweep axis `{axis}` ({})",
            SWEEP_AXES.join("|")
        )));
    }

    let mut summaries: Vec<(f64, Summary)> = Vec::new();
    let mut cdfs: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for &value in values {
        let mut cfg = effective.sim.clone();
        let mut traj = effective.trajectory.clone();
        match axis {
            "tau" => cfg.latency_tau_s = value / 1e3,
            "f_data" => {
                cfg.f_data_hz = value;
                if let TrajectorySource::Synthetic(spec) = &mut traj {
                    spec.f_data_hz = value;
                }
            }
            "sigma_p" => cfg.sigma_p_m = value,
            "sigma_gamma" => cfg.sigma_gamma_rad = value.to_radians(),
            "k" => cfg.k = value,
            _ => unreachable!(),
        }
        let eff = EffectiveConfig {
            sim: cfg,
            trajectory: traj,
        };
        let samples = resolve_trajectory(&eff)?;
        let result = run(&eff.sim, &samples).map_err(numerical_err)?;
        summaries.push((value, metrics(&result)));
        cdfs.push((value, snr_cdf(&result)));
    }

    fs::create_dir_all(out_dir).map_err(config_err)?;
    let mut sweep_csv = String::from(
        "value,steps,outage_rate,ptx_mean_dbm,ptx_median_dbm,beam_min_deg,beam_max_deg,beam_mean_deg,snr_mean_db\n",
    );
    for (value, s) in &summaries {
        sweep_csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            value,
            s.steps,
            s.outage_rate,
            s.ptx_mean_dbm,
            s.ptx_median_dbm,
            s.beam_min_rad.to_degrees(),
            s.beam_max_rad.to_degrees(),
            s.beam_mean_rad.to_degrees(),
            s.snr_mean_db
        ));
    }
    fs::write(out_dir.join("sweep.csv"), sweep_csv).map_err(config_err)?;

    // merged CDF on the union grid, one column per swept value
    let mut grid: Vec<f64> = cdfs
        .iter()
        .flat_map(|(_, c)| c.iter().map(|(x, _)| (x * 10.0).round() as i64))
        .collect::<std::collections::BTreeSet<i64>>()
        .into_iter()
        .map(|g| g as f64 / 10.0)
        .collect();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut cdf_csv = String::from("snr_db");
    for (value, _) in &cdfs {
        cdf_csv.push_str(&format!(",cdf_{value}"));
    }
    cdf_csv.push('\n');
    for &x in &grid {
        cdf_csv.push_str(&format!("{x:.1}"));
        for (_, c) in &cdfs {
            // CDF value at x: last grid point ≤ x (0 before the grid starts,
            // 1 past its end)
            let v = match c.binary_search_by(|(g, _)| g.partial_cmp(&x).unwrap()) {
                Ok(i) => c[i].1,
                Err(0) => 0.0,
                Err(i) if i >= c.len() => 1.0,
                Err(i) => c[i - 1].1,
            };
            cdf_csv.push_str(&format!(",{v}"));
        }
        cdf_csv.push('\n');
    }
    fs::write(out_dir.join("cdf_sweep.csv"), cdf_csv).map_err(config_err)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CalibrationFile {
    gain_constant: f64,
}

/// `calibrate`: solves the gain constant from the built-in link-budget
/// anchors, verifies the second anchor, and writes the calibration file.
pub fn cmd_calibrate(out_path: &Path) -> Result<Calibration<f64>, CliError> {
    let link = LinkConfig::<f64>::default();
    let cal = calibrate_gain_constant(link.f0_hz, link.noise_power_dbm);
    if cal.second_anchor_error_db.abs() > 0.3 {
        return Err(CliError::Numerical(format!(
            "second anchor off by {:.3} dB (limit 0.3)",
            cal.second_anchor_error_db
        )));
    }
    if let Some(dir) = out_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(config_err)?;
        }
    }
    let text = toml::to_string(&CalibrationFile {
        gain_constant: cal.gain_constant,
    })
    .map_err(numerical_err)?;
    fs::write(out_path, text).map_err(config_err)?;
    Ok(cal)
}

/// Helper exposed for the sweep/estimation-oriented tests.
pub fn cmd_estimate_outage(
    effective: &EffectiveConfig,
    n_trials: usize,
) -> Result<sim::OutageEstimate, CliError> {
    let samples = resolve_trajectory(effective)?;
    estimate_outage(&effective.sim, &samples, n_trials).map_err(numerical_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_table() {
        let eff = build_effective(&ConfigFile::default(), &Overrides::default()).unwrap();
        let sim = &eff.sim;
        assert_eq!(sim.link.f0_hz, 28e9);
        assert_eq!(sim.link.bandwidth_hz, 400e6);
        assert_eq!(sim.link.noise_power_dbm, -81.0);
        assert_eq!(sim.link.eirp_max_dbm, 43.0);
        assert_eq!(sim.delta_t_gap_s, 3.0);
        assert_eq!(sim.latency_tau_s, 0.01);
        assert_eq!(sim.f_data_hz, 100.0);
        assert_eq!(sim.sigma_p_m, 1.5);
        assert_eq!(sim.sigma_gamma_rad, 1.5f64.to_radians());
        assert_eq!(sim.fixed_beam_rad, 13.0f64.to_radians());
        assert_eq!(sim.k, 3.0);
    }

    #[test]
    fn config_round_trip_is_identity() {
        let text = r#"
[sim]
mode = "fixed"
seed = 7
latency_tau_ms = 50.0
sigma_p_m = 0.15
sigma_gamma_deg = 0.15
fixed_beam_deg = 2.5

[link]
f0_ghz = 28.0
ber_target = 1.3e-2

[trajectory]
source = "synthetic"
initial_speed_mps = 8.0

[[trajectory.segments]]
kind = "straight"
length_m = 100.0
end_speed_mps = 12.0

[[trajectory.segments]]
kind = "arc"
radius_m = 40.0
sweep_deg = 90.0
"#;
        let parsed: ConfigFile = toml::from_str(text).unwrap();
        let serialized = toml::to_string(&parsed).unwrap();
        let reparsed: ConfigFile = toml::from_str(&serialized).unwrap();
        assert_eq!(parsed, reparsed);

        let a = build_effective(&parsed, &Overrides::default()).unwrap();
        let b = build_effective(&reparsed, &Overrides::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sim.mode, Mode::Fixed);
        assert_eq!(a.sim.latency_tau_s, 0.05);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ConfigFile>("[sim]\nnot_a_key = 1\n");
        assert!(err.is_err());
        let err = toml::from_str::<ConfigFile>("[something_else]\nx = 1\n");
        assert!(err.is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let file: ConfigFile = toml::from_str("[sim]\nseed = 3\nsigma_p_m = 1.5\n").unwrap();
        let ov = Overrides {
            seed: Some(9),
            sigma_p_m: Some(0.15),
            mode: Some("optimizer".into()),
            ..Overrides::default()
        };
        let eff = build_effective(&file, &ov).unwrap();
        assert_eq!(eff.sim.seed, 9);
        assert_eq!(eff.sim.sigma_p_m, 0.15);
        assert_eq!(eff.sim.mode, Mode::Optimizer);
    }

    #[test]
    fn bad_mode_is_config_error() {
        let file: ConfigFile = toml::from_str("[sim]\nmode = \"warp\"\n").unwrap();
        let err = build_effective(&file, &Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
