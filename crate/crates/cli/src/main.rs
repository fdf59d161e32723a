use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bpc_cli::{
    build_effective, cmd_calibrate, cmd_run, cmd_sweep, default_out_dir, load_config, CliError,
    Overrides,
};

#[derive(Parser)]
#[command(
    name = "bpcsim",
    about = "Two-vehicle mmWave beamwidth/power control simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Default)]
struct CommonArgs {
    /// TOML configuration file; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (also settable via BPCSIM_OUT_DIR)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Decision policy: heuristic | fixed | optimizer
    #[arg(long)]
    mode: Option<String>,
    /// Trajectory CSV path (overrides the config's trajectory)
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Control-link latency, ms
    #[arg(long)]
    tau_ms: Option<f64>,
    /// Sensor sampling rate, Hz
    #[arg(long)]
    f_data: Option<f64>,
    /// Position error std, m
    #[arg(long)]
    sigma_p: Option<f64>,
    /// Orientation error std, degrees
    #[arg(long)]
    sigma_gamma: Option<f64>,
    /// Beamwidth confidence multiplier
    #[arg(long)]
    k: Option<f64>,
    /// Fixed-baseline beamwidth, degrees
    #[arg(long)]
    fixed_beam_deg: Option<f64>,
    /// Vehicle time gap, s
    #[arg(long)]
    delta_t: Option<f64>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            mode: self.mode.clone(),
            trajectory: self.trajectory.clone(),
            tau_ms: self.tau_ms,
            f_data_hz: self.f_data,
            sigma_p_m: self.sigma_p,
            sigma_gamma_deg: self.sigma_gamma,
            k: self.k,
            fixed_beam_deg: self.fixed_beam_deg,
            delta_t_s: self.delta_t,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write results.csv, summary.txt and cdf.csv
    Run {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run once per value of a parameter axis and merge the comparison CSVs
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Parameter axis: tau | f_data | sigma_p | sigma_gamma | k
        #[arg(long)]
        axis: String,
        /// Comma-separated values (tau in ms, sigma_gamma in degrees)
        #[arg(long)]
        values: String,
    },
    /// Solve the antenna gain constant from the built-in link-budget anchors
    Calibrate {
        /// Calibration file to write
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { common } => {
            let file = load_config(common.config.as_deref())?;
            let effective = build_effective(&file, &common.overrides())?;
            let out_dir = default_out_dir(common.out_dir.clone());
            let summary = cmd_run(&effective, &out_dir)?;
            println!(
                "run complete: {} steps, outage {:.3e}, mean ptx {:.2} dBm -> {}",
                summary.steps,
                summary.outage_rate,
                summary.ptx_mean_dbm,
                out_dir.display()
            );
            Ok(())
        }
        Command::Sweep {
            common,
            axis,
            values,
        } => {
            let parsed: Result<Vec<f64>, _> = values
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse::<f64>())
                .collect();
            let values =
                parsed.map_err(|e| CliError::Config(format!("bad sweep values: {e}")))?;
            let file = load_config(common.config.as_deref())?;
            let effective = build_effective(&file, &common.overrides())?;
            let out_dir = default_out_dir(common.out_dir.clone());
            cmd_sweep(&effective, &axis, &values, &out_dir)?;
            println!(
                "sweep over {axis} complete ({} runs) -> {}",
                values.len(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Calibrate { out } => {
            let out =
                out.unwrap_or_else(|| default_out_dir(None).join("calibration.toml"));
            let cal = cmd_calibrate(&out)?;
            println!(
                "gain constant K = {:.6} ({:.4} dB at 20x20 deg)",
                cal.gain_constant, cal.anchor_gain_db
            );
            println!(
                "second anchor: {:.3} dBm (reference -12.2 dBm, residual {:+.3} dB)",
                cal.second_anchor_ptx_dbm, cal.second_anchor_error_db
            );
            println!("calibration written to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
