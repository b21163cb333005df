use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use homsim::config::ExperimentConfig;
use homsim::error::HomError;
use homsim::fock::FockCutoff;
use homsim::io;
use homsim::pipeline::{self, MetricsFile, EXPERIMENT_REFERENCE};
use homsim::tomography::MleResult;
use homsim::wigner::{wigner_slice, SlicePlane};

#[derive(Parser)]
#[command(
    name = "homsim",
    version,
    about = "Memory-synchronized HOM interference simulation and tomography"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML); defaults are used without it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the per-mode photon-number cutoff.
    #[arg(long, global = true)]
    cutoff: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Synchronization and homodyne sampling to quadrature records.
    Simulate {
        /// Overrides the configured number of events.
        #[arg(long)]
        events: Option<usize>,
    },
    /// Maximum-likelihood reconstruction from records.
    Tomo {
        #[arg(long)]
        records: PathBuf,
    },
    /// Wigner slices of a density matrix.
    Wigner {
        #[arg(long)]
        rho: PathBuf,
    },
    /// Entanglement and interference metrics of a density matrix.
    Metrics {
        #[arg(long)]
        rho: PathBuf,
        /// Records for bootstrap error bars.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Bootstrap resamples; defaults to the configured number.
        #[arg(long)]
        bootstrap: Option<usize>,
    },
    /// Rate and purity versus the synchronization window.
    Sync {
        /// Largest window, μs.
        #[arg(long, default_value_t = 2.0)]
        max_window: f64,
        /// Window step, μs.
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        /// Overrides the simulated time, s.
        #[arg(long)]
        total_time: Option<f64>,
    },
    /// Wavepackets, storage tables, coherence time and PCA.
    Modes,
    /// Histogram tables from records.
    Figures {
        #[arg(long)]
        records: PathBuf,
    },
    /// Every stage end to end, with a manifest.
    Run,
}

fn load_config(common: &Common) -> Result<ExperimentConfig, HomError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = common.cutoff {
        cfg.cutoff = FockCutoff::new(n).map_err(|e| HomError::Config(format!("cutoff: {e}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<HomError>()) {
        Some(HomError::Config(_)) => 2,
        Some(HomError::NotConverged { .. }) => 4,
        Some(HomError::Io(_) | HomError::Csv(_) | HomError::Json(_)) | None => 1,
        Some(_) => 3,
    }
}

fn save_mle(out: &Path, mle: &MleResult<homsim::fock::TwoModeState>) -> anyhow::Result<()> {
    io::save_state(&out.join("rho.json"), &mle.state, Some(mle.diagnostics()))?;
    io::save_csv(&out.join("mle_history.csv"), &pipeline::history_rows(&mle.history))?;
    Ok(())
}

fn not_converged(iterations: usize) -> anyhow::Error {
    HomError::NotConverged { iterations }.into()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(&cli.common)?;
    let out = cli.common.out.as_path();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match cli.command {
        Command::Simulate { events } => {
            if let Some(n) = events {
                cfg.events = n;
                cfg.validate()?;
            }
            let (events, summary, records) = pipeline::simulate(&cfg)?;
            std::fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
            io::save_events(&out.join("events.csv"), &events)?;
            io::save_json(&out.join("sync_summary.json"), &summary)?;
            io::save_records(&out.join("records.csv"), &records)?;
            log::info!("{} records at {:.2} cps", records.len(), summary.rate_cps);
        }
        Command::Tomo { records } => {
            let records = io::load_records(&records)?;
            let mle = pipeline::reconstruct(&cfg, &records)?;
            save_mle(out, &mle)?;
            println!(
                "iterations {} converged {} log-likelihood/event {:.9}",
                mle.iterations, mle.converged, mle.log_likelihood_per_event
            );
            if !mle.converged {
                return Err(not_converged(mle.iterations));
            }
        }
        Command::Wigner { rho } => {
            let (state, _) = io::load_state(&rho)?;
            for (stem, plane) in [
                ("wigner_x1_x2", SlicePlane::quadrature_plane()),
                ("wigner_x1_p2", SlicePlane::mixed_plane()),
            ] {
                let slice = wigner_slice(&state, &plane, &cfg.wigner)?;
                io::save_slice(out, stem, &slice)?;
                println!("{stem}: min {:.6} max {:.6}", slice.min_value, slice.max_value());
            }
        }
        Command::Metrics {
            rho,
            records,
            bootstrap,
        } => {
            let (state, _) = io::load_state(&rho)?;
            let report = match records {
                Some(path) => {
                    let records = io::load_records(&path)?;
                    let n = bootstrap.unwrap_or(cfg.tomography.bootstrap);
                    pipeline::metrics_with_bootstrap(&cfg, &records, &state, n)?
                }
                None => pipeline::metrics_with_bootstrap(&cfg, &[], &state, 0)?,
            };
            let file = MetricsFile {
                simulated: report,
                experiment: EXPERIMENT_REFERENCE,
            };
            io::save_json(&out.join("metrics.json"), &file)?;
            println!("{}", serde_json::to_string_pretty(&file)?);
        }
        Command::Sync {
            max_window,
            step,
            total_time,
        } => {
            if !(step > 0.0 && max_window >= step) {
                return Err(HomError::Config("sync: need 0 < step <= max_window".into()).into());
            }
            if let Some(t) = total_time {
                cfg.sync.total_time = t;
                cfg.validate()?;
            }
            let n = (max_window / step).round() as usize;
            let windows: Vec<f64> = (1..=n).map(|k| (k as f64 * step * 1e9).round() / 1e9).collect();
            let curve = pipeline::sync_curve(&cfg, &windows)?;
            io::save_csv(&out.join("sync_curve.csv"), &curve.rows)?;
            io::save_json(&out.join("sync_curve.json"), &curve)?;
            println!(
                "slope {:.3} cps/us intercept {:.3} cps R^2 {:.5}",
                curve.slope_cps_per_us, curve.intercept_cps, curve.r_squared
            );
        }
        Command::Modes => {
            let (report, modes) = pipeline::modes_report(&cfg)?;
            for (name, mode) in &modes {
                io::save_mode(&out.join(name), mode)?;
            }
            io::save_json(&out.join("modes.json"), &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Figures { records } => {
            let records = io::load_records(&records)?;
            for p in pipeline::write_figure_tables(&cfg, &records, out)? {
                println!("{}", p.display());
            }
        }
        Command::Run => {
            let result = pipeline::run_pipeline(&cfg, out)?;
            println!("{}", serde_json::to_string_pretty(&result.metrics)?);
            println!(
                "wigner minima {:.6} {:.6}",
                result.wigner_minimum[0], result.wigner_minimum[1]
            );
            if !result.mle_converged {
                return Err(not_converged(result.mle_iterations));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
