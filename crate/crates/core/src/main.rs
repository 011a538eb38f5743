//! `teleport-sim`: simulate, analyse and reproduce the stabilisation runs.
//!
//! Exit status: 0 success, 1 runtime failure, 2 invalid config or usage,
//! 3 inputs from a different config/seed, 4 malformed count table.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use timebin_teleport::config::ExperimentConfig;
use timebin_teleport::error::Error;
use timebin_teleport::experiment::{self, AnalysisKind, Provenance};

#[derive(Parser)]
#[command(name = "teleport-sim", version, about = "Time-bin teleportation link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); the bundled paper-default is used if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent simulations.
    #[arg(long)]
    parallel: Option<usize>,
    /// Overwrite a non-empty output directory / accept mismatched inputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every (state, setting, μ_A) cell and write count tables.
    Simulate(Common),
    /// Reduce a run directory (or a count table file) to reports.
    Analyze {
        /// Run directory from `simulate`, or a counts CSV.
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_values = ["tomo", "decoy", "visibility", "thresholds"])]
        analysis: Vec<AnalysisKind>,
        #[command(flatten)]
        common: Common,
    },
    /// HOM-dip scan over the configured Δt range.
    Homscan {
        #[arg(long, allow_hyphen_values = true)]
        from_ps: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        to_ps: Option<f64>,
        #[arg(long)]
        step_ps: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Locked and unlocked runs over the same drift realisation.
    Lockdemo(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::paper_default(),
    };
    let cfg = cfg.with_overrides(common.seed, common.out.clone());
    cfg.validate()?;
    set_threads(common.parallel)?;
    Ok(cfg)
}

fn set_threads(n: Option<usize>) -> Result<(), Error> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("--parallel: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = load(&common)?;
            experiment::prepare_dir(&cfg.output_dir, common.force)?;
            let sim = experiment::simulate(&cfg)?;
            let files = experiment::write_simulation(&cfg.output_dir, &cfg, &sim)?;
            println!("wrote {} files to {}", files.len() + 1, cfg.output_dir.display());
        }
        Command::Analyze { input, analysis, common } => {
            let explicit = common.config.is_some();
            let resolved = input.join("config.toml");
            let cfg = if !explicit && resolved.exists() {
                // the run's own config; overrides would break its provenance
                set_threads(common.parallel)?;
                ExperimentConfig::load(&resolved)?
            } else {
                load(&common)?
            };
            let expect = explicit.then(|| Provenance::of(&cfg));
            let data = experiment::load_analysis_input(&input, expect.as_ref(), common.force)?;
            let report = experiment::analyze(&data, &cfg, &analysis)?;
            let out = common.out.unwrap_or_else(|| {
                if input.is_dir() {
                    input.join("analysis")
                } else {
                    PathBuf::from("analysis")
                }
            });
            experiment::write_analysis(&out, &cfg, &report)?;
            if let Some(f) = report.average_fidelity {
                println!("average fidelity {f:.4} ± {:.4}", report.average_fidelity_sigma.unwrap_or(0.0));
            }
            if let Some(d) = &report.decoy {
                println!("decoy F1 lower bound {:.4}", d.average_f1_lower);
            }
            if let Some(e) = &report.decoy_error {
                println!("decoy: {e}");
            }
            if let Some(v) = &report.visibility {
                println!("visibility {:.4} ± {:.4}", v.visibility, report.visibility_sigma.unwrap_or(0.0));
            }
            println!("wrote analysis to {}", out.display());
        }
        Command::Homscan {
            from_ps,
            to_ps,
            step_ps,
            common,
        } => {
            let mut cfg = load(&common)?;
            cfg.homscan.from_ps = from_ps.unwrap_or(cfg.homscan.from_ps);
            cfg.homscan.to_ps = to_ps.unwrap_or(cfg.homscan.to_ps);
            cfg.homscan.step_ps = step_ps.unwrap_or(cfg.homscan.step_ps);
            cfg.validate()?;
            experiment::prepare_dir(&cfg.output_dir, common.force)?;
            let points = experiment::homscan(&cfg)?;
            experiment::write_homscan(&cfg.output_dir, &cfg, &points)?;
            if let Some(min) = points.iter().min_by_key(|p| p.coincidences) {
                println!("dip minimum {} coincidences per window at {} ps", min.coincidences, min.delta_t_ps);
            }
        }
        Command::Lockdemo(common) => {
            let cfg = load(&common)?;
            experiment::prepare_dir(&cfg.output_dir, common.force)?;
            let demo = experiment::lockdemo(&cfg)?;
            experiment::write_lockdemo(&cfg.output_dir, &cfg, &demo)?;
            let (l, u) = (demo.locked_stats, demo.unlocked_stats);
            println!(
                "singles RMS locked {:.2}% unlocked {:.2}%; mean |Δt| locked {:.1} ps unlocked {:.1} ps",
                100.0 * l.singles_rms,
                100.0 * u.singles_rms,
                l.mean_abs_residual_ps,
                u.mean_abs_residual_ps
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::InvalidParameter { .. } | Error::Topology(_) => 2,
                Error::Mismatch(_) => 3,
                Error::Schema { .. } | Error::Csv(_) => 4,
                _ => 1,
            })
        }
    }
}
