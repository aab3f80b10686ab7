use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ferret_lab::experiment::{
    cmd_mia_all, cmd_mia_run, cmd_report, cmd_sweep_dither, cmd_train, headroom, plan_text,
    DitherSweepConfig, ExperimentConfig, RunOptions, DATA_DIR,
};
use ferret_lab::Error;

#[derive(Parser)]
#[command(name = "ferret-lab", version, about = "One-bit private update experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory (falls back to FERRET_LAB_OUT, then the config's output_dir).
    #[arg(long, env = "FERRET_LAB_OUT")]
    out: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Firing probability and head-room for a budget.
    Plan {
        #[arg(long)]
        groups: u64,
        #[arg(long)]
        steps: u64,
        /// Subsampling rate B/N.
        #[arg(long)]
        rate: f64,
        /// Target budget in nats.
        #[arg(long)]
        epsilon: f64,
    },
    /// Run every (method, epsilon, epochs, seed) cell of a grid.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds overriding the config.
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
        /// Record wall-clock duration in run.txt (reruns are then not byte-identical).
        #[arg(long)]
        timing: bool,
    },
    /// Final-MSE quartiles of FERRET on linear regression across dither levels.
    SweepDither {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
    },
    /// Loss-threshold membership inference on trained runs.
    Mia {
        /// A single run directory; without it every run under --out is scored.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Directory holding members.csv and nonmembers.csv (default: <run>/../data).
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Join every run and MIA result under --out into report.csv.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

const DEFAULT_OUT: &str = "ferret-lab-out";

fn resolve_out(flag: Option<PathBuf>, from_config: Option<PathBuf>) -> PathBuf {
    flag.or(from_config).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Json(_) | Error::Domain(_) => 2,
        Error::BudgetInfeasible { .. } => 3,
        Error::MissingArtifact(_) => 4,
        _ => 1,
    }
}

fn read_config_text(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Plan {
            groups,
            steps,
            rate,
            epsilon,
        } => match plan_text(groups, steps, rate, epsilon) {
            Ok(text) => print!("{text}"),
            Err(Error::BudgetInfeasible { epsilon, .. }) => {
                return Err(Error::BudgetInfeasible {
                    epsilon,
                    epsilon_max: headroom(groups, steps, rate)?,
                })
            }
            Err(e) => return Err(e),
        },
        Command::Train {
            config,
            common,
            seed_list,
            timing,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seeds) = seed_list {
                cfg.seeds = seeds;
            }
            let out = resolve_out(common.out, cfg.output_dir.clone());
            let dirs = cmd_train(
                &cfg,
                &out,
                &RunOptions {
                    workers: common.workers,
                    record_timing: timing,
                },
            )?;
            println!("wrote {} runs under {}", dirs.len(), out.display());
        }
        Command::SweepDither {
            config,
            common,
            seed_list,
        } => {
            let mut cfg: DitherSweepConfig = serde_json::from_str(&read_config_text(&config)?)?;
            if let Some(seeds) = seed_list {
                cfg.seeds = seeds;
            }
            let out = resolve_out(common.out, cfg.output_dir.clone());
            let rows = cmd_sweep_dither(&cfg, &out, common.workers)?;
            println!("sigma,q25,median,q75");
            for r in rows {
                println!("{},{},{},{}", r.sigma, r.q25, r.median, r.q75);
            }
        }
        Command::Mia { run, data, common } => match run {
            Some(run_dir) => {
                let data = data.unwrap_or_else(|| {
                    run_dir
                        .parent()
                        .unwrap_or(Path::new("."))
                        .join(DATA_DIR)
                });
                let report = cmd_mia_run(&run_dir, &data)?;
                print!("{}", report.summary());
            }
            None => {
                let out = resolve_out(common.out, None);
                let n = cmd_mia_all(&out, common.workers)?;
                println!("scored {n} runs under {}", out.display());
            }
        },
        Command::Report { common } => {
            let out = resolve_out(common.out, None);
            let rows = cmd_report(&out)?;
            println!("wrote {} rows to {}", rows.len(), out.join("report.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
