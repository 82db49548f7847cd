use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use psz_core::experiment::{run_eval, run_report, run_sweep, run_train, EvalMode, ExperimentConfig, OUTPUT_DIR_ENV};
use psz_core::{Band, PszError};

#[derive(Parser, Debug)]
#[command(name = "psz", version, about = "Train and evaluate neighbor-consistent sound zone filter generators")]
struct Cli {
    /// Overrides the output directory of the configuration.
    #[arg(long, global = true, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one band's generator.
    Train {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "w")]
        band: BandArg,
        /// Consistency weight; 0 trains the baseline.
        #[arg(long)]
        lambda: Option<f64>,
        /// Perturbation half-width in meters.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Compare a baseline and a consistency-trained model.
    Eval {
        config: PathBuf,
        /// Baseline checkpoint, one per enabled band.
        #[arg(long, required = true, num_args = 1..)]
        baseline: Vec<PathBuf>,
        /// Consistency checkpoint, one per enabled band.
        #[arg(long, required = true, num_args = 1..)]
        nc: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "sim")]
        mode: ModeArg,
    },
    /// Train and evaluate the lambda and delta sweeps.
    Sweep { config: PathBuf },
    /// Print the anchor-averaged tables of an evaluation directory.
    Report { run_dir: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BandArg {
    #[value(alias = "woofer")]
    W,
    #[value(alias = "tweeter")]
    T,
}

impl From<BandArg> for Band {
    fn from(b: BandArg) -> Self {
        match b {
            BandArg::W => Band::Woofer,
            BandArg::T => Band::Tweeter,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Sim,
    Meas,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sim => EvalMode::Sim,
            ModeArg::Meas => EvalMode::Meas,
        }
    }
}

/// Exit status per error category so scripts can tell failures apart.
fn exit_code(err: &PszError) -> u8 {
    match err.category() {
        "config" => 2,
        "io" => 3,
        "checkpoint" => 4,
        "geometry" => 5,
        "numerical" => 6,
        _ => 7,
    }
}

fn load(path: &PathBuf, output_dir: Option<PathBuf>) -> Result<ExperimentConfig, PszError> {
    Ok(ExperimentConfig::load(path)?.with_output_dir(output_dir))
}

fn run(cli: Cli) -> Result<(), PszError> {
    match cli.command {
        Command::Train {
            config,
            band,
            lambda,
            delta,
        } => {
            let cfg = load(&config, cli.output_dir)?;
            let art = run_train(&cfg, band.into(), lambda, delta, |row| {
                eprintln!("step {:>6}  total {:.6}  nc {:.3e}  mask {:.2}", row.step, row.total, row.nc, row.mask_rate);
            })?;
            println!("checkpoint {}", art.checkpoint.display());
            println!("log {}", art.log.display());
        }
        Command::Eval {
            config,
            baseline,
            nc,
            mode,
        } => {
            let cfg = load(&config, cli.output_dir)?;
            let (dir, _) = run_eval(&cfg, mode.into(), &baseline, &nc)?;
            println!("report {}", dir.display());
        }
        Command::Sweep { config } => {
            let cfg = load(&config, cli.output_dir)?;
            let out = run_sweep(&cfg, |msg| eprintln!("{msg}"))?;
            println!("sweep {}", out.dir.join(psz_core::experiment::SWEEP_CSV).display());
        }
        Command::Report { run_dir } => print!("{}", run_report(&run_dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
