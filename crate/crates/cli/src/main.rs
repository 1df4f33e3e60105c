//! `sculpt`: train base models and classifiers, compose, evaluate and plot.

mod config;
mod error;
mod gaussian;
mod grid;
mod image;
mod layout;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Domain, ExperimentConfig};
use error::{CliError, CliResult};
use layout::Layout;

#[derive(Parser, Debug)]
#[command(name = "sculpt", version, about = "Compose generative models by classifier guidance")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the configured compose expression.
    #[arg(long, global = true)]
    expr: Option<String>,

    /// Overrides the configured guidance scale (diffusion only).
    #[arg(long, global = true)]
    guidance_scale: Option<f64>,

    /// Worker threads for data-parallel work.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Train the base models and write their checkpoints and metrics.
    TrainBase,
    /// Train one classifier per guidance stage of the expression.
    TrainClassifier,
    /// Realize the expression and write its distribution or samples.
    Compose,
    /// Write metrics JSON against the ground truth.
    Evaluate,
    /// Write heatmaps and density overlays.
    Report,
}

fn load(cli: &Cli) -> CliResult<(ExperimentConfig, Layout)> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if let Some(expr) = &cli.expr {
        cfg.expr = Some(expr.clone());
    }
    if let Some(scale) = cli.guidance_scale {
        cfg.guidance_scale = scale;
    }
    cfg.validate()?;
    let out = cfg.out.clone().ok_or_else(|| CliError::Config("no output directory (`out` or --out)".into()))?;
    Ok((cfg, Layout::new(&out)))
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let (cfg, layout) = load(cli)?;
    std::fs::create_dir_all(layout.root())?;
    let grid = cfg.domain == Domain::Grid;
    match (cli.command, grid) {
        (Command::TrainBase, true) => grid::train_bases(&cfg, &layout),
        (Command::TrainBase, false) => gaussian::train_bases(&cfg, &layout),
        (Command::TrainClassifier, true) => grid::train_classifiers(&cfg, &layout),
        (Command::TrainClassifier, false) => gaussian::train_classifier(&cfg, &layout),
        (Command::Compose, true) => grid::compose(&cfg, &layout),
        (Command::Compose, false) => gaussian::compose(&cfg, &layout),
        (Command::Evaluate, true) => grid::evaluate(&cfg, &layout),
        (Command::Evaluate, false) => gaussian::evaluate(&cfg, &layout),
        (Command::Report, true) => grid::report(&cfg, &layout),
        (Command::Report, false) => gaussian::report(&cfg, &layout),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
