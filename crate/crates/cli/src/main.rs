use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use cp_threshold::mc::Executor;
use cp_threshold_cli::{run_study, CliError, StudyConfig, EXIT_FLAGGED};

/// Monte Carlo studies of composite-coupler correlation thresholds.
#[derive(Debug, Parser)]
#[command(name = "cp-threshold", version)]
struct Args {
    /// Study configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this value.
    #[arg(long, env = "CP_THRESHOLD_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config sample count.
    #[arg(long)]
    samples: Option<usize>,
}

fn run(args: &Args) -> Result<u8, CliError> {
    let mut cfg = StudyConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(samples) = args.samples {
        cfg.samples = samples;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set output_dir".into()))?;
    let exec = Executor::new(args.workers).map_err(|e| CliError::Config(e.to_string()))?;
    let (artifacts, _) = run_study(&cfg, &out, &exec)?;
    println!("{}", artifacts.summary);
    if artifacts.flagged() {
        for f in &artifacts.output.flags {
            eprintln!("flag: {f}");
        }
        return Ok(EXIT_FLAGGED);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
