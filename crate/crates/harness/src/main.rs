use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfrl::{emit_curves, gen_class, run_experiment, ExperimentConfig, HarnessError, Mode};

#[derive(Parser)]
#[command(name = "mfrl", version, about = "Mean-field reinforcement learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; MFRL_OUT takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for replicates (0 = one per core).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Optimistic control learner.
    RunMfc(Common),
    /// Game learner.
    RunMfg(Common),
    /// Probe-based eluder dimension estimates.
    EluderDim(Common),
    /// Model-difference inequality checks.
    CheckBounds(Common),
    /// Equilibrium of the true model.
    NeSolve(Common),
    /// Write a generated model class.
    GenClass(Common),
    /// Merge trace CSVs into one long-format CSV.
    EmitCurves {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = std::env::var_os("MFRL_OUT").filter(|v| !v.is_empty()) {
        return PathBuf::from(dir);
    }
    common.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("mfrl-out"))
}

fn report(config: Option<&Path>, err: &HarnessError) -> ExitCode {
    match (err, config) {
        (HarnessError::Config(e), Some(path)) => eprintln!("{}:{}: {}", path.display(), e.line, e.message),
        _ => eprintln!("error: {err}"),
    }
    ExitCode::from(err.exit_code() as u8)
}

fn run(common: &Common, mode: Option<Mode>) -> Result<i32, HarnessError> {
    let mut cfg = ExperimentConfig::from_file(&common.config)?;
    let dir = out_dir(common, &cfg);
    let Some(mode) = mode else {
        let path = gen_class(&cfg, common.seed, &dir)?;
        println!("{}", path.display());
        return Ok(0);
    };
    cfg.resolve_mode(Some(mode))?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    let report = run_experiment(&cfg, &dir, common.jobs)?;
    for f in &report.files {
        println!("{}", dir.join(f).display());
    }
    if !report.checks_passed {
        eprintln!("one or more checks failed; see {}", dir.join("summary.json").display());
    }
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, mode) = match &cli.command {
        Command::RunMfc(c) => (c, Some(Mode::Mfc)),
        Command::RunMfg(c) => (c, Some(Mode::Mfg)),
        Command::EluderDim(c) => (c, Some(Mode::Eluder)),
        Command::CheckBounds(c) => (c, Some(Mode::Bounds)),
        Command::NeSolve(c) => (c, Some(Mode::Ne)),
        Command::GenClass(c) => (c, None),
        Command::EmitCurves { out, traces } => {
            let paths: Vec<&Path> = traces.iter().map(PathBuf::as_path).collect();
            return match emit_curves(&paths, out) {
                Ok(n) => {
                    println!("{n} rows -> {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => report(None, &e),
            };
        }
    };
    match run(common, mode) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => report(Some(&common.config), &e),
    }
}
