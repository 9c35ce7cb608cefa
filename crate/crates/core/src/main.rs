use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{error, info};

use afree_lab::report::{exit_code, RunReport, EXIT_CONFIG};
use afree_lab::run::{run, Command, RunConfig};
use afree_lab::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "afree-lab", version, about = "Spectral experiments for homogenization of A-free fields in thin films")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON run configuration; missing fields take documented defaults.
    #[arg(long, global = true, env = "AFREE_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory for report.json and CSV tables.
    #[arg(long, global = true, env = "AFREE_OUT", default_value = "afree-out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true, env = "AFREE_SEED")]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "AFREE_THREADS", default_value_t = 0)]
    threads: usize,
    /// Log progress to stderr.
    #[arg(long, short, global = true, env = "AFREE_VERBOSE")]
    verbose: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Certify constant rank, normalization and the limit operator.
    OperatorCheck,
    /// Solve cell problems for the configured density.
    Homogenize,
    /// Nonlocality experiment for alpha <= 1.
    Counterexample,
    /// Localization rate for alpha > 1.
    Localize,
    /// Recovery-sequence construction for alpha > 1.
    Recovery,
    /// Sweep over alpha across both regimes.
    Sweep,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::OperatorCheck => Command::OperatorCheck,
            Cmd::Homogenize => Command::Homogenize,
            Cmd::Counterexample => Command::Counterexample,
            Cmd::Localize => Command::Localize,
            Cmd::Recovery => Command::Recovery,
            Cmd::Sweep => Command::Sweep,
        }
    }
}

fn execute(cli: &Cli) -> Result<RunReport> {
    let command = Command::from(cli.command);
    let (mut cfg, base) = match &cli.config {
        Some(path) => {
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (RunConfig::load(path)?, base)
        }
        None => (RunConfig::minimal(command), PathBuf::from(".")),
    };
    if cfg.command != command {
        return Err(Error::Config(format!(
            "config is for `{}` but `{}` was requested",
            cfg.command.name(),
            command.name()
        )));
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    info!("running {} with seed {}", command.name(), cfg.seed);
    let report = run(&cfg, &base)?;
    for path in report.write(&cli.out)? {
        info!("wrote {}", path.display());
    }
    Ok(report)
}

fn main() {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = execute(&cli);
    match &outcome {
        Ok(rep) => {
            for c in &rep.invariants {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            for c in rep.failures() {
                error!("invariant `{}` failed ({})", c.name, c.invariant);
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    let code = exit_code(&outcome);
    std::process::exit(if outcome.is_err() && code == 0 { EXIT_CONFIG } else { code });
}
