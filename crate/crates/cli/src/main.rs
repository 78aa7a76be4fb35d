//! Batch front-end for the workbench. Every subcommand reads one TOML
//! config, writes its artifacts under the output directory, and echoes the
//! resolved config (plus its hash) into every file it emits, so a run can be
//! replayed from any artifact. Exit codes: 0 success, 1 verification
//! failure, 2 config error, 3 numerical failure.

mod commands;
mod config;
mod error;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "parasource", version, about = "Spectral workbench driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file (TOML). Defaults are used when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory; overrides the config's output_dir.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Base random seed; overrides the config's experiment.seed.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// Worker threads for ensembles; 0 keeps the machine default.
    #[arg(long, global = true, value_name = "INT", default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the forward problem and write solution and observation files.
    Forward,
    /// Run the invariant suite and report the measured constants.
    Verify,
    /// Sweep the weighted-inequality ratios over s_c and solution amplitude.
    CarlemanScan,
    /// Reconstruct the source from synthetic observations.
    Reconstruct,
    /// Fit the stability exponent on a noise ladder.
    Kappa,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = config::load(cli.config.as_deref())?;
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
    }
    if cli.threads > 0 {
        // A later global-pool build fails harmlessly when one exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }

    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", cfg.output_dir.display())))?;

    // The resolved config is the single reference for every default in play.
    let resolved = toml::to_string_pretty(&cfg)
        .map_err(|e| CliError::Config(format!("config echo: {e}")))?;
    fs::write(cfg.output_dir.join("config.resolved.toml"), resolved)
        .map_err(|e| CliError::Config(format!("{}: {e}", cfg.output_dir.display())))?;
    let echo = parasource_core::report::canonical_json(&cfg)?;
    info!("output directory: {}", cfg.output_dir.display());

    match cli.command {
        Command::Forward => commands::forward::run(&cfg, &echo),
        Command::Verify => commands::verify::run(&cfg, &echo),
        Command::CarlemanScan => commands::carleman_scan::run(&cfg, &echo),
        Command::Reconstruct => commands::reconstruct::run(&cfg, &echo),
        Command::Kappa => commands::kappa::run(&cfg, &echo),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
