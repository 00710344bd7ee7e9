//! tdsim: end-to-end driver for the news-intrusion experiments.
//!
//! Every command reads one TOML config, writes its outputs plus a run
//! manifest under the output directory, and exits 0 on success, 2 on
//! config errors, 3 on data errors, 4 on numerical failures.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tdsim_core::config::{load_config, ExperimentConfig};

#[derive(Parser)]
#[command(name = "tdsim", version, about = "News-intrusion experiment driver")]
struct Cli {
    /// Experiment config file.
    #[arg(long, global = true, env = "TD_CONFIG", default_value = "tdsim.toml")]
    config: PathBuf,

    /// Override every section seed with one value.
    #[arg(long, global = true, env = "TD_SEED")]
    seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long, global = true, env = "TD_OUT")]
    out: Option<PathBuf>,

    /// Worker threads for evaluation fan-out (default: all cores).
    #[arg(long, global = true, env = "TD_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build train/validation/test impression files and a stats table.
    BuildData,
    /// Train the configured variant (grid search when lr_grid is set).
    Train,
    /// Run the configured phase and emit metric/RRA reports.
    Phase,
    /// Run the configured phase over the t grid and emit series CSVs.
    Sweep,
    /// Emit similarity, perplexity, and rank-correlation reports.
    Analyze,
    /// Summarize previously emitted reports into one table.
    Report,
}

fn run(cli: Cli) -> tdsim_core::Result<()> {
    if let Some(n) = cli.threads {
        // A second init (tests, repeated calls) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let mut cfg: ExperimentConfig = load_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let ctx = commands::Ctx { cfg, out };
    match cli.command {
        Command::BuildData => commands::cmd_build_data(&ctx),
        Command::Train => commands::cmd_train(&ctx),
        Command::Phase => commands::cmd_phase(&ctx),
        Command::Sweep => commands::cmd_sweep(&ctx),
        Command::Analyze => commands::cmd_analyze(&ctx),
        Command::Report => commands::cmd_report(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
