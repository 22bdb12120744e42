use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use forkfed_core::dag::{export_dot, load_snapshot};
use forkfed_core::harness::{
    preview_partition, read_metrics, report, run_experiment, ExperimentConfig, METRICS_FILE,
    MODEL_STORE_DIR,
};
use forkfed_core::protocol::Mode;

#[derive(Parser)]
#[command(
    name = "forkfed",
    version,
    about = "Decentralized federated learning with model forks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run {
        config: PathBuf,
        /// Single global model, every update aggregated.
        #[arg(long)]
        baseline: bool,
        /// Output directory. Defaults to `output` from the config, then `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the learner-by-class histogram of the configured partition.
    PreviewPartition { config: PathBuf },
    /// Convert a DAG snapshot to another format.
    ExportDag {
        snapshot: PathBuf,
        /// Emit Graphviz DOT.
        #[arg(long)]
        dot: bool,
    },
    /// Summarize a metrics file.
    Report { metrics: PathBuf },
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| {
        format!("cannot open {}", path.display())
    })?))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            baseline,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out
                .or_else(|| cfg.output.as_ref().map(|o| cfg.base_dir.join(o)))
                .unwrap_or_else(|| PathBuf::from("out"));
            let mode = if baseline {
                Mode::Baseline
            } else {
                Mode::Confederated
            };
            let result = run_experiment(&cfg, mode, Some(&out))?;
            print!("{}", report(&result.rows));
            eprintln!("artifacts written to {}", out.display());
        }
        Command::PreviewPartition { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            preview_partition(&cfg, std::io::stdout().lock())?;
        }
        Command::ExportDag { snapshot, dot } => {
            if !dot {
                bail!("no output format given; pass --dot");
            }
            let store = snapshot.parent().map(|p| p.join(MODEL_STORE_DIR));
            let dag = load_snapshot(open(&snapshot)?, store.as_deref())
                .with_context(|| format!("invalid snapshot {}", snapshot.display()))?;
            print!("{}", export_dot(&dag));
        }
        Command::Report { metrics } => {
            let rows = read_metrics(open(&metrics)?)
                .with_context(|| format!("invalid {METRICS_FILE} at {}", metrics.display()))?;
            print!("{}", report(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
