mod boost;
mod config;
mod detect;
mod error;
mod report;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sheref_core::config::Method;

use crate::config::Overrides;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "sheref", version, about = "Change detection with FDR control on reconfigurable sensor networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte-Carlo replications; writes a metrics CSV and optional traces.
    Simulate(SimulateArgs),
    /// Streaming detection over line-delimited tick records.
    Detect(DetectArgs),
    /// Tabulates boosting factors over a grid.
    Boost(BoostArgs),
    /// Per-tick FDR paths from a directory of traces.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct CommonOverrides {
    #[arg(long)]
    alpha: Option<f64>,
    /// SHEREF, SHEREF-GD or SHEREF-TIPD.
    #[arg(long)]
    method: Option<Method>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    common: CommonOverrides,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write one JSON-lines trace per replication.
    #[arg(long)]
    traces: bool,
    /// Where traces go; defaults to `<out>.traces` or `./traces`.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Tick records, or a trace written by `simulate --traces`.
    input: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: CommonOverrides,
    #[arg(long)]
    seed: Option<u64>,
    /// Resume from a saved detector state.
    #[arg(long)]
    state_in: Option<PathBuf>,
    /// Save the detector state after the last record.
    #[arg(long)]
    state_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BoostArgs {
    /// Grid config with `grid.*` keys; built-in grid when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory searched recursively for `*.jsonl` traces.
    traces: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => {
            let ov = Overrides {
                alpha: a.common.alpha,
                method: a.common.method,
                reps: a.reps,
                seed: a.seed,
            };
            simulate::run(&a.config, &ov, a.out.as_deref(), a.traces, a.trace_dir)
        }
        Command::Detect(a) => {
            let ov = Overrides {
                alpha: a.common.alpha,
                method: a.common.method,
                reps: None,
                seed: a.seed,
            };
            detect::run(detect::DetectRequest {
                input: &a.input,
                config: a.config.as_deref(),
                overrides: &ov,
                state_in: a.state_in.as_deref(),
                state_out: a.state_out.as_deref(),
                out: a.out.as_deref(),
            })
        }
        Command::Boost(a) => {
            let ov = Overrides {
                alpha: a.alpha,
                ..Overrides::default()
            };
            boost::run(a.config.as_deref(), &ov, a.out.as_deref())
        }
        Command::Report(a) => report::run(&a.traces, a.out.as_deref()),
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

/// Buffered writer to `path`, or stdout.
pub(crate) fn open_output(path: Option<&std::path::Path>) -> Result<Box<dyn std::io::Write>, CliError> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            let f = std::fs::File::create(p).map_err(|e| CliError::io(p, e))?;
            Ok(Box::new(std::io::BufWriter::new(f)))
        }
        None => Ok(Box::new(std::io::BufWriter::new(std::io::stdout().lock()))),
    }
}
