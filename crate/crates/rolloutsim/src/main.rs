use clap::{Parser, Subcommand};
use rolloutsim::cli::{cmd_report, cmd_run, cmd_sweep};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rolloutsim",
    about = "Deterministic simulator for RL rollout scheduling strategies",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every mode in a config and write run artifacts.
    Run {
        /// Path to the flat key-value config file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: $ROLLOUTSIM_OUT or ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the step-level event trace (events.jsonl).
        #[arg(long)]
        trace: bool,
    },
    /// Run one simulation per axis value with derived seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Config field to vary (e.g. scheduler.group_size_n).
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values (e.g. 1,2,4,8).
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trace: bool,
        /// Sweep points executed concurrently.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Re-render a comparison table from stored artifacts.
    Report {
        /// Run directories (or parents of run directories).
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

fn resolve_out(out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os("ROLLOUTSIM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, trace } => cmd_run(&config, &resolve_out(out), trace),
        Command::Sweep { config, axis, values, out, trace, threads } => {
            let values: Vec<String> =
                values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
            cmd_sweep(&config, &axis, &values, &resolve_out(out), trace, threads)
        }
        Command::Report { dirs } => cmd_report(&dirs),
    };
    match result {
        Ok(table) => {
            print!("{table}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
