mod commands;

use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Build tool for script-based analysis pipelines.
#[derive(Debug, Parser)]
#[command(name = "stepline", version)]
struct Cli {
    /// Pipeline manifest.
    #[arg(long, global = true, default_value = "pipeline.toml")]
    manifest: PathBuf,
    /// Commands run at once [default: host parameter `n_jobs`, else 1].
    #[arg(long, global = true)]
    jobs: Option<NonZeroUsize>,
    /// Where HTML reports go [default: `reports/` next to the manifest].
    #[arg(long, global = true)]
    report_dir: Option<PathBuf>,
    /// More log output on stderr; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Default, Args)]
struct Selection {
    /// Only this task (repeatable).
    #[arg(long = "task", value_name = "NAME")]
    tasks: Vec<String>,
    /// Only this recording (repeatable).
    #[arg(long = "recording", value_name = "ID")]
    recordings: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every instance that is not up to date, then refresh reports.
    Run {
        #[command(flatten)]
        selection: Selection,
        /// Print the plan without running anything.
        #[arg(long)]
        dry_run: bool,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Show whether each instance is up to date.
    Status {
        #[command(flatten)]
        selection: Selection,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// List tasks, or instances with `--instances`.
    List {
        #[command(flatten)]
        selection: Selection,
        #[arg(long)]
        instances: bool,
    },
    /// Emit the dependency graph in dot format.
    Graph {
        /// Write to FILE instead of stdout.
        #[arg(short, long, value_name = "FILE")]
        output: Option<PathBuf>,
        /// One node per instance instead of per task.
        #[arg(long)]
        instances: bool,
    },
    /// Write HTML reports.
    Report {
        /// Only this recording's report (repeatable); the aggregate report is always written.
        #[arg(long = "recording", value_name = "ID")]
        recordings: Vec<String>,
    },
    /// Check the pipeline against the layout and naming rules.
    Lint {
        /// Directory holding the scripts [default: the manifest's directory].
        #[arg(long)]
        script_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Line counts of the numbered step and figure scripts.
    Stats {
        /// Directory holding the scripts [default: the manifest's directory].
        #[arg(long)]
        script_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Drop recorded fingerprints so the selected instances run again.
    Forget {
        #[command(flatten)]
        selection: Selection,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("stepline: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
