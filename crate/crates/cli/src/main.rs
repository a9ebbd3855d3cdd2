mod commands;
mod config;
mod lock;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use streambench::analysis::Slice;
use streambench::Error;

use commands::PlotKind;

/// Environment variable naming the dataset cache root.
const CACHE_ENV: &str = "STREAMBENCH_CACHE";

#[derive(Parser)]
#[command(name = "streambench", version, about = "Compute-aware evaluation of learners over task streams")]
struct Cli {
    /// Dataset cache root [env: STREAMBENCH_CACHE]
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download, verify and prepare datasets from the descriptor list.
    Fetch {
        /// Descriptor ids; all when omitted.
        ids: Vec<String>,
        #[arg(long, default_value = "data/descriptors.json")]
        descriptors: PathBuf,
        /// Only download and verify.
        #[arg(long)]
        no_prepare: bool,
    },
    /// Inspect streams.
    Stream {
        #[command(subcommand)]
        command: StreamCommand,
    },
    /// Run the phase named in a config file.
    Run {
        config: PathBuf,
        /// Override a config value, e.g. `--set search.n_trials=4`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Stop after this many tasks, leaving a checkpoint.
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Continue an interrupted run from its output directory.
    Resume { output: PathBuf },
    /// Error and cFLOP tables over record logs, overall and per slice.
    Report {
        logs: Vec<PathBuf>,
        #[arg(long = "slice", value_enum)]
        slices: Vec<SliceArg>,
        /// Write report.csv and comparison.csv here instead of stdout.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Render an SVG figure.
    Plot {
        #[arg(value_enum)]
        kind: PlotArg,
        /// Record logs, summaries (pareto) or a transfer.json (transfer).
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Reference log for regret curves.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// `first=repeat` task-id pair for forward transfer.
        #[arg(long = "pair")]
        pairs: Vec<String>,
    },
}

#[derive(Subcommand)]
enum StreamCommand {
    /// List tasks of a config's stream, or the rows of a manifest.
    Info {
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SliceArg {
    Domain,
    Size,
    Resolution,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotArg {
    Pareto,
    Regret,
    Fwt,
    Transfer,
}

fn cache_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".cache").join("streambench")))
        .unwrap_or_else(|| PathBuf::from(".streambench-cache"))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Causality { .. } | Error::Revisit(_) => 3,
        Error::Io { .. }
        | Error::Manifest { .. }
        | Error::MissingTaskData { .. }
        | Error::Checksum { .. }
        | Error::Download { .. }
        | Error::Extraction { .. }
        | Error::InvalidTask(_)
        | Error::InvalidStream(_)
        | Error::Corrupt(_)
        | Error::Schema { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let cache = cache_root(cli.cache);

    let result = match cli.command {
        Command::Fetch { ids, descriptors, no_prepare } => commands::cmd_fetch(&descriptors, &ids, &cache, !no_prepare),
        Command::Stream { command: StreamCommand::Info { config: Some(c), overrides, .. } } => {
            commands::cmd_stream_info_config(&c, &overrides, &cache)
        }
        Command::Stream { command: StreamCommand::Info { manifest, .. } } => {
            commands::cmd_stream_info_manifest(&manifest.expect("clap enforces one of config/manifest"))
        }
        Command::Run { config, overrides, output, stop_after } => {
            commands::cmd_run(&config, &overrides, output, &cache, stop_after)
        }
        Command::Resume { output } => commands::cmd_resume(&output, &cache),
        Command::Report { logs, slices, out_dir } => {
            let slices: Vec<Slice> = slices
                .into_iter()
                .map(|s| match s {
                    SliceArg::Domain => Slice::Domain,
                    SliceArg::Size => Slice::Size,
                    SliceArg::Resolution => Slice::Resolution,
                })
                .collect();
            if logs.is_empty() {
                Err(Error::Config("report needs at least one record log".into()))
            } else {
                commands::cmd_report(&logs, &slices, out_dir.as_deref())
            }
        }
        Command::Plot { kind, inputs, out, reference, pairs } => {
            let kind = match kind {
                PlotArg::Pareto => PlotKind::Pareto,
                PlotArg::Regret => PlotKind::Regret { reference },
                PlotArg::Fwt => PlotKind::Fwt { pairs },
                PlotArg::Transfer => PlotKind::Transfer,
            };
            commands::cmd_plot(kind, &inputs, &out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Causality { cursor: 0, requested: 1 }), 3);
        assert_eq!(exit_code(&Error::Checksum { id: "a".into(), expected: "b".into(), actual: "c".into() }), 4);
        assert_eq!(exit_code(&Error::MissingTaskData { task: "a".into(), msg: String::new() }), 4);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
