use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod cmd;
mod config;
mod output;

use config::FileConfig;

#[derive(Debug, Parser)]
#[command(name = "carrier", version, about = "Biofeedback telemetry pipeline: simulate, ingest, analyze and report writing sessions")]
struct Cli {
    /// Session store directory [default: carrier-store]
    #[arg(long, global = true)]
    store: Option<PathBuf>,

    /// Machine-readable JSON on stdout
    #[arg(long, global = true)]
    json: bool,

    /// JSON config file; command-line flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More log output (repeatable)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic session files and a manifest
    Simulate(cmd::simulate::Args),
    /// Run the ingest service
    Serve(cmd::serve::Args),
    /// Stream a recorded file to an ingest service
    Replay(cmd::replay::Args),
    /// Metrics for one stored session
    Analyze(cmd::analyze::Args),
    /// Cross-session trends and the per-session CSV
    Aggregate(cmd::aggregate::Args),
    /// Post-session feedback report
    Report(cmd::report::Args),
    /// Seeded end-to-end run over loopback
    Selftest(cmd::selftest::Args),
}

pub struct Ctx {
    pub store: PathBuf,
    pub store_given: bool,
    pub json: bool,
    pub config: FileConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let store_given = cli.store.is_some() || config.store.is_some();
    let store = cli.store.or_else(|| config.store.clone()).unwrap_or_else(|| PathBuf::from("carrier-store"));
    let ctx = Ctx { store, store_given, json: cli.json, config };
    match cli.command {
        Command::Simulate(a) => cmd::simulate::run(&ctx, a),
        Command::Serve(a) => cmd::serve::run(&ctx, a),
        Command::Replay(a) => cmd::replay::run(&ctx, a),
        Command::Analyze(a) => cmd::analyze::run(&ctx, a),
        Command::Aggregate(a) => cmd::aggregate::run(&ctx, a),
        Command::Report(a) => cmd::report::run(&ctx, a),
        Command::Selftest(a) => cmd::selftest::run(&ctx, a),
    }
}
