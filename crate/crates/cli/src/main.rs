use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use relaylab_core::config::COMMANDS;
use relaylab_core::harness;
use relaylab_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Generate,
    PcaFit,
    DbBuild,
    Rollout,
    Evaluate,
    #[value(name = "ablate-2x2")]
    Ablate2x2,
    AblateOracle,
    AblateDbsize,
    AblateRide,
    AblateHorizon,
    AblateHistory,
    ExportCsv,
}

impl Command {
    fn name(self) -> String {
        self.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
    }
}

/// Analogue relay forecasting experiments on 2D Navier-Stokes data.
#[derive(Debug, Parser)]
#[command(name = "relaylab", version)]
struct Args {
    command: Command,

    /// Configuration file (`key = value`, sections per command).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Seed for generation (`generate`) or the bootstrap (other commands).
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,

    /// Record deterministic mode in the resolved config.
    #[arg(long)]
    deterministic: bool,

    /// Extra `key=value` settings, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn run(args: &Args) -> relaylab_core::Result<String> {
    let command = args.command.name();
    debug_assert!(COMMANDS.contains(&command.as_str()));
    let mut overrides: Vec<(String, String)> = Vec::new();
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = args.seed {
        let key = if args.command == Command::Generate { "seed" } else { "boot_seed" };
        overrides.push((key.into(), seed.to_string()));
    }
    if let Some(n) = args.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
        overrides.push(("workers".into(), n.to_string()));
    }
    if args.deterministic {
        overrides.push(("deterministic".into(), "true".into()));
    }
    let borrowed: Vec<(&str, String)> = overrides.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    let report = harness::run_with_config(&command, args.config.as_deref(), &borrowed)?;
    let mut out = report.summary;
    if !out.ends_with('\n') {
        out.push('\n');
    }
    for p in &report.outputs {
        out.push_str(&format!("wrote {}\n", p.display()));
    }
    out.push_str(&format!("config_hash {}\n", report.config_hash));
    Ok(out)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error kind={} command={} message={message}", e.kind(), args.command.name());
            ExitCode::from(2)
        }
    }
}
