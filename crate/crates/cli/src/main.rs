mod args;
mod commands;
mod error;
mod settings;

use std::io::Read;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::args::Cli;
use crate::error::CliError;
use crate::settings::{defaults, read_config, resolve, Settings};

fn sha256_file(path: &Path) -> std::io::Result<(String, u64)> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let k = file.read(&mut buf)?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
        bytes += k as u64;
    }
    let hex = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok((hex, bytes))
}

fn env_seed() -> Result<Settings, CliError> {
    match std::env::var("MDA_SEED") {
        Ok(v) => {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("MDA_SEED is not an unsigned integer: {v:?}")))?;
            Ok(Settings {
                seed: Some(seed),
                ..Settings::default()
            })
        }
        Err(_) => Ok(Settings::default()),
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let command = cli.command();
    let mut layers = vec![("command line", cli.settings())];
    if let Some(path) = &cli.config {
        layers.push(("config file", read_config(path)?));
    }
    layers.push(("MDA_SEED", env_seed()?));
    layers.push(("defaults", defaults(command)));
    let mut settings = resolve(command, &layers)?;

    init_logging(settings.verbose.unwrap_or(0));
    let threads = settings.threads.unwrap_or(1);
    if threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;

    let started = Instant::now();
    let outcome = commands::run(command, &mut settings)?;
    let artifacts = outcome
        .artifacts
        .iter()
        .map(|p| {
            let (sha256, bytes) = sha256_file(p)?;
            Ok(json!({ "path": p, "sha256": sha256, "bytes": bytes }))
        })
        .collect::<std::io::Result<Vec<Value>>>()?;
    let summary = json!({
        "command": command.name(),
        "run_config": settings,
        "result": outcome.result,
        "artifacts": artifacts,
        "wall_time_ms": started.elapsed().as_secs_f64() * 1e3,
    });
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    match &settings.summary {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Runtime(format!("writing summary {}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mda: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
