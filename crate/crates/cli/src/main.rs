mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{expand_config, Cli, Command};
use commands::UsageError;

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Report(a) => commands::report(a),
        Command::Validate(a) => commands::validate(a),
        Command::BinBlocks(a) => commands::bin_blocks(a),
        Command::FreqReport(a) => commands::freq_report(a),
        Command::Enumerate(a) => commands::enumerate(a),
        Command::TrainNgram(a) => commands::train(a),
    }
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| {
            if let Some(e) = e.downcast_ref::<tokmarg::Error>() {
                Some(e.kind())
            } else if e.is::<std::io::Error>() {
                Some("io")
            } else {
                e.is::<serde_json::Error>().then_some("json")
            }
        })
        .unwrap_or("error")
}

fn main() -> ExitCode {
    let argv = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            let record = serde_json::json!({ "error": error_kind(&e), "message": format!("{e:#}") });
            eprintln!("{record}");
            ExitCode::from(1)
        }
    }
}
