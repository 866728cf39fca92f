mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, Format};
use commands::{Failure, Report};

fn main() -> ExitCode {
    let mut cli = Cli::parse();
    let filter = match cli.command {
        Command::Serve | Command::RuntimeHost { .. } => "info",
        _ => "warn",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(filter)),
        )
        .init();

    for path in [&mut cli.catalog, &mut cli.topology, &mut cli.data_root] {
        if let Ok(abs) = std::path::absolute(&*path) {
            *path = abs;
        }
    }
    let format = cli.output;
    let outcome = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt.block_on(commands::run(cli)),
        Err(e) => Err(Failure::Io(format!("cannot start async runtime: {e}"))),
    };
    finish(format, outcome)
}

fn finish(format: Format, outcome: Result<Report, Failure>) -> ExitCode {
    match outcome {
        Ok(report) => {
            match format {
                Format::Text => {
                    if !report.text.is_empty() {
                        println!("{}", report.text.trim_end());
                    }
                }
                Format::Json => println!("{}", report.json),
            }
            match report.error {
                Some(message) => {
                    eprintln!("error: {message}");
                    ExitCode::from(1)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            if format == Format::Json {
                println!("{}", serde_json::json!({"error": failure.message()}));
            }
            ExitCode::from(failure.code())
        }
    }
}
