use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use setseq_cli::commands::{run, Cli};
use setseq_cli::{CliError, EXIT_USAGE};

fn fail(kind: &str, message: &str, code: i32) -> ExitCode {
    let body = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{}", body);
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim_end(), EXIT_USAGE),
    };
    let filter = EnvFilter::try_from_env("SETSEQ_LOG").unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), CliError::exit_code(&e)),
    }
}
