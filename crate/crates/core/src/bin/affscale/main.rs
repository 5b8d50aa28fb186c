//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or file-format failure, 2 invalid input,
//! 3 failed verification.

mod args;
mod commands;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use affscale::verify::RunReport;
use affscale::Error;

use args::{Cli, Command};

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Format(_) => 1,
        _ => 2,
    }
}

fn emit(report: &RunReport, cli: &Cli) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    match &cli.report {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let parameters = match &cli.command {
        Command::Kernel(a) => json!({ "command": "kernel", "args": a }),
        Command::Smooth(a) => json!({ "command": "smooth", "args": a }),
        Command::Derive(a) => json!({ "command": "derive", "args": a }),
        Command::Pyramid(a) => json!({ "command": "pyramid", "args": a }),
        Command::Bank(a) => json!({ "command": "bank", "args": a }),
        Command::Verify(a) => json!({ "command": "verify", "args": a }),
    };
    let mut report = RunReport::new(argv, parameters);
    let outcome = match &cli.command {
        Command::Kernel(a) => commands::kernel(a, &mut report),
        Command::Smooth(a) => commands::smooth(a, &mut report),
        Command::Derive(a) => commands::derive(a, &mut report),
        Command::Pyramid(a) => commands::pyramid(a, &mut report),
        Command::Bank(a) => commands::bank(a, &mut report),
        Command::Verify(a) => commands::verify(a, &mut report),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e));
    }
    if cli.no_timing {
        report.strip_timing();
    }
    if let Err(e) = emit(&report, &cli) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    if matches!(cli.command, Command::Verify(_)) && !report.all_passed() {
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
