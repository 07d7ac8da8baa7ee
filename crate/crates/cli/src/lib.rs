//! The `rauq` command-line tool.
//!
//! Exit codes: 0 on success, 1 when `validate` finds invalid records, 2 on
//! any hard error (bad flags, unreadable or invalid input).

pub mod args;
mod commands;
mod io;

use std::io::Write;

pub use args::Cli;
use args::Command;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

/// Runs one subcommand and returns the process exit code. Diagnostics go to
/// `stderr`; results go to the `--out` file or `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Validate { traces } => commands::validate(&traces, stdout),
        Command::Score(a) => commands::score(&a, stdout).map(|()| EXIT_OK),
        Command::Eval(a) => commands::eval(&a, stdout).map(|()| EXIT_OK),
        Command::Ablate(a) => commands::ablate(&a, stdout).map(|()| EXIT_OK),
        Command::Analyze(a) => commands::analyze(&a, stdout, stderr).map(|()| EXIT_OK),
        Command::Synth(a) => commands::synth(&a, stdout).map(|()| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            EXIT_ERROR
        }
    }
}
