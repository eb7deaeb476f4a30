//! Library half of the `avar` binary, shared with its tests.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::io::Write;

use avar_core::Exec;
use clap::Parser;

/// Parses `argv` and runs the command, returning the process exit code.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let parsed = match cli::Cli::try_parse_from(argv) {
        Ok(p) => p,
        Err(e) => {
            let code = if e.use_stderr() { error::USAGE } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let mut ctx = commands::Ctx {
        exec: if parsed.sequential { Exec::Sequential } else { Exec::Parallel },
        out,
    };
    match commands::run(&parsed.command, &mut ctx) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code
        }
    }
}
