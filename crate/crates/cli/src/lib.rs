//! Command-line driver and HTTP service for the omnitraj engine.

pub mod app;
pub mod layout;
pub mod service;
pub mod snapshot;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

pub use app::Cli;
pub use snapshot::Snapshot;

/// Exit status for bad flags or subcommands.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for data, configuration and runtime failures.
pub const EXIT_FAILURE: i32 = 1;

/// Parses `args` and runs the subcommand, reporting failures as one JSON
/// line on stderr. Returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let first = e.to_string();
            let message = first.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("{}", json!({"error": "usage", "message": message}));
            return EXIT_USAGE;
        }
    };
    match app::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            EXIT_FAILURE
        }
    }
}
