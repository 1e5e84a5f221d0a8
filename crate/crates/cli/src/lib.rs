//! Command-line front end. [`run`] parses arguments, merges an optional
//! `key = value` config file under them, and dispatches.

mod args;
mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, CommandFactory, FromArgMatches};
use sparge_core::data_io::{config::normalize_key, read_key_values};
use sparge_core::{Result, SpargeError};

pub use args::Cli;

/// Success.
pub const EXIT_OK: i32 = 0;
/// Bad usage, input or parameters.
pub const EXIT_VALIDATION: i32 = 1;
/// The numerics failed.
pub const EXIT_NUMERICAL: i32 = 2;

/// Config keys with these prefixes are read by the commands themselves.
const TABLE_PREFIXES: [&str; 2] = ["encode.", "impute."];

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let matches = match parse(&argv) {
        Ok(m) => m,
        Err(code) => return code,
    };
    let outcome = with_config(argv, &matches).and_then(|(matches, pairs)| {
        let cli = Cli::from_arg_matches(&matches).map_err(|e| SpargeError::Config(e.to_string()))?;
        commands::dispatch(cli.command, &pairs)
    });
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_VALIDATION
            }
        }
    }
}

fn parse(argv: &[OsString]) -> std::result::Result<ArgMatches, i32> {
    Cli::command().try_get_matches_from(argv).map_err(|e| {
        let _ = e.print();
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
            _ => EXIT_VALIDATION,
        }
    })
}

/// Re-parse with every config entry that the command line did not set
/// appended as a flag, so flags always win.
fn with_config(mut argv: Vec<OsString>, matches: &ArgMatches) -> Result<(ArgMatches, Vec<(String, String)>)> {
    let Some((name, sub)) = matches.subcommand() else {
        return Ok((matches.clone(), Vec::new()));
    };
    let Some(path) = sub.get_one::<PathBuf>("config") else {
        return Ok((matches.clone(), Vec::new()));
    };
    let pairs = read_key_values(path)?;
    let command = Cli::command();
    let spec = command.find_subcommand(name).expect("parsed subcommand exists");
    for (key, value) in &pairs {
        if TABLE_PREFIXES.iter().any(|p| key.starts_with(p)) {
            continue;
        }
        let id = normalize_key(key);
        let arg = spec
            .get_arguments()
            .find(|a| a.get_id().as_str() == id && a.get_long().is_some())
            .ok_or_else(|| SpargeError::Config(format!("unknown config key {key:?} for `{name}`")))?;
        if id == "config" {
            return Err(SpargeError::Config("config files cannot include other config files".into()));
        }
        if sub.value_source(&id) == Some(ValueSource::CommandLine) {
            continue;
        }
        let long = arg.get_long().expect("checked above");
        match arg.get_action() {
            ArgAction::SetTrue => {
                let on: bool = value
                    .parse()
                    .map_err(|_| SpargeError::Config(format!("{key} must be true or false (got {value:?})")))?;
                if on {
                    argv.push(format!("--{long}").into());
                }
            }
            _ => argv.push(format!("--{long}={value}").into()),
        }
    }
    let merged = Cli::command()
        .try_get_matches_from(&argv)
        .map_err(|e| SpargeError::Config(format!("config file {}: {e}", path.display())))?;
    Ok((merged, pairs))
}
