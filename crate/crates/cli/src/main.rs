//! `adaseg`: synthesize datasets, train and evaluate segmentation models with
//! incomplete annotations, and compare methods.

mod commands;
mod config;
mod record;
mod svg;

use std::process::ExitCode;

use clap::Parser;

use crate::commands::Cli;

/// A bad flag, config value or argument combination.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

macro_rules! usage {
    ($($arg:tt)+) => {
        anyhow::Error::new($crate::UsageError(format!($($arg)+)))
    };
}
pub(crate) use usage;

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.is::<UsageError>()
            || cause.downcast_ref::<adaseg::Error>().is_some_and(adaseg::Error::is_validation)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
