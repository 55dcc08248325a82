//! Command-line and HTTP front ends for the recommender.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

pub mod app;
pub mod commands;
pub mod config;
pub mod service;

use std::ffi::OsString;

use clap::Parser;

pub use app::{App, CliError};
pub use config::{AppConfig, ConfigError};
pub use service::{router, AppState, Session};

use commands::{Cli, Command};

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let app = App::new(config, cli.script.clone());
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Eval(a) => commands::eval(&app, a, out),
        Command::Analyze(a) => commands::analyze(&app, a, out),
        Command::TrainGoal(a) => commands::train_goal(&app, a, out),
        Command::Retrieve(a) => commands::retrieve(&app, a, out),
        Command::Chat(a) => commands::chat(&app, a),
        Command::Serve(a) => commands::serve(&app, a),
    }
}
