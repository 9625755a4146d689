//! Command-line entry point: loads a JSON configuration, applies overrides,
//! and dispatches the train / eval / forward task.
//!
//! Exit codes: 0 success, 1 runtime failure (non-finite loss, worker abort,
//! I/O during a job), 2 usage or configuration errors.

use std::path::PathBuf;

use clap::Parser;

use crate::config::{parse_config_with_overrides, Task};
use crate::engine::{run_eval, run_forward, run_training, Logger, Verbosity};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "seqtrain", version, about = "Sequence-learning trainer for recurrent networks")]
pub struct CliArgs {
    /// JSON configuration file; experiment keys at the top level, the
    /// network under "network"
    pub config: PathBuf,

    /// Override the task from the config (train, eval, forward)
    #[arg(long)]
    pub task: Option<String>,

    /// Override a config key, repeatable; dotted keys descend into nested
    /// objects (e.g. --set optimizer.lr=0.001)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Log verbosity
    #[arg(long, value_parser = ["info", "debug"], default_value = "info")]
    pub verbosity: String,

    /// Directory for checkpoints, logs, and activation dumps
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

fn overrides_from(args: &CliArgs) -> Result<Vec<(String, String)>> {
    let mut overrides = Vec::with_capacity(args.set.len() + 1);
    for entry in &args.set {
        let (k, v) = entry.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects KEY=VALUE, got {:?}", entry))
        })?;
        if k.is_empty() {
            return Err(Error::Config(format!("--set has an empty key in {:?}", entry)));
        }
        overrides.push((k.to_string(), v.to_string()));
    }
    if let Some(task) = &args.task {
        overrides.push(("task".to_string(), task.clone()));
    }
    Ok(overrides)
}

/// Runs the tool; errors bubble up for exit-code mapping.
pub fn run(args: &CliArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read config {}: {}", args.config.display(), e)))?;
    let overrides = overrides_from(args)?;
    let cfg = parse_config_with_overrides(&text, &overrides)?;

    let level = match args.verbosity.as_str() {
        "debug" => Verbosity::Debug,
        _ => Verbosity::Info,
    };

    match cfg.task {
        Task::Train => {
            std::fs::create_dir_all(&args.out_dir)
                .map_err(|e| Error::io(args.out_dir.display().to_string(), e))?;
            let logger = Logger::new(level, Some(&args.out_dir.join("train.log")))?;
            run_training(&cfg, &args.out_dir, &logger)?;
        }
        Task::Eval => {
            let logger = Logger::new(level, None)?;
            run_eval(&cfg, &logger)?;
        }
        Task::Forward => {
            std::fs::create_dir_all(&args.out_dir)
                .map_err(|e| Error::io(args.out_dir.display().to_string(), e))?;
            let logger = Logger::new(level, None)?;
            run_forward(&cfg, &args.out_dir, &logger)?;
        }
    }
    Ok(())
}

/// Parses argv and maps errors to exit codes.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match CliArgs::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            // clap prints its own message; --help/--version are successes
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("seqtrain: {}", e);
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}
