//! `speede`: synthesize scenes, prune, group, render and benchmark.

mod commands;
mod config;
mod model;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "speede",
    version,
    about = "Prune and group deformable Gaussian splatting models"
)]
struct Cli {
    /// Worker threads. Falls back to SPEEDE_THREADS, then to the core count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene bundle
    Synth(commands::synth::Args),
    /// Score and prune Gaussians on a schedule
    Prune(commands::prune::Args),
    /// Fit per-group rigid flows
    Group(commands::group::Args),
    /// Sample a model's mean trajectories
    Deform(commands::deform::Args),
    /// Render a model from the bundle cameras
    Render(commands::render::Args),
    /// Image quality of a model against ground truth
    Eval(commands::eval::Args),
    /// Time deformation plus rendering for several models
    Bench(commands::bench::Args),
    /// Grouping over a range of group counts
    Sweep(commands::sweep::Args),
}

/// Marks errors caused by bad flags or configuration (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|e| {
        e.downcast_ref::<UsageError>().is_some()
            || matches!(
                e.downcast_ref::<speede::Error>(),
                Some(speede::Error::Config(_))
            )
    });
    if usage {
        2
    } else {
        1
    }
}

fn thread_count(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("SPEEDE_THREADS") {
        Ok(v) => {
            v.trim().parse().map(Some).map_err(|_| {
                UsageError(format!("SPEEDE_THREADS={v:?} is not a thread count")).into()
            })
        }
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::Synth(a) => commands::synth::run(a),
        Command::Prune(a) => commands::prune::run(a),
        Command::Group(a) => commands::group::run(a),
        Command::Deform(a) => commands::deform::run(a),
        Command::Render(a) => commands::render::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Bench(a) => commands::bench::run(a),
        Command::Sweep(a) => commands::sweep::run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Causes already spelled out by their parent are skipped.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_map_to_two() {
        let e = anyhow::Error::new(UsageError("bad".into()));
        assert_eq!(exit_code(&e), 2);
        let e = anyhow::Error::new(speede::Error::Config("bad".into())).context("running");
        assert_eq!(exit_code(&e), 2);
        let e = anyhow::Error::new(speede::Error::Format("truncated".into()));
        assert_eq!(exit_code(&e), 1);
    }
}
