//! `tapadapt`: simulate, learn, mine, eval, sli, serve and replay.
//!
//! Exit status is 0 on success, 2 for configuration or usage errors and 3
//! for data errors.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "tapadapt", version, about = "Online response-timing learner driven by user taps")]
struct Cli {
    #[command(flatten)]
    config: config::ConfigArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write simulated 15 s windows as WAV files plus a JSON-lines manifest.
    Simulate(commands::SimulateArgs),
    /// Run the predict-then-update protocol on simulated or manifest data.
    Learn(commands::LearnArgs),
    /// Mine labeled samples from an interaction log.
    Mine(commands::MineArgs),
    /// Windowed F1 and Brier score over a prediction record log.
    Eval(commands::EvalArgs),
    /// Semantic learning index from per-window embeddings.
    Sli(commands::SliArgs),
    /// Run a live session, optionally with a console gateway.
    Serve(commands::ServeArgs),
    /// Re-run a session with the taps of a recorded log.
    Replay(commands::ReplayArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cfg = match cli.config.resolve() {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if cli.config.print_config {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(cfg, a),
        Command::Learn(a) => commands::learn(cfg, a),
        Command::Mine(a) => commands::mine(cfg, a),
        Command::Eval(a) => commands::eval(cfg, a),
        Command::Sli(a) => commands::sli(a),
        Command::Serve(a) => commands::serve(cfg, a),
        Command::Replay(a) => commands::replay(cfg, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &tapadapt::Error) -> ExitCode {
    eprintln!("tapadapt: {e}");
    ExitCode::from(if e.is_config() { 2 } else { 3 })
}
