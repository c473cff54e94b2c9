//! Command line for the temporal cycle-consistency correspondence
//! learner: train on synthetic clips, propagate labels through videos,
//! score predictions, dump flow fields and check gradients.
//!
//! Every failure path prints a single machine-readable JSON line to
//! stderr and exits nonzero, so wrappers never have to parse prose.

use clap::{Parser, Subcommand};
use tcyc_cli::commands;

#[derive(Parser, Debug)]
#[command(name = "tcyc", version, about = "Temporal cycle-consistency correspondence learner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train a model on synthetic clips.
    Train(commands::train::Args),
    /// Propagate frame-0 labels through a video.
    Propagate(commands::propagate::Args),
    /// Score predictions and probe flow quality.
    Eval(commands::eval::Args),
    /// Check analytic gradients against finite differences.
    Gradcheck(commands::gradcheck::Args),
    /// Render synthetic clips to disk.
    Synth(commands::synth::Args),
    /// Dump argmax-affinity flow fields.
    Flowdump(commands::flowdump::Args),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train(a) => commands::train::run(a),
        Cmd::Propagate(a) => commands::propagate::run(a),
        Cmd::Eval(a) => commands::eval::run(a),
        Cmd::Gradcheck(a) => commands::gradcheck::run(a),
        Cmd::Synth(a) => commands::synth::run(a),
        Cmd::Flowdump(a) => commands::flowdump::run(a),
    };
    if let Err(e) = result {
        eprintln!("{}", serde_json::json!({ "error": format!("{e:#}") }));
        std::process::exit(1);
    }
}
