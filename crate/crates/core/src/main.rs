use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use switchsolve::run::{run_command, Command, RunOptions};
use switchsolve::Method;

#[derive(Parser)]
#[command(name = "switchsolve", version, about = "Solve and verify multi-mode optimal switching obstacle systems")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the operator, cost and data axioms.
    Validate(Args),
    /// Solve every slice and dump the field.
    Solve(Args),
    /// Build barrier pairs, verify them and order them against the solution.
    Barriers(Args),
    /// Perron envelope of the barrier family against the solution.
    Envelope(Args),
    /// Verify two field dumps as sub- and supersolution and compare them.
    Compare(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Solve even when O2-O5 fail.
    #[arg(long)]
    force_unvalidated: bool,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    sub: Option<PathBuf>,
    #[arg(long = "super")]
    sup: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Vi,
    Pi,
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("SWITCHSOLVE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cli = Cli::parse();
    let (cmd, a) = match cli.command {
        Cmd::Validate(a) => (Command::Validate, a),
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::Barriers(a) => (Command::Barriers, a),
        Cmd::Envelope(a) => (Command::Envelope, a),
        Cmd::Compare(a) => (Command::Compare, a),
    };
    let opts = RunOptions {
        config: a.config,
        out: a.out,
        force: a.force_unvalidated,
        tol: a.tol,
        method: a.method.map(|m| match m {
            MethodArg::Vi => Method::ValueIteration,
            MethodArg::Pi => Method::PolicyIteration,
        }),
        sub: a.sub,
        sup: a.sup,
    };
    let report = run_command(cmd, &opts);
    match &report.message {
        Some(msg) if report.exit_code != 0 => eprintln!("switchsolve {}: {msg}", cmd.name()),
        _ => println!("switchsolve {}: {}", cmd.name(), report.status),
    }
    ExitCode::from(report.exit_code as u8)
}
