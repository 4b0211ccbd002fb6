//! `batchforge`: generate synthetic balanced-order-batching instances, solve
//! them with classical and learned methods, train the graph clustering
//! networks, and produce benchmark reports.

mod bench;
mod cmds;
mod svg;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "batchforge",
    version,
    about = "Balanced order batching: instances, solvers, training, benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic instances.
    Generate(cmds::GenerateArgs),
    /// Solve one instance with a chosen method.
    Solve(cmds::SolveArgs),
    /// Re-score and validate a solution file against its instance.
    Route(cmds::RouteArgs),
    /// Train the clustering networks on one or more instances.
    Train(cmds::TrainArgs),
    /// Run a method comparison over an instance set and emit a report.
    Bench(bench::BenchArgs),
    /// Dump the heterogeneous graph of an instance as JSON.
    DumpGraph(cmds::DumpGraphArgs),
}

/// Invalid flag combinations that clap cannot express (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    if let Some(err) = e.downcast_ref::<batchforge_core::Error>() {
        return match err {
            batchforge_core::Error::Infeasible(_)
            | batchforge_core::Error::InfeasibleShape(_) => 3,
            batchforge_core::Error::Autodiff(batchforge_autodiff::AdError::NonFinite {
                ..
            }) => 4,
            _ => 1,
        };
    }
    1
}

fn main() {
    if let Ok(v) = std::env::var("BATCHFORGE_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Generate(args) => cmds::generate(args),
        Cmd::Solve(args) => cmds::solve(args),
        Cmd::Route(args) => cmds::route(args),
        Cmd::Train(args) => cmds::train(args),
        Cmd::Bench(args) => bench::run(args),
        Cmd::DumpGraph(args) => cmds::dump_graph(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}
