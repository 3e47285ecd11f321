use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hypotool::config::PipelineConfig;
use hypotool::pipeline::Pipeline;
use hypotool::Result;

#[derive(Parser)]
#[command(name = "hypotool", version, about = "Tool retrieval with hypothetical tool generation")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true, default_value = "hypotool.toml")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Phase {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Filter the corpus and queries into the output directory.
    Prepare,
    /// Build the BM25 index, and the dense index when the retriever is dense.
    Index,
    /// Generate hypothetical tools for the training sample or the test queries.
    Hypothesize {
        #[arg(long, value_enum)]
        phase: Phase,
    },
    /// Match training generations to gold tools.
    Align,
    /// Generate, align, build triplets and fit the adapter.
    Train,
    /// Search per vector and fuse into a run file.
    Retrieve,
    /// Re-fuse stored per-vector lists.
    Fuse,
    /// Score a run against the prepared queries.
    Evaluate {
        /// Run file; defaults to the retrieve output.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// prepare, train (if configured), index, retrieve, evaluate.
    RunAll,
}

fn execute(cli: Cli) -> Result<()> {
    let config = PipelineConfig::load(&cli.config)?.with_overrides(cli.seed, cli.workers)?;
    let p = Pipeline::new(config)?;
    match cli.command {
        Command::Prepare => {
            let out = p.cmd_prepare()?;
            println!(
                "removed {} tools, {} queries",
                out.report.tools_removed, out.report.queries_removed
            );
        }
        Command::Index => p.cmd_index()?,
        Command::Hypothesize { phase } => {
            let records = match phase {
                Phase::Train => p.cmd_hypothesize_train()?,
                Phase::Test => p.cmd_hypothesize_test()?,
            };
            let ok = records.iter().filter(|r| r.is_ok()).count();
            println!("{ok}/{} generations ok", records.len());
        }
        Command::Align => {
            let pairs = p.cmd_align()?;
            println!("{} aligned pairs", pairs.len());
        }
        Command::Train => {
            let s = p.cmd_train()?;
            println!(
                "adapter {}: {} triplets, mean loss {:.6} -> {:.6}",
                s.adapter_fingerprint, s.triplets, s.initial_mean_loss, s.final_mean_loss
            );
        }
        Command::Retrieve => {
            let run = p.cmd_retrieve()?;
            println!("{} ranked lists written to {}", run.len(), p.layout().run().display());
        }
        Command::Fuse => {
            let run = p.cmd_fuse()?;
            println!("{} ranked lists written to {}", run.len(), p.layout().run().display());
        }
        Command::Evaluate { run } => {
            p.cmd_evaluate(run.as_deref())?;
            print!("{}", std::fs::read_to_string(p.layout().file("eval", "report.txt")).unwrap_or_default());
        }
        Command::RunAll => {
            p.run_all()?;
            print!("{}", std::fs::read_to_string(p.layout().file("eval", "report.txt")).unwrap_or_default());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
