use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use groundloop::optimizer::Algorithm;
use groundloop_cli::commands::{self, TrainOptions};

#[derive(Parser)]
#[command(name = "groundloop", version, about = "Self-evolving proposer-solver loop on synthetic temporal worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Grpo,
    Gdpo,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Grpo => Algorithm::Grpo,
            AlgorithmArg::Gdpo => Algorithm::Gdpo,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus file plus a sha256 sidecar.
    GenCorpus {
        #[arg(long)]
        config: PathBuf,
        /// Output path (default: `<output_dir>/corpus.jsonl`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full training loop for one seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the run seed (default: first entry of `seeds`).
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory (default: `<output_dir>/run-seed<seed>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the proposer advantage scheme.
        #[arg(long, value_enum)]
        algorithm: Option<AlgorithmArg>,
        /// Truncate the schedule to this many iterations.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Evaluate a run's final solver on a corpus file.
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Sweep reward-channel subsets and write comparison tables.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Ablation spec (default: fmt / fmt+con / fmt+feed / all).
        #[arg(long)]
        ablation: Option<PathBuf>,
    },
    /// Rebuild the reward-dynamics CSV and text summary from a run.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Check a config file and print a summary.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCorpus { config, out } => commands::gen_corpus_cmd(&config, out.as_deref()).map(|_| ()),
        Command::Train { config, seed, out, algorithm, iterations } => {
            let opts = TrainOptions { seed, out, algorithm: algorithm.map(Into::into), iterations };
            commands::train(&config, &opts).map(|_| ())
        }
        Command::Eval { run_dir, corpus } => commands::eval(&run_dir, &corpus).map(|_| ()),
        Command::Ablate { config, ablation } => commands::ablate(&config, ablation.as_deref()).map(|_| ()),
        Command::Report { run_dir } => commands::report(&run_dir).map(|_| ()),
        Command::Validate { config } => commands::validate(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
