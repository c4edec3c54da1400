use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use guifl_cli::artifacts::write_atomic;
use guifl_cli::commands::{cmd_evaluate, cmd_partition, cmd_report, cmd_synth, cmd_train, Ctx};
use guifl_cli::config::RunConfig;
use guifl_cli::CliError;

#[derive(Parser)]
#[command(name = "guifl", version, about = "Federated GUI-agent experiments at toy scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run config; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus.
    Synth(Common),
    /// Clean the corpus, split off the test set and build client shards.
    Partition(Common),
    /// Run the federated rounds.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score the final model (or a prediction file) on the test set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// JSONL prediction file to replay instead of running the model.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Merge finished runs into one CSV table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Keep only this group, e.g. `ALL` or `source=AC`.
        #[arg(long)]
        group: Option<String>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn context(c: &Common) -> Result<Ctx, CliError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::parse("")?,
    };
    if let Some(s) = c.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    Ctx::new(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(c) => {
            let path = cmd_synth(&context(&c)?)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Partition(c) => {
            let m = cmd_partition(&context(&c)?)?;
            eprintln!("partitioned into {} clients", m.num_clients());
        }
        Command::Train { common, resume } => {
            let s = cmd_train(&context(&common)?, resume.as_deref())?;
            eprintln!("trained to round {}", s.round);
        }
        Command::Evaluate { common, predictions } => {
            let r = cmd_evaluate(&context(&common)?, predictions.as_deref())?;
            if let Some(all) = r.all() {
                eprintln!("type {:.4}  sr {:.4}  steps {}", all.type_acc, all.sr, all.n_steps);
            }
        }
        Command::Report { runs, group, out } => {
            let table = cmd_report(&runs, group.as_deref())?;
            match out {
                Some(p) => write_atomic(&p, table.as_bytes())?,
                None => print!("{table}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("guifl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
