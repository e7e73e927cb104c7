//! Command-line front end; all substance lives in the library.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use iwvi::config::RunConfig;
use iwvi::runner;

#[derive(Parser)]
#[command(
    name = "iwvi",
    about = "Importance-weighted variational inference on discrete factor graphs",
    version
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override applied to data, training and evaluation.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads; defaults to all available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into <out>/data.
    Generate,
    /// Train on a generated dataset directory; writes model.ckpt and
    /// training_log.csv into <out>.
    Train {
        /// Directory containing train.jsonl.
        #[arg(long)]
        data: PathBuf,
    },
    /// Per-node inference on one graph JSON file.
    Infer {
        /// Model checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Graph JSON document.
        #[arg(long)]
        graph: PathBuf,
        /// Write the result here instead of stdout.
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset file; writes metrics tables into
    /// <out>.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Dataset JSON-lines file (for example data/test.jsonl).
        #[arg(long)]
        data: PathBuf,
    },
    /// Exact brute-force inference on one graph JSON file.
    Oracle {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Write the result here instead of stdout.
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Generate, train and evaluate end to end into a timestamped run
    /// directory under <out>.
    Run {
        /// Overwrite an existing run directory.
        #[arg(long)]
        force: bool,
        /// Validate the configuration and exit without writing anything.
        #[arg(long)]
        dry_run: bool,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.data.seed = seed;
        cfg.train.seed = seed;
        cfg.eval.seed = seed;
    }
    Ok(cfg)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring thread pool")?;
    }
    let config = load_config(&cli)?;

    match &cli.command {
        Command::Generate => {
            let paths = runner::generate_to_dir(&config, &cli.out)?;
            println!("wrote {}", paths.train.display());
            println!("wrote {}", paths.test.display());
            println!("wrote {}", paths.generator_info.display());
        }
        Command::Train { data } => {
            let checkpoint = runner::train_to_dir(&config, data, &cli.out)?;
            println!("wrote {}", checkpoint.display());
        }
        Command::Infer {
            model,
            graph,
            result,
        } => {
            let text = runner::infer_graph_file(&config, model, graph)?;
            emit(result.as_deref(), &text)?;
        }
        Command::Eval { model, data } => {
            let report = runner::evaluate_checkpoint(&config, model, data, &cli.out)?;
            for (k, mr) in &report.mean_recall_at {
                println!("mR@{k} = {mr:.4}");
            }
            println!("wrote {}", cli.out.join("metrics.csv").display());
        }
        Command::Oracle {
            model,
            graph,
            result,
        } => {
            let text = runner::oracle_graph_file(model, graph)?;
            emit(result.as_deref(), &text)?;
        }
        Command::Run { force, dry_run } => {
            if *dry_run {
                println!("{}", runner::dry_run(&config)?);
                return Ok(());
            }
            let outcome = runner::run_experiment(&config, &cli.out, *force)?;
            println!("run directory: {}", outcome.run_dir.display());
            for (k, mr) in &outcome.report.mean_recall_at {
                println!("mR@{k} = {mr:.4}");
            }
        }
    }
    Ok(())
}

fn emit(path: Option<&std::path::Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, text)?;
            println!("wrote {}", p.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}
