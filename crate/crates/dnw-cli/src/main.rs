//! Command-line harness: run one experiment, compare a method against a
//! baseline over paired seeds, run the verification suite, or print an
//! edge-budget table.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use dnw::harness::{
    budget_table, compare_and_write, run_and_write, BudgetSpec, ExperimentConfig,
};
use dnw::verify::run_verification;

#[derive(Parser)]
#[command(name = "dnw", about = "Neural graphs with learned sparse wiring", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config's `output`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the config's method and a baseline over paired seeds.
    Compare {
        config: PathBuf,
        /// random_graph | no_update_rule | l1_anneal | one_shot_prune_reinit
        /// | one_shot_prune_finetune | frozen_mask (sparse method only)
        #[arg(long)]
        baseline: String,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check the swap and descent properties on random scenarios.
    Verify {
        /// Accepted simple swap scenarios to collect.
        #[arg(long, default_value_t = 1000)]
        scenarios: usize,
        /// Accepted general (two-node) swap scenarios to collect.
        #[arg(long, default_value_t = 500)]
        general: usize,
        /// Descent-lemma trials.
        #[arg(long, default_value_t = 1000)]
        lemma: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print per-stage edge budgets for a stage plan JSON file.
    Budget { table: PathBuf },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run { config, output } => {
            let config = ExperimentConfig::from_path(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            let out = run_and_write(&config, output.as_deref())?;
            let last = out.metrics.last().expect("at least the initial record");
            println!(
                "{}: epoch {} train_loss {:.4} train_acc {:.4} test_acc {:.4} ({} ms)",
                config.method, last.epoch, last.train_loss, last.train_acc, last.test_acc,
                last.wall_ms
            );
        }
        Command::Compare {
            config,
            baseline,
            seeds,
            output,
        } => {
            let config = ExperimentConfig::from_path(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            let summary = compare_and_write(&config, &baseline, seeds, output.as_deref())?;
            println!(
                "{}: {:.4} +/- {:.4}",
                summary.primary.method, summary.primary.mean, summary.primary.sd
            );
            println!(
                "{}: {:.4} +/- {:.4}",
                summary.baseline.method, summary.baseline.mean, summary.baseline.sd
            );
            println!(
                "paired diff mean {:+.4}, primary wins {}/{}",
                summary.paired_diff.iter().sum::<f64>() / seeds as f64,
                summary.wins,
                seeds
            );
        }
        Command::Verify {
            scenarios,
            general,
            lemma,
            seed,
            out,
        } => {
            let report = run_verification(scenarios, general, lemma, seed)?;
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => std::fs::write(&path, format!("{text}\n"))
                    .with_context(|| format!("writing {}", path.display()))?,
                None => println!("{text}"),
            }
            let clean = report.swap.failed == 0
                && report.swap_general.failed == 0
                && report.lemma1.failed == 0;
            if !clean {
                anyhow::bail!("verification reported failures");
            }
        }
        Command::Budget { table } => {
            let text = std::fs::read_to_string(&table)
                .with_context(|| format!("reading {}", table.display()))?;
            let spec: BudgetSpec = serde_json::from_str(&text)?;
            let report = budget_table(&spec);
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
