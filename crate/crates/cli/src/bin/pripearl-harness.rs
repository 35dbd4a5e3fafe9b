use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use pprl_core::harness::{
    generate_synthetic, run_experiment, ExperimentConfig, ExperimentName, SyntheticSpec,
};
use pprl_core::{pseudorand_frac, NoiseParams, PrivacyParams, Secret, TimeHierarchy};

/// Used when `PPRL_SECRET_HEX` is unset, so runs are reproducible out of the box.
const DEFAULT_SECRET: &[u8] = b"pripearl-harness-default-secret!";

#[derive(Parser)]
#[command(name = "pripearl-harness", version, about = "Synthetic utility experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Number of synthetic (creative, attribute, value) queries.
    #[arg(long, default_value_t = 100_000)]
    queries: usize,
    /// Success probability of the geometric count distribution.
    #[arg(long, default_value_t = 0.3)]
    geometric_q: f64,
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic events (NDJSON), exact cell counts (CSV) and the entity forest (JSON).
    Gen(DataArgs),
    /// Run experiments and write one CSV per experiment.
    Run {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated epsilons replacing each experiment's default grid.
        #[arg(long, value_delimiter = ',')]
        epsilon_list: Option<Vec<f64>>,
        #[arg(long, default_value_t = 10)]
        tau_max: u64,
        #[arg(long, default_value_t = 10)]
        n_max: usize,
        /// epsilon-sweep, threshold-sweep or topn; all three when absent.
        #[arg(long = "experiment")]
        experiments: Vec<String>,
    },
}

fn spec(args: &DataArgs) -> SyntheticSpec {
    SyntheticSpec {
        num_queries: args.queries,
        geometric_q: args.geometric_q,
        seed: args.seed,
        ..SyntheticSpec::default()
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn secret() -> Result<Secret> {
    match std::env::var(pprl_service::SECRET_ENV) {
        Ok(hex) if !hex.trim().is_empty() => Ok(Secret::from_hex(hex.trim())?),
        _ => Ok(Secret::new(DEFAULT_SECRET)?),
    }
}

/// Mean wall time of one keyed-hash fraction, in nanoseconds.
fn noise_latency_ns(secret: &Secret) -> f64 {
    const CALLS: u32 = 100_000;
    let started = Instant::now();
    let mut acc = 0u64;
    for i in 0..CALLS {
        acc ^= pseudorand_frac(secret, &i.to_be_bytes()).bits();
    }
    std::hint::black_box(acc);
    started.elapsed().as_nanos() as f64 / f64::from(CALLS)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(args) => {
            let data = generate_synthetic(&spec(&args))?;
            fs::create_dir_all(&args.out_dir)?;
            data.write_events(create(&args.out_dir, "events.ndjson")?)?;
            data.write_cells(create(&args.out_dir, "cells.csv")?)?;
            data.write_hierarchy(create(&args.out_dir, "hierarchy.json")?)?;
            eprintln!(
                "wrote {} events for {} cells to {}",
                data.events.len(),
                data.cells.len(),
                args.out_dir.display()
            );
        }
        Command::Run {
            data: args,
            epsilon_list,
            tau_max,
            n_max,
            experiments,
        } => {
            let names = if experiments.is_empty() {
                ExperimentName::ALL.to_vec()
            } else {
                experiments
                    .iter()
                    .map(|e| e.parse())
                    .collect::<Result<Vec<ExperimentName>, _>>()?
            };
            let config = ExperimentConfig {
                epsilons: epsilon_list,
                tau_max,
                n_max,
                ..ExperimentConfig::default()
            };
            let secret = secret()?;
            let base = PrivacyParams::new(NoiseParams::new(secret.clone(), 1.0)?, TimeHierarchy::default());
            let data = generate_synthetic(&spec(&args))?;
            let store = data.to_store()?;
            fs::create_dir_all(&args.out_dir)?;
            for name in names {
                let started = Instant::now();
                let table = run_experiment(name, &config, &base, &data, &store)?;
                table.write(create(&args.out_dir, &table.file_name)?)?;
                eprintln!(
                    "{name}: {} rows -> {} ({:.2}s)",
                    table.rows.len(),
                    args.out_dir.join(&table.file_name).display(),
                    started.elapsed().as_secs_f64()
                );
            }
            eprintln!("HMAC-SHA256 fraction: {:.0} ns/call", noise_latency_ns(&secret));
        }
    }
    Ok(())
}
