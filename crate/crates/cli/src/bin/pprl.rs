use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use pprl_core::{EntityHierarchy, Level, Store};
use pprl_service::{build_state, dispatch, router, serve, Method, ServiceConfig};

const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Parser)]
#[command(name = "pprl", version, about = "Privacy-preserving count analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        /// TOML or JSON config file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        listen: Option<SocketAddr>,
        /// Snapshot to load at startup.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Build a snapshot file from NDJSON events offline.
    Ingest {
        /// NDJSON event file.
        #[arg(long)]
        input: PathBuf,
        /// Snapshot to write.
        #[arg(long)]
        out: PathBuf,
        /// Entity hierarchy as a JSON forest.
        #[arg(long)]
        hierarchy: Option<PathBuf>,
        /// Existing snapshot to extend.
        #[arg(long, conflicts_with_all = ["hierarchy", "finest"])]
        base: Option<PathBuf>,
        #[arg(long, default_value = "epoch3h")]
        finest: Level,
    },
    /// Answer request URIs (one per line, e.g. `/v1/count?...`) against a
    /// snapshot without opening a socket. Prints `status<TAB>body` per line.
    Query {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        snapshot: PathBuf,
        /// Request file; standard input when absent.
        #[arg(long)]
        requests: Option<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<ServiceConfig> {
    match path {
        Some(p) => ServiceConfig::from_file(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ServiceConfig::default()),
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(io::stderr)
        .init();

    match Cli::parse().command {
        Command::Serve {
            config,
            listen,
            snapshot,
        } => {
            let config = load_config(config.as_ref())?;
            let addr = match listen {
                Some(a) => a,
                None => config
                    .listen
                    .as_deref()
                    .unwrap_or(DEFAULT_LISTEN)
                    .parse()
                    .context("invalid listen address in config")?,
            };
            let state = build_state(&config, snapshot.as_deref()).map_err(|e| anyhow::anyhow!("{e}"))?;
            tokio::runtime::Runtime::new()?.block_on(serve(state, addr))?;
        }
        Command::Ingest {
            input,
            out,
            hierarchy,
            base,
            finest,
        } => {
            let mut store = match (base, hierarchy) {
                (Some(b), _) => Store::load(&b).with_context(|| format!("loading {}", b.display()))?,
                (None, Some(h)) => {
                    let file = File::open(&h).with_context(|| format!("opening {}", h.display()))?;
                    Store::with_hierarchy(finest, EntityHierarchy::from_json_reader(BufReader::new(file))?)
                }
                (None, None) => Store::new(finest),
            };
            let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let report = store.ingest_ndjson(BufReader::new(file))?;
            store.save(&out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if report.rows_read > 0 && report.rows_rejected == report.rows_read {
                bail!("every row was rejected");
            }
        }
        Command::Query {
            config,
            snapshot,
            requests,
        } => {
            let config = load_config(config.as_ref())?;
            let state = build_state(&config, Some(&snapshot)).map_err(|e| anyhow::anyhow!("{e}"))?;
            let app = router(state);
            let input: Box<dyn BufRead> = match requests {
                Some(p) => Box::new(BufReader::new(File::open(&p)?)),
                None => Box::new(io::stdin().lock()),
            };
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()?;
            let mut out = BufWriter::new(io::stdout().lock());
            for line in input.lines() {
                let line = line?;
                let uri = line.trim();
                if uri.is_empty() {
                    continue;
                }
                let (status, body) = rt.block_on(dispatch(&app, Method::GET, uri, &[], Vec::new()));
                write!(out, "{}\t", status.as_u16())?;
                out.write_all(&body)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}
