use std::fs::{self, File};
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use follower_core::harness::{
    generate_synthetic, run_experiment, run_persistence, write_run, ExperimentConfig, PersistenceConfig,
    SyntheticConfig,
};
use follower_core::io::{dataset_from_csv, load_manifest, write_manifest};
use follower_core::service::SessionManager;
use follower_core::Metric;

#[derive(Parser)]
#[command(name = "follower", version, about = "Open-world instance recognition with budgeted supervision")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-fold experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (default: all cores). Output does not depend on it.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Frame-level vs sequence-level CMC@1.
    Cmc {
        /// Manifest to evaluate; the default synthetic set when absent.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Object counts to evaluate, comma separated (default: all objects).
        #[arg(long, value_delimiter = ',')]
        objects: Vec<usize>,
        #[arg(long, default_value = "euclidean")]
        metric: String,
    },
    /// Write a synthetic dataset as archive + manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON file with generator settings; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convert a CSV of frames (sequence_id,object_label,v0..) to archive + manifest.
    Convert {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the live session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        data_dir: PathBuf,
        /// Directory served under /static (thumbnails, UI assets).
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn parse_metric(s: &str) -> Result<Metric> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).with_context(|| format!("unknown metric {s:?}"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, out, threads } => {
            let config: ExperimentConfig = read_json(&config)?;
            if let Some(n) = threads {
                rayon_threads(n)?;
            }
            let result = run_experiment(&config)?;
            write_run(&out, &config, &result)?;
            println!("{}", serde_json::to_string_pretty(&result.summary)?);
        }
        Command::Cmc { manifest, folds, seed, objects, metric } => {
            let dataset = match manifest {
                Some(p) => load_manifest(&p)?,
                None => generate_synthetic(&SyntheticConfig::default())?,
            };
            let config = PersistenceConfig { folds, seed, object_counts: objects, metric: parse_metric(&metric)? };
            let result = run_persistence(&dataset, &config)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::Synth { out, config, seed } => {
            let mut c: SyntheticConfig = match config {
                Some(p) => read_json(&p)?,
                None => SyntheticConfig::default(),
            };
            if let Some(s) = seed {
                c.seed = s;
            }
            let manifest = write_manifest(&generate_synthetic(&c)?, &out)?;
            println!("{}", manifest.display());
        }
        Command::Convert { csv, out } => {
            let file = File::open(&csv).with_context(|| format!("opening {}", csv.display()))?;
            let dataset = dataset_from_csv(BufReader::new(file))?;
            let manifest = write_manifest(&dataset, &out)?;
            println!("{} ({} sequences, d = {})", manifest.display(), dataset.len(), dataset.dim);
        }
        Command::Serve { port, data_dir, static_dir, host } => {
            if let Some(d) = &static_dir {
                if !d.is_dir() {
                    bail!("static dir {} does not exist", d.display());
                }
            }
            fs::create_dir_all(&data_dir)?;
            let manager = Arc::new(SessionManager::open(&data_dir)?);
            let app = follower_cli::http::router(manager, static_dir.as_deref());
            let addr: SocketAddr = format!("{host}:{port}").parse()?;
            tokio::runtime::Runtime::new()?.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}

fn rayon_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")
}
