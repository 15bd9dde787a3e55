use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use weakspot_cli::service::{router, AppState};
use weakspot_cli::{summarize_audit, summarize_enhance, Overrides};
use weakspot_core::pipeline::benchmark::BenchmarkSpec;
use weakspot_core::pipeline::{
    emit_benchmark, read_json, run_audit, run_enhance, AuditReport, EnhanceReport, PipelineConfig, PipelineError,
};
use weakspot_core::review::ReviewStore;

#[derive(Parser)]
#[command(
    name = "weakspot",
    version,
    about = "Audit embedding classifiers for weakspots and mitigate them with procured data"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON).
    #[arg(long, global = true, default_value = "pipeline.json")]
    config: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; for `benchmark`, where the dataset is written.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Restrict procurement to the synthetic channel and recorded fixtures.
    #[arg(long, global = true)]
    offline: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the planted-weakspot benchmark and a ready-to-run config.
    Benchmark {
        /// Benchmark spec (JSON); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Train or load the baseline, detect weakspots, refresh the review queue.
    Audit,
    /// Procure data for weakspots and spurious associations, fine-tune, re-audit.
    Enhance,
    /// Print the audit and enhance reports.
    Report {
        /// Raw JSON instead of a summary.
        #[arg(long)]
        json: bool,
    },
    /// Serve the review API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut config =
        PipelineConfig::load(&common.config).with_context(|| format!("loading config {}", common.config.display()))?;
    Overrides {
        seed: common.seed,
        out: common.out.clone(),
        offline: common.offline,
    }
    .apply(&mut config);
    Ok(config)
}

fn optional<T>(r: Result<T, PipelineError>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(PipelineError::Missing(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Benchmark { spec } => {
            let mut spec: BenchmarkSpec = match spec {
                Some(path) => serde_json::from_str(
                    &std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?,
                )
                .with_context(|| format!("parsing {}", path.display()))?,
                None => BenchmarkSpec::default(),
            };
            if let Some(seed) = cli.common.seed {
                spec.seed = seed;
            }
            let dir = cli.common.out.unwrap_or_else(|| PathBuf::from("benchmark"));
            emit_benchmark(&spec, &dir)?;
            println!("{}", dir.join("pipeline.json").display());
        }
        Command::Audit => {
            let config = load_config(&cli.common)?;
            print!("{}", summarize_audit(&run_audit(&config)?));
        }
        Command::Enhance => {
            let config = load_config(&cli.common)?;
            let review = ReviewStore::open(config.review_path())?.snapshot();
            print!("{}", summarize_enhance(&run_enhance(&config, &review)?));
        }
        Command::Report { json } => {
            let config = load_config(&cli.common)?;
            let audit: Option<AuditReport> = optional(read_json(config.audit_report_path()))?;
            let enhance: Option<EnhanceReport> = optional(read_json(config.enhance_report_path()))?;
            if audit.is_none() && enhance.is_none() {
                anyhow::bail!(
                    "no reports in {}; run `weakspot audit` first",
                    config.output_dir.display()
                );
            }
            if json {
                let body = serde_json::json!({ "audit": audit, "enhance": enhance });
                println!("{}", serde_json::to_string_pretty(&body)?);
            } else {
                if let Some(a) = &audit {
                    println!("== audit ==\n{}", summarize_audit(a));
                }
                if let Some(e) = &enhance {
                    println!("== enhance ==\n{}", summarize_enhance(e));
                }
            }
        }
        Command::Serve { addr } => {
            let config = load_config(&cli.common)?;
            let state = Arc::new(AppState::load(config)?);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr)
                    .await
                    .with_context(|| format!("binding {addr}"))?;
                log::info!("serving on http://{addr}");
                axum::serve(listener, router(state)).await?;
                Ok::<_, anyhow::Error>(())
            })?;
        }
    }
    Ok(())
}
