use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use sieve_core::catalog::ReviewId;
use sieve_core::config::Config;
use sieve_core::ingest::SourceKind;
use sieve_core::persistence::Store;
use sieve_stubs::{ConnectorStub, ModelStub, WireRecord};

#[derive(Debug, Parser)]
#[command(name = "sieve", version, about = "Living literature reviews: search, dedup, screening and export")]
pub struct Cli {
    /// TOML config file; `SIEVE__SECTION__KEY` variables override it.
    #[arg(long, short, global = true, env = "SIEVE_CONFIG")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the HTTP API.
    Serve {
        /// Overrides server.bind.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Create or upgrade the store schema.
    Migrate,
    /// Import a RIS, BibTeX or PDF file into a review.
    Import {
        #[arg(long)]
        review: String,
        #[arg(long)]
        kind: SourceKind,
        /// Mark every imported paper as a seed study.
        #[arg(long)]
        seed: bool,
        file: PathBuf,
    },
    /// Run the review's search, or a living update if it was searched before.
    Search {
        #[arg(long)]
        review: String,
    },
    /// Write the review's export document.
    Export {
        #[arg(long)]
        review: String,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a deterministic text-generation stub.
    StubModelServer {
        #[arg(long, default_value = "127.0.0.1:9000")]
        bind: SocketAddr,
    },
    /// Serve a search index stub speaking the connector wire format.
    StubConnectorServer {
        #[arg(long, default_value = "127.0.0.1:7000")]
        bind: SocketAddr,
        /// JSON array of wire records to serve.
        #[arg(long, conflicts_with = "total")]
        records: Option<PathBuf>,
        /// Number of generated records to advertise.
        #[arg(long, default_value_t = 1000)]
        total: usize,
        #[arg(long, default_value = "stub")]
        prefix: String,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub async fn run(cli: Cli) -> anyhow::Result<()> {
    let load = || Config::load(cli.config.as_deref()).context("loading config");
    match cli.command {
        Command::Serve { bind } => {
            let mut config = load()?;
            if let Some(b) = bind {
                config.server.bind = b;
            }
            crate::serve(&config).await
        }
        Command::Migrate => {
            let config = load()?;
            let version = Store::migrate(&config.store.path)?;
            eprintln!("{} is at schema version {version}", config.store.path.display());
            Ok(())
        }
        Command::Import { review, kind, seed, file } => {
            let service = crate::service_from_config(&load()?)?;
            let payload = std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            print_json(&service.import(&ReviewId::new(review), kind, payload, seed).await?)
        }
        Command::Search { review } => {
            let service = crate::service_from_config(&load()?)?;
            print_json(&service.run_search(&ReviewId::new(review)).await?)
        }
        Command::Export { review, out } => {
            let service = crate::service_from_config(&load()?)?;
            let json = service.export_json(&ReviewId::new(review))?;
            match out {
                Some(path) => std::fs::write(&path, json).with_context(|| format!("writing {}", path.display())),
                None => {
                    print!("{json}");
                    Ok(())
                }
            }
        }
        Command::StubModelServer { bind } => {
            eprintln!("model stub on {bind}");
            Ok(sieve_stubs::serve(ModelStub::new().router(), bind).await?)
        }
        Command::StubConnectorServer { bind, records, total, prefix } => {
            let stub = match records {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    let records: Vec<WireRecord> = serde_json::from_str(&text)?;
                    ConnectorStub::fixed(records)
                }
                None => ConnectorStub::generated(total, prefix),
            };
            eprintln!("connector stub on {bind}");
            Ok(sieve_stubs::serve(stub.router(), bind).await?)
        }
    }
}
