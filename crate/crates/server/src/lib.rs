//! HTTP API and operator CLI over `sieve-core`.

pub mod api;
pub mod cli;
pub mod error;

use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::Context;
use sieve_core::config::Config;
use sieve_core::persistence::Store;
use sieve_core::service::ReviewService;
use tokio::net::TcpListener;

pub use api::{router, AppState};
pub use error::ApiError;

/// Opens the configured store, which must already be migrated, and builds
/// the service with every configured collaborator.
pub fn service_from_config(config: &Config) -> anyhow::Result<Arc<ReviewService>> {
    let store = Store::open(&config.store.path)
        .with_context(|| format!("opening store {}", config.store.path.display()))?;
    Ok(Arc::new(ReviewService::from_config(config, Arc::new(store))?))
}

pub fn app(config: &Config) -> anyhow::Result<axum::Router> {
    let service = service_from_config(config)?;
    Ok(router(AppState::new(service, config.auth.clone())))
}

/// Serves the API on `config.server.bind` until ctrl-c.
pub async fn serve(config: &Config) -> anyhow::Result<()> {
    let app = app(config)?;
    let addr: SocketAddr = config
        .server
        .bind
        .parse()
        .with_context(|| format!("invalid bind address {:?}", config.server.bind))?;
    let listener = TcpListener::bind(addr).await.with_context(|| format!("cannot bind {addr}"))?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
