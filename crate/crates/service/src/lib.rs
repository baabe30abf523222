//! HTTP service for the interactive loop: query the index, label documents,
//! edit the relevance matrix, retrain and inspect the projection.
//!
//! Queries are answered from an immutable [`state::Snapshot`] (model plus
//! index). Label feedback and completed retrains publish a new snapshot, so
//! a request never mixes two model versions.

pub mod config;
pub mod error;
pub mod routes;
pub mod state;

use std::future::Future;

use tokio::net::TcpListener;

pub use config::{Config, ConfigBuilder, Origin, Resolved};
pub use error::{ApiError, ConfigError, ServiceError};
pub use routes::router;
pub use state::{AppState, SharedState};

/// Binds the configured address.
pub async fn bind(config: &Config) -> Result<TcpListener, ServiceError> {
    let addr = format!("{}:{}", config.server.host, config.server.port);
    TcpListener::bind(&addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: TcpListener,
    state: SharedState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("listening on {addr}");
    }
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}
