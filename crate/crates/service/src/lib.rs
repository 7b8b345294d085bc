//! HTTP/JSON front end for optimization sessions.
//!
//! Every session is kept in memory behind its own mutex and persisted as one
//! JSON snapshot file in the data directory. A mutation is applied to a copy,
//! written to disk (temp file, then rename) and only then committed, so a
//! crash never leaves half an observation behind.

mod api;
mod store;

pub use api::router;
pub use store::{SessionRecord, Store, StoreError};

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use tlbo_core::Schedule;
use tokio::net::TcpListener;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    /// Applied when a create request omits `schedule`.
    pub default_schedule: Schedule,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("tlbo-data"),
            default_schedule: Schedule::default(),
        }
    }
}

/// Opens the store and serves until `shutdown` resolves.
pub async fn serve(
    cfg: ServiceConfig,
    listener: TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), StoreError> {
    let store = Arc::new(Store::open(&cfg.data_dir, cfg.default_schedule)?);
    tracing::info!(
        addr = %listener.local_addr().map_err(StoreError::io("listener"))?,
        sessions = store.len(),
        "serving"
    );
    axum::serve(listener, router(store))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(StoreError::io("server"))
}
