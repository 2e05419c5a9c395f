//! HTTP/JSON service over the anomaly pipeline: run management, the operator
//! feedback queue, reports, and an append-only event log with replay.

pub mod error;
pub mod http;
pub mod ids;
pub mod log;
pub mod service;

use std::net::SocketAddr;
use std::path::PathBuf;

pub use error::ServiceError;
pub use log::{replay_log, EventLog, LogEvent, Mutation, ReplayError, ServiceState};
pub use service::Service;

/// Environment variable naming the data root.
pub const DATA_DIR_ENV: &str = "TW_DATA_DIR";

pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("tw-data"))
}

/// Binds `addr` and serves until ctrl-c. `static_dir` defaults to
/// `<data>/ui` when that directory exists.
pub async fn serve(addr: SocketAddr, data_dir: PathBuf, static_dir: Option<PathBuf>) -> Result<(), ServiceError> {
    let svc = Service::open(&data_dir)?;
    let static_dir = static_dir.or_else(|| Some(data_dir.join("ui")).filter(|p| p.is_dir()));
    let app = http::router(svc, static_dir);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::Internal(format!("bind {addr}: {e}")))?;
    tracing::info!(%addr, data = %data_dir.display(), "serving");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}

/// Serves on an already bound listener; used by tests and embedders.
pub async fn serve_on(listener: tokio::net::TcpListener, svc: Service) -> Result<(), ServiceError> {
    axum::serve(listener, http::router(svc, None))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}
