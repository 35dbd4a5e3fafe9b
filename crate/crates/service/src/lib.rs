//! HTTP interface: noisy count and top-k queries over the current store
//! snapshot, plus token-protected ingestion and snapshot management.

mod config;
mod error;
mod handlers;
mod state;

use std::net::SocketAddr;
use std::path::Path;

use axum::body::Body;
use axum::extract::DefaultBodyLimit;
use axum::http::Request;
use axum::routing::{get, post};
use axum::Router;
use http_body_util::BodyExt;
use pprl_core::Store;
use tower::ServiceExt;

pub use axum::http::{Method, StatusCode};
pub use config::{secret_from_hex, ConfigError, ServiceConfig, MIN_SECRET_BYTES, SECRET_ENV};
pub use error::ApiError;
pub use handlers::{
    CountResponse, IngestResponse, QueryEcho, RankedCount, SnapshotAction, SnapshotRequest, SnapshotResponse,
    TopKResponse, DEFAULT_K_MAX, TEST_NOW_HEADER,
};
pub use state::{AppState, Clock};

const MAX_INGEST_BODY: usize = 512 * 1024 * 1024;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/count", get(handlers::count))
        .route("/v1/topk", get(handlers::topk))
        .route(
            "/v1/admin/ingest",
            post(handlers::ingest).layer(DefaultBodyLimit::max(MAX_INGEST_BODY)),
        )
        .route("/v1/admin/snapshot", post(handlers::snapshot))
        .with_state(state)
}

/// Builds state from a config and optionally loads a snapshot file into it.
pub fn build_state(
    config: &ServiceConfig,
    snapshot: Option<&Path>,
) -> Result<AppState, Box<dyn std::error::Error>> {
    let secret = config.load_secret()?;
    let state = AppState::new(config, secret)?;
    if let Some(path) = snapshot.or(config.snapshot.as_deref()) {
        let store = Store::load(path)?;
        tracing::info!(path = %path.display(), cells = store.cell_count(), "snapshot loaded");
        state.publish(store);
    }
    Ok(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Runs one request through the router in-process and returns status and body.
pub async fn dispatch(
    app: &Router,
    method: Method,
    uri: &str,
    headers: &[(&str, &str)],
    body: Vec<u8>,
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = match req.body(Body::from(body)) {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, e.to_string().into_bytes()),
    };
    let resp = match app.clone().oneshot(req).await {
        Ok(r) => r,
        Err(never) => match never {},
    };
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .map(|b| b.to_bytes().to_vec())
        .unwrap_or_default();
    (status, bytes)
}
