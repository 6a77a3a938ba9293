//! HTTP service for the darviz toolkit.
//!
//! | route | body | result |
//! |---|---|---|
//! | `GET /api/zoo` | | zoo summaries |
//! | `GET /api/zoo/{name}` | | IR document, or 404 |
//! | `GET /api/catalog` | | layer kinds with default params |
//! | `POST /api/validate` | `{model, inputs?}` | `{diagnostics}` |
//! | `POST /api/shapes` | `{model, inputs?}` | `{shapes}` |
//! | `POST /api/codegen` | `{model, target}` | `{target, filename, source, line_count}` |
//! | `POST /api/import` | `{format, text}` | `{model, notes}` |
//! | `POST /api/lint-trace` | `{format, text, config?}` | `{findings}` |
//! | `GET/POST /api/designs` | `{model}` | ids / new record |
//! | `GET/PUT/DELETE /api/designs/{id}` | `{model}` | record |
//!
//! `model` is an IR document, inline or as a string. Malformed bodies get
//! 400, documents or requests the toolkit rejects get 422.

pub mod api;
pub mod error;
pub mod store;

use std::io;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;

pub use error::ApiError;
pub use store::{DesignRecord, DesignStore, FileStore, StoreError};

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<dyn DesignStore>,
}

impl AppState {
    pub fn new(store: impl DesignStore + 'static) -> Self {
        AppState { store: Arc::new(store) }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/zoo", get(api::zoo_index))
        .route("/api/zoo/{name}", get(api::zoo_model))
        .route("/api/catalog", get(api::catalog))
        .route("/api/validate", post(api::validate))
        .route("/api/shapes", post(api::shapes))
        .route("/api/codegen", post(api::codegen))
        .route("/api/import", post(api::import_model))
        .route("/api/lint-trace", post(api::lint_trace_text))
        .route("/api/designs", get(api::list_designs).post(api::create_design))
        .route(
            "/api/designs/{id}",
            get(api::get_design).put(api::update_design).delete(api::delete_design),
        )
        .with_state(state)
}

/// Serves on an already bound listener until the process ends.
pub async fn serve_on(listener: TcpListener, state: AppState) -> io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Binds `0.0.0.0:port` with a file store at `store_dir`.
pub async fn serve(port: u16, store_dir: &Path) -> io::Result<()> {
    let state = AppState::new(FileStore::open(store_dir)?);
    let listener = TcpListener::bind(SocketAddr::from(([0, 0, 0, 0], port))).await?;
    eprintln!("darviz: listening on {}", listener.local_addr()?);
    serve_on(listener, state).await
}
