//! HTTP/JSON front end for the curation engine.
//!
//! One [`Workspace`] (hierarchy bundle, annotation store, categorizer
//! settings and open sessions) sits behind a lock; handlers are short and
//! synchronous once the request body has been read. Mutating requests may
//! carry an `Idempotency-Key`; a retry with the same key and body gets the
//! original response back without running again.

mod error;
mod idempotency;
mod routes;
mod state;

use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;

pub use error::ApiError;
pub use idempotency::IdempotencyCache;
pub use state::{ServiceConfig, StartupError, Workspace, HIERARCHY_FILE, LOG_FILE};

#[derive(Debug, Clone)]
pub struct AppState {
    workspace: Arc<Mutex<Workspace>>,
    idempotency: IdempotencyCache,
}

impl AppState {
    pub fn new(workspace: Workspace) -> Self {
        Self {
            workspace: Arc::new(Mutex::new(workspace)),
            idempotency: IdempotencyCache::default(),
        }
    }

    pub fn open(config: ServiceConfig) -> Result<Self, StartupError> {
        Ok(Self::new(Workspace::open(config)?))
    }

    /// Locks the workspace. A panic in an earlier handler does not leave
    /// the data half-written (mutations are staged then swapped in), so a
    /// poisoned lock is simply taken over.
    pub fn lock(&self) -> MutexGuard<'_, Workspace> {
        self.workspace.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub fn router(state: AppState) -> Router {
    let cache = state.idempotency.clone();
    Router::new()
        .route("/health", get(routes::health))
        .route("/hierarchy", get(routes::get_hierarchy).put(routes::put_hierarchy))
        .route("/hierarchy/concepts", post(routes::add_concept))
        .route("/attestations", post(routes::attest))
        .route("/classify/preview", post(routes::preview))
        .route("/validation", get(routes::validation))
        .route("/media", get(routes::list_media))
        .route("/media/flaw", post(routes::assign_flaw))
        .route("/session", post(routes::open_session))
        .route("/session/{id}", get(routes::get_session))
        .route("/session/{id}/step", post(routes::step))
        .route("/stats/agreement", get(routes::agreement).post(routes::agreement_from_grid))
        .route("/categorize", post(routes::categorize))
        .route("/export/manifest", post(routes::export_manifest))
        .route("/import/imagenet", post(routes::import_imagenet))
        .route("/import/precomputed", post(routes::import_precomputed))
        .layer(axum::middleware::from_fn_with_state(cache, idempotency::middleware))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!("listening on http://{addr}");
    }
    axum::serve(listener, router(state)).await
}

/// Binds `addr` (port 0 picks a free port) and serves in the background.
pub async fn spawn(addr: SocketAddr, state: AppState) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let bound = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = serve(listener, state).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok(bound)
}
