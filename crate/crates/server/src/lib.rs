//! HTTP service for the interactive loop: upload a dataset, build priors
//! from columns or selections, run embedding jobs in the background and poll
//! their progress, rank attributes for a selection.
//!
//! Everything is persisted under one data directory, so finished results
//! survive a restart and unfinished jobs are picked up again.

pub mod error;
pub mod jobs;
pub mod routes;
pub mod store;
pub mod wire;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use jobs::JobQueue;
use store::Store;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub data_dir: PathBuf,
    /// Concurrent embedding jobs. Zero accepts jobs but never runs them.
    pub workers: usize,
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub queue: JobQueue,
}

impl AppState {
    /// Opens the store and starts the workers; needs a running tokio runtime.
    pub fn start(config: &ServerConfig) -> std::io::Result<Self> {
        let store = Arc::new(Store::open(&config.data_dir)?);
        let queue = JobQueue::start(store.clone(), config.workers);
        for id in store.pending_jobs() {
            log::info!("re-queueing job {id}");
            queue.submit(id);
        }
        Ok(Self { store, queue })
    }
}

pub fn router(state: AppState) -> axum::Router {
    routes::router(state)
}

pub async fn serve(config: ServerConfig, addr: SocketAddr) -> std::io::Result<()> {
    let state = AppState::start(&config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
