//! Job queue. One channel, `workers` consumers; each job runs on the
//! blocking pool and owns its own optimizer state.

use std::sync::Arc;

use ctsne_core::pipeline::embed_with_observer;
use ctsne_core::{Error, Result};
use tokio::sync::{mpsc, Mutex};

use crate::store::{JobRecord, JobState, Shared, Snapshot, Store};

/// Snapshots are never more than this many iterations behind.
pub const MAX_SNAPSHOT_LAG: usize = 50;

#[derive(Clone)]
pub struct JobQueue {
    tx: mpsc::UnboundedSender<String>,
}

impl JobQueue {
    pub fn start(store: Arc<Store>, workers: usize) -> Self {
        let (tx, rx) = mpsc::unbounded_channel::<String>();
        let rx = Arc::new(Mutex::new(rx));
        for _ in 0..workers {
            let (store, rx) = (store.clone(), rx.clone());
            tokio::spawn(async move {
                loop {
                    let next = rx.lock().await.recv().await;
                    let Some(id) = next else { break };
                    let store = store.clone();
                    if let Err(e) = tokio::task::spawn_blocking(move || run_job(&store, &id)).await {
                        log::error!("job worker panicked: {e}");
                    }
                }
            });
        }
        Self { tx }
    }

    pub fn submit(&self, id: String) {
        // Only fails once every worker has exited, i.e. at shutdown.
        let _ = self.tx.send(id);
    }
}

fn persist(store: &Store, rec: &JobRecord) {
    if let Err(e) = store.persist_job(rec) {
        log::error!("persisting job {}: {e}", rec.id);
    }
}

fn run_job(store: &Store, id: &str) {
    let Some(job) = store.job(id) else {
        log::warn!("queued job {id} vanished");
        return;
    };
    let spec = {
        let mut rec = job.lock().unwrap();
        if rec.state != JobState::Queued {
            return;
        }
        rec.state = JobState::Running;
        persist(store, &rec);
        rec.spec.clone()
    };
    log::info!("job {id} running");
    let outcome = execute(store, &job, &spec);
    let mut rec = job.lock().unwrap();
    match outcome {
        Ok(result) => {
            rec.state = JobState::Finished;
            rec.embedding = Some(result.embedding);
            rec.metadata = Some(result.metadata);
            log::info!("job {id} finished");
        }
        Err(e) => {
            rec.state = JobState::Failed;
            rec.error = Some(e.to_string());
            log::warn!("job {id} failed: {e}");
        }
    }
    persist(store, &rec);
}

fn execute(store: &Store, job: &Shared<JobRecord>, spec: &crate::store::JobSpec) -> Result<ctsne_core::EmbeddingResult> {
    let data = store
        .dataset(&spec.dataset_id)
        .ok_or_else(|| Error::invalid(format!("dataset {} no longer exists", spec.dataset_id)))?;
    let prior = match &spec.prior_id {
        Some(pid) => Some(store.prior(pid).ok_or_else(|| Error::invalid(format!("prior {pid} no longer exists")))?),
        None => None,
    };
    let mut params = spec.params.clone();
    params.cache_dir = Some(store.cache_dir());
    params.optimizer.trace_every = params.optimizer.trace_every.clamp(1, MAX_SNAPSHOT_LAG);
    embed_with_observer(&data, prior.as_ref().map(|p| &p.labels), &params, &mut |p| {
        job.lock().unwrap().snapshot = Some(Snapshot {
            restart: p.restart,
            iteration: p.iteration,
            objective: p.objective,
            embedding: p.embedding.clone(),
        });
    })
}
