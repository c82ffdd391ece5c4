//! In-memory registries mirrored to a data directory:
//!
//! ```text
//! <root>/datasets/<id>.tsv
//! <root>/priors/<id>.json
//! <root>/jobs/<id>.json            state, spec, error, run metadata
//! <root>/jobs/<id>.embedding.tsv   final embedding of finished jobs
//! <root>/cache/                    affinity cache shared by all jobs
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use ctsne_core::data::{load_dataset, Format};
use ctsne_core::pipeline::EmbedParams;
use ctsne_core::{Dataset, EmbeddingMatrix, LabelVector, RunMetadata};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Provenance {
    UploadedColumn { column: String },
    UiSelection { sets: usize },
    Combined { priors: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorRecord {
    pub id: String,
    pub dataset_id: String,
    pub provenance: Provenance,
    pub labels: LabelVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Finished,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub dataset_id: String,
    #[serde(default)]
    pub prior_id: Option<String>,
    #[serde(default)]
    pub params: EmbedParams,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub restart: usize,
    pub iteration: usize,
    pub objective: f64,
    pub embedding: EmbeddingMatrix,
}

#[derive(Debug, Clone)]
pub struct JobRecord {
    pub id: String,
    pub spec: JobSpec,
    pub state: JobState,
    pub snapshot: Option<Snapshot>,
    pub embedding: Option<EmbeddingMatrix>,
    pub metadata: Option<RunMetadata>,
    pub error: Option<String>,
}

/// What goes into `jobs/<id>.json`.
#[derive(Debug, Serialize, Deserialize)]
struct JobFile {
    id: String,
    spec: JobSpec,
    state: JobState,
    error: Option<String>,
    metadata: Option<RunMetadata>,
}

pub type Shared<T> = Arc<Mutex<T>>;

pub struct Store {
    root: PathBuf,
    datasets: RwLock<HashMap<String, Arc<Dataset>>>,
    priors: RwLock<HashMap<String, Arc<PriorRecord>>>,
    jobs: RwLock<HashMap<String, Shared<JobRecord>>>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

fn new_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

impl Store {
    /// Opens (or creates) a store and loads everything already on disk.
    /// Jobs that were queued or running when the previous process stopped
    /// come back as queued; see [`Store::pending_jobs`].
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        for sub in ["datasets", "priors", "jobs", "cache"] {
            fs::create_dir_all(root.join(sub))?;
        }
        let store = Self {
            root,
            datasets: RwLock::default(),
            priors: RwLock::default(),
            jobs: RwLock::default(),
        };
        store.load()?;
        Ok(store)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    fn entries(&self, sub: &str, suffix: &str) -> std::io::Result<Vec<(String, PathBuf)>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join(sub))? {
            let path = entry?.path();
            let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
            if let Some(id) = name.strip_suffix(suffix) {
                if !id.contains('.') {
                    out.push((id.to_string(), path.clone()));
                }
            }
        }
        Ok(out)
    }

    fn load(&self) -> std::io::Result<()> {
        let bad = |p: &Path, e: &dyn std::fmt::Display| std::io::Error::other(format!("{}: {e}", p.display()));
        for (id, path) in self.entries("datasets", ".tsv")? {
            let data = load_dataset(&path, Format::Tsv).map_err(|e| bad(&path, &e))?;
            self.datasets.write().unwrap().insert(id, Arc::new(data));
        }
        for (id, path) in self.entries("priors", ".json")? {
            let rec: PriorRecord = serde_json::from_slice(&fs::read(&path)?).map_err(|e| bad(&path, &e))?;
            self.priors.write().unwrap().insert(id, Arc::new(rec));
        }
        for (id, path) in self.entries("jobs", ".json")? {
            let file: JobFile = serde_json::from_slice(&fs::read(&path)?).map_err(|e| bad(&path, &e))?;
            let embedding = match file.state {
                JobState::Finished => {
                    let p = self.embedding_path(&id);
                    Some(EmbeddingMatrix::load_tsv(&p).map_err(|e| bad(&p, &e))?)
                }
                _ => None,
            };
            let state = match file.state {
                JobState::Running => JobState::Queued,
                s => s,
            };
            let rec = JobRecord {
                id: file.id,
                spec: file.spec,
                state,
                snapshot: None,
                embedding,
                metadata: file.metadata,
                error: file.error,
            };
            self.jobs.write().unwrap().insert(id, Arc::new(Mutex::new(rec)));
        }
        Ok(())
    }

    pub fn insert_dataset(&self, data: Dataset) -> std::io::Result<(String, Arc<Dataset>)> {
        let id = new_id();
        let mut buf = Vec::new();
        data.write_tsv(&mut buf)?;
        write_atomic(&self.root.join("datasets").join(format!("{id}.tsv")), &buf)?;
        let data = Arc::new(data);
        self.datasets.write().unwrap().insert(id.clone(), data.clone());
        Ok((id, data))
    }

    pub fn dataset(&self, id: &str) -> Option<Arc<Dataset>> {
        self.datasets.read().unwrap().get(id).cloned()
    }

    pub fn insert_prior(&self, dataset_id: &str, provenance: Provenance, labels: LabelVector) -> std::io::Result<Arc<PriorRecord>> {
        let rec = PriorRecord {
            id: new_id(),
            dataset_id: dataset_id.to_string(),
            provenance,
            labels,
        };
        let json = serde_json::to_vec(&rec).map_err(std::io::Error::other)?;
        write_atomic(&self.root.join("priors").join(format!("{}.json", rec.id)), &json)?;
        let rec = Arc::new(rec);
        self.priors.write().unwrap().insert(rec.id.clone(), rec.clone());
        Ok(rec)
    }

    pub fn prior(&self, id: &str) -> Option<Arc<PriorRecord>> {
        self.priors.read().unwrap().get(id).cloned()
    }

    pub fn insert_job(&self, spec: JobSpec) -> std::io::Result<Shared<JobRecord>> {
        let rec = JobRecord {
            id: new_id(),
            spec,
            state: JobState::Queued,
            snapshot: None,
            embedding: None,
            metadata: None,
            error: None,
        };
        self.persist_job(&rec)?;
        let id = rec.id.clone();
        let rec = Arc::new(Mutex::new(rec));
        self.jobs.write().unwrap().insert(id, rec.clone());
        Ok(rec)
    }

    pub fn job(&self, id: &str) -> Option<Shared<JobRecord>> {
        self.jobs.read().unwrap().get(id).cloned()
    }

    /// Ids of queued jobs, oldest file first is not tracked, so sorted by id
    /// for a stable order.
    pub fn pending_jobs(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .jobs
            .read()
            .unwrap()
            .iter()
            .filter(|(_, j)| j.lock().unwrap().state == JobState::Queued)
            .map(|(id, _)| id.clone())
            .collect();
        ids.sort();
        ids
    }

    pub fn embedding_path(&self, job_id: &str) -> PathBuf {
        self.root.join("jobs").join(format!("{job_id}.embedding.tsv"))
    }

    /// Writes the job file, and the embedding file once the job finished.
    pub fn persist_job(&self, rec: &JobRecord) -> std::io::Result<()> {
        if let (JobState::Finished, Some(y)) = (rec.state, &rec.embedding) {
            let mut buf = Vec::new();
            y.write_tsv(&mut buf)?;
            write_atomic(&self.embedding_path(&rec.id), &buf)?;
        }
        let file = JobFile {
            id: rec.id.clone(),
            spec: rec.spec.clone(),
            state: rec.state,
            error: rec.error.clone(),
            metadata: rec.metadata.clone(),
        };
        let json = serde_json::to_vec_pretty(&file).map_err(std::io::Error::other)?;
        write_atomic(&self.root.join("jobs").join(format!("{}.json", rec.id)), &json)
    }
}
