use std::collections::HashSet;
use std::io::Cursor;
use std::path::Path;

use axum::body::Bytes;
use axum::extract::{FromRequest, FromRequestParts, Path as UrlPath, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ctsne_core::data::{read_dataset, Format, LoadOptions};
use ctsne_core::evaluation::feature_rank;
use ctsne_core::{combine_labels, Dataset, LabelVector, RunMetadata};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::store::{JobSpec, JobState, PriorRecord, Provenance};
use crate::wire::{self, EmbeddingHeader};
use crate::AppState;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", post(upload_dataset))
        .route("/datasets/{id}/meta", get(dataset_meta))
        .route("/priors", post(make_prior))
        .route("/priors/{id}", get(get_prior))
        .route("/jobs", post(submit_job))
        .route("/jobs/{id}", get(job_status))
        .route("/jobs/{id}/embedding", get(job_embedding))
        .route("/rank", post(rank))
        .with_state(state)
}

/// JSON request body. Unlike `Json`, no content type is required and
/// failures come back as [`ApiError`] bodies.
pub struct JsonBody<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::invalid(e.body_text()))?;
        serde_json::from_slice(&bytes)
            .map(JsonBody)
            .map_err(|e| ApiError::invalid(format!("request body: {e}")))
    }
}

pub struct QueryArgs<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for QueryArgs<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(q)| QueryArgs(q))
            .map_err(|e| ApiError::invalid(e.body_text()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub id: String,
    pub n: usize,
    pub d: usize,
    pub attribute_names: Vec<String>,
}

impl DatasetMeta {
    fn new(id: String, data: &Dataset) -> Self {
        Self {
            id,
            n: data.n(),
            d: data.d(),
            attribute_names: data.attribute_names().to_vec(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
struct UploadQuery {
    format: Option<Format>,
}

async fn upload_dataset(
    State(st): State<AppState>,
    QueryArgs(q): QueryArgs<UploadQuery>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<DatasetMeta>)> {
    let format = q.format.unwrap_or(Format::Tsv);
    let data = read_dataset(Cursor::new(body), format, &LoadOptions::default(), Path::new("upload"))?;
    let (id, data) = st.store.insert_dataset(data).map_err(|e| ApiError::internal(e.to_string()))?;
    log::info!("dataset {id}: {} x {}", data.n(), data.d());
    Ok((StatusCode::CREATED, Json(DatasetMeta::new(id, &data))))
}

async fn dataset_meta(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<DatasetMeta>> {
    let data = st.store.dataset(&id).ok_or_else(|| ApiError::not_found("dataset", &id))?;
    Ok(Json(DatasetMeta::new(id, &data)))
}

/// A column given by header name or 0-based position.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ColumnSel {
    Index(usize),
    Name(String),
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PriorSource {
    Column { column: ColumnSel },
    /// Disjoint index sets; each becomes one label, everything else one
    /// background label.
    Selections { sets: Vec<Vec<usize>> },
    Combine { priors: Vec<String> },
}

#[derive(Debug, Deserialize)]
pub struct PriorRequest {
    pub dataset_id: String,
    pub source: PriorSource,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PriorView {
    pub id: String,
    pub dataset_id: String,
    pub provenance: Provenance,
    pub num_classes: usize,
    pub class_sizes: Vec<usize>,
    pub class_names: Vec<String>,
    pub labels: Vec<usize>,
}

impl From<&PriorRecord> for PriorView {
    fn from(r: &PriorRecord) -> Self {
        Self {
            id: r.id.clone(),
            dataset_id: r.dataset_id.clone(),
            provenance: r.provenance.clone(),
            num_classes: r.labels.num_classes(),
            class_sizes: r.labels.class_sizes().to_vec(),
            class_names: r.labels.names().to_vec(),
            labels: r.labels.labels().to_vec(),
        }
    }
}

fn column_labels(data: &Dataset, column: &ColumnSel) -> ApiResult<(String, LabelVector)> {
    let names = data.attribute_names();
    let j = match column {
        ColumnSel::Index(j) if *j < names.len() => *j,
        ColumnSel::Index(j) => return Err(ApiError::invalid(format!("column {j} out of range ({} columns)", names.len()))),
        ColumnSel::Name(name) => names
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ApiError::invalid(format!("no column named {name:?}")))?,
    };
    let labels = LabelVector::from_values(data.points().column(j).iter().map(|v| v.to_string()))?;
    Ok((names[j].clone(), labels))
}

pub const BACKGROUND_LABEL: &str = "background";

fn selection_labels(n: usize, sets: &[Vec<usize>]) -> ApiResult<LabelVector> {
    if sets.is_empty() {
        return Err(ApiError::invalid("no selection sets given"));
    }
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (k, set) in sets.iter().enumerate() {
        if set.is_empty() {
            return Err(ApiError::invalid(format!("selection {k} is empty")));
        }
        for &i in set {
            if i >= n {
                return Err(ApiError::invalid(format!("selection {k}: index {i} out of range for n = {n}")));
            }
            match owner[i] {
                Some(prev) if prev == k => return Err(ApiError::invalid(format!("selection {k}: index {i} repeated"))),
                Some(prev) => return Err(ApiError::invalid(format!("selections {prev} and {k} overlap at index {i}"))),
                None => owner[i] = Some(k),
            }
        }
    }
    let values = owner.iter().map(|o| match o {
        Some(k) => format!("selection {}", k + 1),
        None => BACKGROUND_LABEL.to_string(),
    });
    Ok(LabelVector::from_values(values)?)
}

async fn make_prior(State(st): State<AppState>, JsonBody(req): JsonBody<PriorRequest>) -> ApiResult<(StatusCode, Json<PriorView>)> {
    let data = st
        .store
        .dataset(&req.dataset_id)
        .ok_or_else(|| ApiError::not_found("dataset", &req.dataset_id))?;
    let (provenance, labels) = match &req.source {
        PriorSource::Column { column } => {
            let (name, labels) = column_labels(&data, column)?;
            (Provenance::UploadedColumn { column: name }, labels)
        }
        PriorSource::Selections { sets } => (Provenance::UiSelection { sets: sets.len() }, selection_labels(data.n(), sets)?),
        PriorSource::Combine { priors } => {
            let mut acc: Option<LabelVector> = None;
            for pid in priors {
                let p = st.store.prior(pid).ok_or_else(|| ApiError::not_found("prior", pid))?;
                if p.dataset_id != req.dataset_id {
                    return Err(ApiError::invalid(format!("prior {pid} belongs to another dataset")));
                }
                acc = Some(match acc {
                    None => p.labels.clone(),
                    Some(a) => combine_labels(&a, &p.labels)?,
                });
            }
            let labels = acc.ok_or_else(|| ApiError::invalid("combine needs at least one prior"))?;
            (Provenance::Combined { priors: priors.clone() }, labels)
        }
    };
    let rec = st
        .store
        .insert_prior(&req.dataset_id, provenance, labels)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok((StatusCode::CREATED, Json(PriorView::from(rec.as_ref()))))
}

async fn get_prior(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<PriorView>> {
    let rec = st.store.prior(&id).ok_or_else(|| ApiError::not_found("prior", &id))?;
    Ok(Json(PriorView::from(rec.as_ref())))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Submitted {
    pub id: String,
    pub state: JobState,
}

async fn submit_job(State(st): State<AppState>, JsonBody(spec): JsonBody<JobSpec>) -> ApiResult<(StatusCode, Json<Submitted>)> {
    let data = st
        .store
        .dataset(&spec.dataset_id)
        .ok_or_else(|| ApiError::not_found("dataset", &spec.dataset_id))?;
    if let Some(pid) = &spec.prior_id {
        let p = st.store.prior(pid).ok_or_else(|| ApiError::not_found("prior", pid))?;
        if p.dataset_id != spec.dataset_id {
            return Err(ApiError::invalid(format!("prior {pid} belongs to another dataset")));
        }
        debug_assert_eq!(p.labels.len(), data.n());
    }
    spec.params.validate()?;
    let job = st.store.insert_job(spec).map_err(|e| ApiError::internal(e.to_string()))?;
    let id = job.lock().unwrap().id.clone();
    st.queue.submit(id.clone());
    Ok((
        StatusCode::ACCEPTED,
        Json(Submitted {
            id,
            state: JobState::Queued,
        }),
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotView {
    pub restart: usize,
    pub iteration: usize,
    pub objective: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JobView {
    pub id: String,
    pub state: JobState,
    pub dataset_id: String,
    pub prior_id: Option<String>,
    pub snapshot: Option<SnapshotView>,
    pub error: Option<String>,
    pub metadata: Option<RunMetadata>,
}

async fn job_status(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<JobView>> {
    let job = st.store.job(&id).ok_or_else(|| ApiError::not_found("job", &id))?;
    let rec = job.lock().unwrap();
    Ok(Json(JobView {
        id: rec.id.clone(),
        state: rec.state,
        dataset_id: rec.spec.dataset_id.clone(),
        prior_id: rec.spec.prior_id.clone(),
        snapshot: rec.snapshot.as_ref().map(|s| SnapshotView {
            restart: s.restart,
            iteration: s.iteration,
            objective: s.objective,
        }),
        error: rec.error.clone(),
        metadata: rec.metadata.clone(),
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
enum EmbeddingFormat {
    #[default]
    Binary,
    Tsv,
}

#[derive(Debug, Default, Deserialize)]
struct EmbeddingQuery {
    #[serde(default)]
    format: EmbeddingFormat,
}

/// The final embedding once finished, otherwise the latest snapshot. Failed
/// jobs have none.
async fn job_embedding(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    QueryArgs(q): QueryArgs<EmbeddingQuery>,
) -> ApiResult<Response> {
    let job = st.store.job(&id).ok_or_else(|| ApiError::not_found("job", &id))?;
    let (header, y) = {
        let rec = job.lock().unwrap();
        if rec.state == JobState::Failed {
            let why = rec.error.as_deref().unwrap_or("unknown error");
            return Err(ApiError::conflict(format!("job {id} failed: {why}")));
        }
        match (&rec.embedding, &rec.snapshot) {
            (Some(y), _) => {
                let meta = rec.metadata.as_ref();
                let h = EmbeddingHeader {
                    n: y.n(),
                    d: y.dim(),
                    restart: meta.map_or(0, |m| m.best_restart),
                    iteration: meta.map_or(0, |m| m.iterations_run),
                    is_final: true,
                };
                (h, y.clone())
            }
            (None, Some(s)) => {
                let h = EmbeddingHeader {
                    n: s.embedding.n(),
                    d: s.embedding.dim(),
                    restart: s.restart,
                    iteration: s.iteration,
                    is_final: false,
                };
                (h, s.embedding.clone())
            }
            (None, None) => {
                let state = serde_json::to_value(rec.state).unwrap_or_default();
                return Err(ApiError::conflict(format!("job {id} has no embedding yet (state {state})")));
            }
        }
    };
    Ok(match q.format {
        EmbeddingFormat::Binary => ([(header::CONTENT_TYPE, "application/octet-stream")], wire::encode(&header, &y)).into_response(),
        EmbeddingFormat::Tsv => {
            let mut buf = Vec::new();
            y.write_tsv(&mut buf).map_err(|e| ApiError::internal(e.to_string()))?;
            ([(header::CONTENT_TYPE, "text/tab-separated-values")], buf).into_response()
        }
    })
}

#[derive(Debug, Deserialize)]
pub struct RankRequest {
    pub dataset_id: String,
    pub selection: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RankedAttribute {
    pub index: usize,
    pub name: String,
    pub weight: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RankResponse {
    /// Most discriminative first.
    pub attributes: Vec<RankedAttribute>,
    pub intercept: f64,
    pub converged: bool,
}

async fn rank(State(st): State<AppState>, JsonBody(req): JsonBody<RankRequest>) -> ApiResult<Json<RankResponse>> {
    let data = st
        .store
        .dataset(&req.dataset_id)
        .ok_or_else(|| ApiError::not_found("dataset", &req.dataset_id))?;
    let unique: HashSet<usize> = req.selection.iter().copied().collect();
    if unique.len() != req.selection.len() {
        return Err(ApiError::invalid("selection contains repeated indices"));
    }
    let r = tokio::task::spawn_blocking(move || feature_rank(&data, &req.selection))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(RankResponse {
        attributes: r
            .order
            .iter()
            .map(|&j| RankedAttribute {
                index: j,
                name: r.attribute_names[j].clone(),
                weight: r.weights[j],
            })
            .collect(),
        intercept: r.intercept,
        converged: r.converged,
    }))
}
