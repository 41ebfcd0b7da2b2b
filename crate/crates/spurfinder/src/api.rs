//! JSON API over the run store, plus counterfactual submission.
//!
//! Reads go straight to the committed files and never take the run lock.
//! Writes need the lock; the server takes it at startup and retries on
//! each submission when a CLI writer held it first.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use spurfinder_core::{Caption, ContentHash, CoreError, LabelId};
use spurfinder_engine::discovery::{Hypothesis, Origin};
use spurfinder_engine::pipeline::{self, parse_cluster_id, ClusterSet};
use spurfinder_engine::{Engine, Progress};
use spurfinder_store::{RecordKind, RunReader, StoreError};

use crate::config::Context;
use crate::error::{AppError, AppResult};
use crate::jobs::{JobKind, JobQueue};

/// Thumbnails listed per cluster.
pub const THUMBNAIL_CAP: usize = 24;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": msg.into() }),
        }
    }

    fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NoSuchRun(_) | StoreError::InvalidRunId(_) | StoreError::MissingBlob(_) => {
                Self::new(StatusCode::NOT_FOUND, e.to_string())
            }
            StoreError::Locked { .. } => Self::new(StatusCode::CONFLICT, e.to_string()),
            e => Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        let status = match e {
            AppError::User(_) => StatusCode::BAD_REQUEST,
            AppError::Locked(_) => StatusCode::CONFLICT,
            AppError::Service(_) => StatusCode::BAD_GATEWAY,
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub struct ApiState {
    root: PathBuf,
    ctx: Arc<Context>,
    writer: Mutex<Option<Arc<Engine>>>,
    jobs: JobQueue,
}

impl ApiState {
    /// Must be called inside a tokio runtime; spawns the job workers.
    pub fn new(root: PathBuf, ctx: Arc<Context>) -> AppResult<Arc<Self>> {
        let state = ApiState {
            jobs: JobQueue::new(ctx.config.server.workers),
            root,
            ctx,
            writer: Mutex::new(None),
        };
        match state.writer() {
            Ok(_) => {}
            Err(AppError::Locked(msg)) => tracing::warn!("{msg}; serving read-only until it is released"),
            Err(e) => return Err(e),
        }
        Ok(Arc::new(state))
    }

    pub fn run_id(&self) -> String {
        self.ctx.run_id()
    }

    /// The engine writing the served run, opening the run on first use.
    fn writer(&self) -> AppResult<Arc<Engine>> {
        let mut w = self.writer.lock().expect("writer slot poisoned");
        if let Some(e) = w.as_ref() {
            return Ok(e.clone());
        }
        let run = self.ctx.open_run(&self.root)?;
        let engine = Arc::new(self.ctx.engine(Some(run))?);
        *w = Some(engine.clone());
        Ok(engine)
    }

    fn reader(&self, run: Option<&str>) -> ApiResult<RunReader> {
        let id = run.map_or_else(|| self.run_id(), str::to_string);
        Ok(RunReader::open(&self.root, &id)?)
    }
}

#[derive(Debug, Deserialize)]
pub struct RunQuery {
    run: Option<String>,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    run_id: String,
    created: u64,
    config_hash: String,
    records: usize,
    served: bool,
}

async fn list_runs(State(s): State<Arc<ApiState>>) -> ApiResult<Json<Vec<RunSummary>>> {
    let served = s.run_id();
    let mut out = Vec::new();
    for id in RunReader::list(&s.root)? {
        let r = RunReader::open(&s.root, &id)?;
        out.push(RunSummary {
            served: id == served,
            run_id: id,
            created: r.info().created,
            config_hash: r.info().config_hash.clone(),
            records: r.records().len(),
        });
    }
    Ok(Json(out))
}

#[derive(Debug, Serialize)]
struct HypothesisSummary {
    id: String,
    key: String,
    label: LabelId,
    target: Option<LabelId>,
    caption: String,
    origin: Origin,
    confirmed: bool,
    n: u64,
    rate: f64,
    baseline_rate: f64,
    ratio_any: Option<f64>,
    ratio_target: Option<f64>,
}

async fn run_hypotheses(
    State(s): State<Arc<ApiState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<HypothesisSummary>>> {
    let reader = s.reader(Some(&id))?;
    let mut out = Vec::new();
    for rec in reader.records().iter().filter(|r| r.kind == RecordKind::Hypothesis) {
        let h: Hypothesis = rec.decode()?;
        out.push(HypothesisSummary {
            id: rec.id(),
            key: rec.key.clone(),
            caption: h.caption.render(),
            n: h.measurement.n,
            rate: h.measurement.primary_rate().p,
            baseline_rate: h.baseline.primary_rate().p,
            label: h.label,
            target: h.target,
            origin: h.origin,
            confirmed: h.confirmed,
            ratio_any: h.ratio_any,
            ratio_target: h.ratio_target,
        });
    }
    Ok(Json(out))
}

/// The stored record, exactly as written: `{"id": ..., "value": ...}`.
async fn get_hypothesis(
    State(s): State<Arc<ApiState>>,
    Path(id): Path<String>,
    Query(q): Query<RunQuery>,
) -> ApiResult<Json<Value>> {
    let reader = s.reader(q.run.as_deref())?;
    let rec = reader
        .by_id(&id)
        .filter(|r| r.kind == RecordKind::Hypothesis)
        .ok_or_else(|| ApiError::not_found(format_args!("hypothesis `{id}`")))?;
    Ok(Json(json!({ "id": rec.id(), "value": rec.body })))
}

async fn get_cluster(
    State(s): State<Arc<ApiState>>,
    Path(id): Path<String>,
    Query(q): Query<RunQuery>,
) -> ApiResult<Json<Value>> {
    let missing = || ApiError::not_found(format_args!("cluster `{id}`"));
    let (set_id, index) = parse_cluster_id(&id).ok_or_else(missing)?;
    let reader = s.reader(q.run.as_deref())?;
    let rec = reader
        .by_id(set_id)
        .filter(|r| r.kind == RecordKind::Cluster)
        .ok_or_else(missing)?;
    let set: ClusterSet = rec.decode()?;
    let cluster = set.clusters.get(index).ok_or_else(missing)?;
    let members: Vec<Value> = cluster
        .members
        .iter()
        .map(|m| {
            json!({
                "image": m.image,
                "prompt": m.prompt.render(),
                "seed": m.seed,
                "index": m.index,
                "prediction": m.prediction,
            })
        })
        .collect();
    let thumbnails: Vec<String> = cluster
        .members
        .iter()
        .take(THUMBNAIL_CAP)
        .map(|m| format!("/api/images/{}.png", m.image))
        .collect();
    Ok(Json(json!({
        "id": id,
        "baseline_ref": set.baseline_ref,
        "predicted_label": cluster.predicted_label,
        "size": cluster.members.len(),
        "members": members,
        "thumbnails": thumbnails,
    })))
}

#[derive(Debug, Deserialize)]
pub struct CounterfactualRequest {
    pub caption: String,
    pub label: String,
    #[serde(default)]
    pub target: Option<String>,
}

fn caption_error(e: CoreError) -> ApiError {
    let body = match &e {
        CoreError::Caption(p) => json!({
            "error": e.to_string(),
            "position": p.position,
            "expected": p.expected,
        }),
        CoreError::BasePromptMismatch { expected, .. } => json!({
            "error": e.to_string(),
            "position": 0,
            "expected": format!("base prompt `{expected}`"),
        }),
        _ => json!({ "error": e.to_string() }),
    };
    ApiError {
        status: StatusCode::BAD_REQUEST,
        body,
    }
}

async fn post_counterfactual(
    State(s): State<Arc<ApiState>>,
    Json(req): Json<CounterfactualRequest>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let h = &s.ctx.hierarchy;
    let label = h
        .resolve(&req.label)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let target = match &req.target {
        Some(t) => Some(h.resolve(t).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?),
        None => None,
    };
    Caption::parse_for_label(&req.caption, &label, h).map_err(caption_error)?;
    let engine = s.writer()?;
    let text = req.caption;
    let job_id = s.jobs.submit(
        JobKind::Measure,
        Box::new(move |progress| {
            Box::pin(async move {
                // the baseline's samples are not part of this job's counters
                pipeline::baseline(&engine, &label, target.as_ref(), &Progress::default())
                    .await
                    .map_err(|e| e.to_string())?;
                let h = pipeline::measure(&engine, &text, &label, target.as_ref(), &progress)
                    .await
                    .map_err(|e| e.to_string())?;
                // a stored result is returned without sampling; settle the
                // counters on what the record says
                let seen = progress.snapshot();
                let m = &h.value.measurement;
                progress.record(
                    m.n.saturating_sub(seen.sampled),
                    m.any_failures.saturating_sub(seen.failures),
                );
                Ok(h.id)
            })
        }),
    );
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))))
}

async fn get_job(State(s): State<Arc<ApiState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let job = s.jobs.get(&id).ok_or_else(|| ApiError::not_found(format_args!("job `{id}`")))?;
    Ok(Json(serde_json::to_value(job).expect("job serializes")))
}

async fn get_image(
    State(s): State<Arc<ApiState>>,
    Path(file): Path<String>,
    Query(q): Query<RunQuery>,
) -> ApiResult<Response> {
    let hash = file
        .strip_suffix(".png")
        .and_then(|h| ContentHash::from_str(h).ok())
        .ok_or_else(|| ApiError::not_found(format_args!("image `{file}`")))?;
    let png = s.reader(q.run.as_deref())?.blobs().get(&hash)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such route")
}

pub fn router(state: Arc<ApiState>) -> Router {
    Router::new()
        .route("/api/runs", get(list_runs))
        .route("/api/runs/{id}/hypotheses", get(run_hypotheses))
        .route("/api/hypotheses/{id}", get(get_hypothesis))
        .route("/api/clusters/{id}", get(get_cluster))
        .route("/api/counterfactual", post(post_counterfactual))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/images/{file}", get(get_image))
        .fallback(fallback)
        .with_state(state)
}

pub async fn serve(state: Arc<ApiState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
