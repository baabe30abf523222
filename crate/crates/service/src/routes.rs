use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::json;
use smoothdate_core::pipeline::{evaluate, project_year_centers, YearProjection};
use smoothdate_core::{
    DocumentRecord, Provenance, RankedHit, RelevanceMatrix, RelevanceSpec, YearEstimate,
};

use crate::error::ApiError;
use crate::state::{MatrixVersionInfo, RetrainJob, RetrainPlan, SharedState};

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/query", post(query))
        .route("/feedback/label", post(feedback_label))
        .route("/relevance-matrix", get(get_matrix).put(put_matrix))
        .route("/relevance-matrix/versions", get(list_matrices))
        .route("/retrain", post(retrain))
        .route("/retrain/{job_id}", get(get_job))
        .route("/projection", get(projection))
        .route("/metrics", get(metrics))
        .fallback(|| async { ApiError::not_found("not_found", "no such endpoint") })
        .with_state(state)
}

/// JSON body extractor whose rejections are [`ApiError`]s.
pub struct Body<T>(pub T);

impl<S, T> FromRequest<S> for Body<T>
where
    axum::Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match axum::Json::<T>::from_request(req, state).await {
            Ok(axum::Json(v)) => Ok(Body(v)),
            Err(rejection) => Err(ApiError::new(
                rejection.status(),
                "bad_request",
                rejection.body_text(),
            )),
        }
    }
}

pub struct Reply<T>(pub T);

impl<T: Serialize> IntoResponse for Reply<T> {
    fn into_response(self) -> Response {
        axum::Json(self.0).into_response()
    }
}

type ApiResult<T> = Result<Reply<T>, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_version: Option<String>,
    pub previous_model_version: Option<String>,
    pub matrix_version: String,
    pub index_size: usize,
}

async fn health(State(state): State<SharedState>) -> ApiResult<Health> {
    let snap = state.snapshot();
    Ok(Reply(Health {
        status: "ok".into(),
        model_version: snap.model_version.clone(),
        previous_model_version: snap.previous_model_version.clone(),
        matrix_version: state.matrices.read().expect("matrix lock").current().0,
        index_size: snap.index.len(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    #[serde(default)]
    pub features: Option<Vec<f64>>,
    #[serde(default)]
    pub doc_id: Option<String>,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub k_estimate: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub model_version: String,
    /// Matrix version the served model was trained with, if known.
    pub matrix_version: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub hits: Vec<RankedHit>,
    pub estimate: YearEstimate,
    pub meta: Meta,
}

async fn query(
    State(state): State<SharedState>,
    Body(req): Body<QueryRequest>,
) -> ApiResult<QueryResponse> {
    // Everything below reads from this one snapshot.
    let snap = state.snapshot();
    let model = snap.require_model()?;
    let embedding = match (&req.features, &req.doc_id) {
        (Some(_), Some(_)) | (None, None) => {
            return Err(ApiError::bad_request(
                "exactly one of `features` or `doc_id` is required",
            ))
        }
        (Some(features), None) => {
            if features.len() != model.input_dim() {
                return Err(ApiError::unprocessable(
                    "dimension_mismatch",
                    format!(
                        "expected {} features, found {}",
                        model.input_dim(),
                        features.len()
                    ),
                ));
            }
            model.embed(features)?
        }
        (None, Some(id)) => snap
            .index
            .get(id)
            .ok_or_else(|| ApiError::not_found("unknown_doc", format!("no indexed document {id}")))?
            .embedding
            .clone(),
    };
    let top_k = req.top_k.unwrap_or(state.config.retrieval.top_k);
    let k = req.k_estimate.unwrap_or(state.config.retrieval.k);
    if snap.index.is_empty() {
        return Err(smoothdate_core::Error::EmptyIndex.into());
    }
    let hits = snap.index.query(&embedding, top_k.min(snap.index.len()))?;
    let estimate = snap
        .index
        .estimate_year(&embedding, k, state.config.retrieval.weighting)?;
    Ok(Reply(QueryResponse {
        hits,
        estimate,
        meta: Meta {
            model_version: snap.model_version.clone().expect("model implies version"),
            matrix_version: snap.matrix_version.clone(),
        },
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRequest {
    pub doc_id: String,
    pub features: Vec<f64>,
    pub year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelResponse {
    pub index_size: usize,
}

async fn feedback_label(
    State(state): State<SharedState>,
    Body(req): Body<LabelRequest>,
) -> ApiResult<LabelResponse> {
    let record = DocumentRecord::labeled(req.doc_id, req.features, req.year);
    let index_size = tokio::task::spawn_blocking(move || state.add_feedback(record))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Reply(LabelResponse { index_size }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixResponse {
    pub version: String,
    pub matrix: RelevanceMatrix,
}

#[derive(Debug, Deserialize)]
struct VersionParam {
    version: Option<String>,
}

async fn get_matrix(
    State(state): State<SharedState>,
    Query(param): Query<VersionParam>,
) -> ApiResult<MatrixResponse> {
    let store = state.matrices.read().expect("matrix lock");
    let (version, matrix) = match param.version {
        Some(v) => {
            let m = store.get(&v).ok_or_else(|| unknown_matrix(&v))?;
            (v, m)
        }
        None => store.current(),
    };
    Ok(Reply(MatrixResponse {
        version,
        matrix: (*matrix).clone(),
    }))
}

async fn list_matrices(State(state): State<SharedState>) -> ApiResult<Vec<MatrixVersionInfo>> {
    Ok(Reply(state.matrices.read().expect("matrix lock").list()))
}

fn unknown_matrix(v: &str) -> ApiError {
    ApiError::not_found("unknown_matrix_version", format!("no matrix version {v}"))
}

/// Body of `PUT /relevance-matrix` when it is an edit rather than a full
/// replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixEdit {
    Boost {
        lo: i32,
        hi: i32,
        factor: f64,
    },
    Set {
        query_year: i32,
        item_year: i32,
        value: f64,
    },
}

/// A full matrix as submitted by a client; checked cell by cell.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixPayload {
    years: Vec<i32>,
    values: Vec<Vec<f64>>,
    #[serde(default)]
    provenance: Option<Provenance>,
    #[serde(default)]
    spec: Option<RelevanceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PutMatrixResponse {
    pub version: String,
    pub parent: String,
    /// Rows changed by a boost; absent for other edits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows_affected: Option<usize>,
}

async fn put_matrix(
    State(state): State<SharedState>,
    Body(body): Body<serde_json::Value>,
) -> ApiResult<PutMatrixResponse> {
    let mut store = state.matrices.write().expect("matrix lock");
    let (parent, current) = store.current();
    let mut rows_affected = None;
    let next = if body.get("op").is_some() {
        let edit: MatrixEdit = serde_json::from_value(body)
            .map_err(|e| ApiError::unprocessable("invalid_edit", e.to_string()))?;
        match edit {
            MatrixEdit::Boost { lo, hi, factor } => {
                let out = current.boost_region(lo, hi, factor)?;
                rows_affected = Some(out.rows_affected);
                out.matrix
            }
            MatrixEdit::Set {
                query_year,
                item_year,
                value,
            } => current.set_cell(query_year, item_year, value)?,
        }
    } else {
        let payload: MatrixPayload = serde_json::from_value(body)
            .map_err(|e| ApiError::unprocessable("invalid_matrix", e.to_string()))?;
        validate_payload(&payload)?;
        RelevanceMatrix::from_parts(
            payload.years,
            payload.values,
            payload.provenance.unwrap_or(Provenance::Edited),
            payload.spec,
        )?
    };
    let version = store.push(next, Some(parent.clone()));
    Ok(Reply(PutMatrixResponse {
        version,
        parent,
        rows_affected,
    }))
}

fn validate_payload(p: &MatrixPayload) -> Result<(), ApiError> {
    let mut cells: Vec<serde_json::Value> = RelevanceMatrix::check_parts(&p.years, &p.values)
        .into_iter()
        .map(|c| json!({ "row": c.row, "col": c.col, "message": c.message }))
        .collect();
    for (i, w) in p.years.windows(2).enumerate() {
        if w[0] >= w[1] {
            cells.push(json!({
                "row": i + 1,
                "col": null,
                "message": format!("years must be strictly increasing ({} then {})", w[0], w[1]),
            }));
        }
    }
    if p.years.is_empty() {
        cells.push(json!({ "row": null, "col": null, "message": "year list is empty" }));
    }
    if cells.is_empty() {
        return Ok(());
    }
    Err(
        ApiError::unprocessable("invalid_matrix", format!("{} invalid cell(s)", cells.len()))
            .with_details(json!({ "cells": cells })),
    )
}

/// Body of `POST /retrain`: optional overrides of the configured training
/// hyperparameters plus the matrix version to train with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrainRequest {
    pub matrix_version: Option<String>,
    pub eta: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_iterations: Option<usize>,
    pub seed: Option<u64>,
    pub momentum: Option<f64>,
    pub tau: Option<f64>,
    /// Continue from the served model instead of a fresh initialization.
    pub warm_start: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainResponse {
    pub job_id: String,
}

async fn retrain(
    State(state): State<SharedState>,
    Body(req): Body<RetrainRequest>,
) -> ApiResult<RetrainResponse> {
    let mut section = state.config.training.clone();
    section.eta = req.eta.unwrap_or(section.eta);
    section.batch_size = req.batch_size.unwrap_or(section.batch_size);
    section.max_iterations = req.max_iterations.unwrap_or(section.max_iterations);
    section.seed = req.seed.unwrap_or(section.seed);
    section.momentum = req.momentum.unwrap_or(section.momentum);
    section.tau = req.tau.unwrap_or(section.tau);
    let config = section.training_config();
    let loss = section.loss_config();
    config.validate()?;
    loss.validate()?;

    let matrix_version = {
        let store = state.matrices.read().expect("matrix lock");
        match req.matrix_version {
            Some(v) => {
                store.get(&v).ok_or_else(|| unknown_matrix(&v))?;
                v
            }
            None => store.current().0,
        }
    };
    if state.feature_dim.is_none() || state.train.is_empty() {
        return Err(ApiError::conflict(
            "no_training_data",
            "no training data is loaded",
        ));
    }
    let plan = RetrainPlan {
        config,
        loss,
        warm_start: req.warm_start,
        matrix_version,
    };
    let job_id = state.submit_job(&plan)?;
    let worker = Arc::clone(&state);
    let id = job_id.clone();
    tokio::task::spawn_blocking(move || worker.run_job(&id, plan));
    Ok(Reply(RetrainResponse { job_id }))
}

async fn get_job(
    State(state): State<SharedState>,
    Path(job_id): Path<String>,
) -> ApiResult<RetrainJob> {
    let jobs = state.jobs.lock().expect("jobs lock");
    jobs.get(&job_id)
        .cloned()
        .map(Reply)
        .ok_or_else(|| ApiError::not_found("unknown_job", format!("no retrain job {job_id}")))
}

async fn projection(State(state): State<SharedState>) -> ApiResult<YearProjection> {
    let snap = state.snapshot();
    snap.require_model()?;
    Ok(Reply(project_year_centers(&snap.index)?))
}

#[derive(Debug, Deserialize)]
struct SplitParam {
    split: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub mae: f64,
    pub map: f64,
    pub n_queries: usize,
}

async fn metrics(
    State(state): State<SharedState>,
    Query(param): Query<SplitParam>,
) -> ApiResult<MetricsResponse> {
    match param.split.as_deref() {
        None | Some("test") => {}
        Some(other) => {
            return Err(ApiError::bad_request(format!(
                "unsupported split `{other}`; only `test` is evaluated"
            )))
        }
    }
    let snap = state.snapshot();
    snap.require_model()?;
    if state.test.is_empty() {
        return Err(ApiError::conflict(
            "no_test_split",
            "no test split is loaded",
        ));
    }
    let worker = Arc::clone(&state);
    let eval = tokio::task::spawn_blocking(move || {
        evaluate(
            snap.model.as_deref().expect("checked above"),
            &snap.index,
            &worker.test,
            worker.config.retrieval.k,
            worker.config.retrieval.weighting,
        )
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Reply(MetricsResponse {
        mae: eval.mae,
        map: eval.map,
        n_queries: eval.n,
    }))
}
