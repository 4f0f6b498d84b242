//! HTTP query service over an immutable [`Snapshot`].

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, PathRejection};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use omnitraj::data::Point;
use omnitraj::encoders::{supported_subsets, Modality, QueryInputs};
use omnitraj::nn::fingerprint_hex;
use omnitraj::retrieval::{condition_query, CoarseStage, Provenance, QuerySpec, RetrievalResult};
use omnitraj::Error;

use crate::snapshot::Snapshot;

/// Requests still running after this are answered with 503; their result is dropped.
pub const DEADLINE: Duration = Duration::from_secs(5);

pub fn router(snapshot: Arc<Snapshot>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/stats", get(stats))
        .route("/trajectories/{id}", get(trajectory))
        .route("/query", post(query))
        .route("/grid", get(grid))
        .route("/network", get(network))
        .with_state(snapshot)
}

pub async fn serve(snapshot: Arc<Snapshot>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("{}", json!({"listening": listener.local_addr()?.to_string()}));
    axum::serve(listener, router(snapshot)).await
}

pub struct ApiError {
    pub status: StatusCode,
    pub body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({"error": code, "message": message.into()}),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Parameter(_) | Error::Vocabulary { .. } | Error::Shape(_) | Error::Degenerate(_) => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.kind(), e.to_string())
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn pairs(points: &[Point]) -> Vec<[f64; 2]> {
    points.iter().map(|p| [p.x, p.y]).collect()
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn stats(State(s): State<Arc<Snapshot>>) -> Json<Value> {
    let stores: Vec<Value> = s
        .stores
        .iter()
        .map(|st| {
            json!({
                "modality": st.modality(),
                "rows": st.len(),
                "dim": st.width(),
                "fingerprint": fingerprint_hex(st.fingerprint()),
            })
        })
        .collect();
    let cfg = s.encoders.cfg();
    Json(json!({
        "trajectories": s.records.len(),
        "candidates": s.candidates(),
        "dim": cfg.h,
        "road_vocab": cfg.road_vocab,
        "region_vocab": cfg.region_vocab(),
        "checkpoint_fingerprint": fingerprint_hex(&s.encoders.fingerprint),
        "stores": stores,
        "supported_subsets": supported_subsets().iter().map(|m| m.name()).collect::<Vec<_>>(),
    }))
}

async fn trajectory(
    State(s): State<Arc<Snapshot>>,
    id: Result<Path<u64>, PathRejection>,
) -> Result<Json<Value>, ApiError> {
    let Path(id) = id.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_id", e.body_text()))?;
    let rec = s
        .records
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no trajectory {id}")))?;
    Ok(Json(json!({
        "id": id,
        "points": pairs(&rec.trajectory.points),
        "topology": rec.topology.as_ref().map(|t| pairs(&t.points)),
        "road": rec.road.as_ref().map(|r| &r.segment_ids),
        "region": rec.region.as_ref().map(|r| &r.region_ids),
    })))
}

async fn grid(State(s): State<Arc<Snapshot>>) -> Json<Value> {
    Json(json!(s.grid))
}

async fn network(State(s): State<Arc<Snapshot>>) -> Json<Value> {
    let nodes: Vec<[f64; 2]> = pairs(&s.network.nodes);
    let segments: Vec<Value> = s
        .network
        .segments
        .iter()
        .map(|seg| {
            let (a, b) = s.network.segment_endpoints(seg.id);
            json!({"id": seg.id, "a": seg.a, "b": seg.b, "polyline": [[a.x, a.y], [b.x, b.y]]})
        })
        .collect();
    Json(json!({"nodes": nodes, "segments": segments}))
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryModalities {
    pub topology: Option<Vec<[f64; 2]>>,
    pub road: Option<Vec<u32>>,
    pub region: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoStageBody {
    pub coarse: Modality,
    pub subset: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryBody {
    pub modalities: QueryModalities,
    pub k: usize,
    pub two_stage: Option<TwoStageBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredId {
    pub id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResponse {
    pub results: Vec<ScoredId>,
    pub provenance: Provenance,
}

impl From<RetrievalResult> for QueryResponse {
    fn from(r: RetrievalResult) -> Self {
        QueryResponse {
            results: r
                .hits
                .iter()
                .map(|h| ScoredId {
                    id: h.id,
                    score: round6(h.score),
                })
                .collect(),
            provenance: r.provenance,
        }
    }
}

impl QueryBody {
    pub fn to_spec(&self) -> QuerySpec {
        let m = &self.modalities;
        let inputs = QueryInputs {
            traj: None,
            top: m
                .topology
                .as_ref()
                .map(|pts| pts.iter().map(|&[x, y]| Point::new(x, y)).collect()),
            road: m.road.clone(),
            region: m.region.clone(),
        };
        QuerySpec {
            inputs,
            k: self.k,
            coarse: self.two_stage.as_ref().map(|t| CoarseStage {
                modality: t.coarse,
                subset: t.subset,
            }),
        }
    }
}

fn unsupported(subset: String) -> ApiError {
    let supported: Vec<String> = supported_subsets().iter().map(|m| m.name()).collect();
    ApiError {
        status: StatusCode::UNPROCESSABLE_ENTITY,
        body: json!({
            "error": "unsupported_subset",
            "message": format!("no fusion projector for {subset}"),
            "supported": supported,
        }),
    }
}

/// Runs one query against the snapshot; shared by the service and the CLI.
pub fn answer(s: &Snapshot, body: &QueryBody) -> Result<QueryResponse, ApiError> {
    let spec = body.to_spec();
    let subset = spec.inputs.subset();
    if subset.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "parameter", "no modality payload given"));
    }
    if !supported_subsets().contains(&subset) {
        return Err(unsupported(subset.name()));
    }
    Ok(condition_query(&s.stores, &spec, &s.encoders)?.into())
}

async fn query(
    State(s): State<Arc<Snapshot>>,
    body: Result<Json<QueryBody>, JsonRejection>,
) -> Result<Json<QueryResponse>, ApiError> {
    let Json(body) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", e.body_text()))?;
    let work = tokio::task::spawn_blocking(move || answer(&s, &body));
    match tokio::time::timeout(DEADLINE, work).await {
        Ok(Ok(r)) => r.map(Json),
        Ok(Err(e)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())),
        Err(_) => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "deadline", "query exceeded its deadline")),
    }
}
