//! HTTP API over [`feedstation::server::Server`].
//!
//! | method | path                          | auth     |
//! |--------|-------------------------------|----------|
//! | POST   | `/ingest`                     |          |
//! | GET    | `/visits`                     |          |
//! | GET    | `/status`                     |          |
//! | GET    | `/export.csv`                 |          |
//! | POST   | `/stations/{id}/trap-targets` | operator |
//! | GET    | `/stations/{id}/trap-delta`   |          |
//!
//! Operator requests carry `Authorization: Bearer <token>`. Errors are
//! JSON objects `{"error": "..."}`.

use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::{Body, Bytes};
use axum::extract::{Path, RawQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use feedstation::codec::{self, TagOpKind, TrapUpdate};
use feedstation::rfid::TagId;
use feedstation::server::{Clock, LedgerChange, Server, ServerError, StatusReport, Storage, TargetOp, VisitFilter, VisitPage};
use log::{info, warn};
use serde::{Deserialize, Serialize};

pub struct AppState<S: Storage, C: Clock> {
    server: Mutex<Server<S, C>>,
    token: String,
}

impl<S: Storage, C: Clock> AppState<S, C> {
    pub fn new(server: Server<S, C>, token: impl Into<String>) -> Arc<Self> {
        Arc::new(Self { server: Mutex::new(server), token: token.into() })
    }

    /// Lock the backend. A panic in another handler does not corrupt the
    /// server: every mutation is written ahead before memory changes.
    pub fn server(&self) -> MutexGuard<'_, Server<S, C>> {
        self.server.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<ServerError> for ApiError {
    fn from(e: ServerError) -> Self {
        match e {
            ServerError::Filter(f) => Self::bad_request(f.to_string()),
            other => {
                warn!("request failed: {other}");
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string())
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestRequest {
    pub station_id: u16,
    /// Uplink payload as hex.
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub ack: bool,
    pub duplicate: bool,
    /// Hex-encoded downlink to send with the confirmation.
    pub downlink: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetsRequest {
    pub ops: Vec<TargetOp>,
    #[serde(default)]
    pub operator: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetsResponse {
    pub changes: Vec<LedgerChange>,
    pub targets: Vec<TagId>,
    pub master: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaOp {
    pub op: String,
    pub tag: TagId,
}

/// JSON view of a trap update plus its encoded form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaResponse {
    pub server_time: u32,
    pub master: Option<bool>,
    pub more_follows: bool,
    pub part: u8,
    pub ops: Vec<DeltaOp>,
    pub payload: String,
}

impl DeltaResponse {
    fn from_update(u: &TrapUpdate) -> Result<Self, ApiError> {
        let payload = codec::encode_trap_update(u).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        Ok(Self {
            server_time: u.server_time,
            master: u.master,
            more_follows: u.more_follows,
            part: u.part,
            ops: u
                .ops
                .iter()
                .map(|op| DeltaOp {
                    op: match op.kind {
                        TagOpKind::Add => "add".into(),
                        TagOpKind::Remove => "remove".into(),
                    },
                    tag: op.tag,
                })
                .collect(),
            payload: codec::to_hex(&payload),
        })
    }
}

pub fn router<S, C>(state: Arc<AppState<S, C>>) -> Router
where
    S: Storage + 'static,
    C: Clock + 'static,
{
    Router::new()
        .route("/ingest", post(ingest::<S, C>))
        .route("/visits", get(visits::<S, C>))
        .route("/status", get(status::<S, C>))
        .route("/export.csv", get(export_csv::<S, C>))
        .route("/stations/{id}/trap-targets", post(trap_targets::<S, C>))
        .route("/stations/{id}/trap-delta", get(trap_delta::<S, C>))
        .with_state(state)
}

async fn ingest<S: Storage, C: Clock>(
    State(state): State<Arc<AppState<S, C>>>,
    Json(req): Json<IngestRequest>,
) -> Result<Response, ApiError> {
    let payload = codec::from_hex(&req.payload).map_err(|e| ApiError::bad_request(format!("payload: {e}")))?;
    let outcome = state.server().ingest(req.station_id, &payload)?;
    let status = if outcome.error.is_some() { StatusCode::UNPROCESSABLE_ENTITY } else { StatusCode::OK };
    let body = IngestResponse {
        ack: outcome.ack,
        duplicate: outcome.duplicate,
        downlink: outcome.downlink.as_deref().map(codec::to_hex),
        error: outcome.error,
    };
    Ok((status, Json(body)).into_response())
}

/// Split `cursor` and `limit` from the filter fields.
fn parse_query(raw: Option<&str>) -> Result<(VisitFilter, Option<String>, Option<usize>), ApiError> {
    let pairs: Vec<(String, String)> =
        serde_urlencoded::from_str(raw.unwrap_or("")).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let (mut cursor, mut limit) = (None, None);
    let mut rest = Vec::new();
    for (k, v) in pairs {
        match k.as_str() {
            "cursor" => cursor = Some(v),
            "limit" => limit = Some(v.parse().map_err(|_| ApiError::bad_request(format!("limit {v:?}")))?),
            _ => rest.push((k, v)),
        }
    }
    let encoded = serde_urlencoded::to_string(&rest).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let filter: VisitFilter = serde_urlencoded::from_str(&encoded).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok((filter, cursor, limit))
}

async fn visits<S: Storage, C: Clock>(
    State(state): State<Arc<AppState<S, C>>>,
    RawQuery(raw): RawQuery,
) -> Result<Json<VisitPage>, ApiError> {
    let (filter, cursor, limit) = parse_query(raw.as_deref())?;
    let page = state.server().query_visits(&filter, cursor.as_deref(), limit).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(page))
}

async fn status<S: Storage, C: Clock>(State(state): State<Arc<AppState<S, C>>>) -> Json<StatusReport> {
    Json(state.server().status())
}

/// CSV streamed one page at a time; the lock is held per page only.
async fn export_csv<S, C>(State(state): State<Arc<AppState<S, C>>>, RawQuery(raw): RawQuery) -> Result<Response, ApiError>
where
    S: Storage + 'static,
    C: Clock + 'static,
{
    let (filter, cursor, _) = parse_query(raw.as_deref())?;
    filter.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    // first page up front so that a bad cursor is still a 400
    let (first, next) = state.server().export_csv_page(&filter, cursor.as_deref(), true)?;
    let rest = futures::stream::unfold(next, move |cursor| {
        let state = state.clone();
        let filter = filter.clone();
        async move {
            let cursor = cursor?;
            let page = state.server().export_csv_page(&filter, Some(&cursor), false);
            match page {
                Ok((bytes, next)) => Some((Ok(Bytes::from(bytes)), next)),
                Err(e) => Some((Err(std::io::Error::other(e.to_string())), None)),
            }
        }
    });
    let body = futures::StreamExt::chain(futures::stream::once(async move { Ok(Bytes::from(first)) }), rest);
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], Body::from_stream(body)).into_response())
}

fn check_token(headers: &HeaderMap, token: &str) -> Result<(), ApiError> {
    let given = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()).and_then(|v| v.strip_prefix("Bearer "));
    match given {
        Some(t) if !token.is_empty() && t == token => Ok(()),
        Some(_) => Err(ApiError::new(StatusCode::FORBIDDEN, "wrong operator token")),
        None => Err(ApiError::new(StatusCode::UNAUTHORIZED, "operator token required")),
    }
}

async fn trap_targets<S: Storage, C: Clock>(
    State(state): State<Arc<AppState<S, C>>>,
    Path(id): Path<u16>,
    headers: HeaderMap,
    Json(req): Json<TargetsRequest>,
) -> Result<Json<TargetsResponse>, ApiError> {
    check_token(&headers, &state.token)?;
    if req.ops.is_empty() {
        return Err(ApiError::bad_request("no ops"));
    }
    let operator = req.operator.as_deref().unwrap_or("operator");
    let mut server = state.server();
    let changes = server.set_trap_targets(id, &req.ops, operator)?;
    let (targets, master) = server.targets(id);
    info!("station {id}: {} target changes by {operator}", changes.len());
    Ok(Json(TargetsResponse { changes, targets, master }))
}

#[derive(Debug, Deserialize)]
struct DeltaQuery {
    #[serde(default)]
    last_updated: u32,
}

async fn trap_delta<S: Storage, C: Clock>(
    State(state): State<Arc<AppState<S, C>>>,
    Path(id): Path<u16>,
    RawQuery(raw): RawQuery,
) -> Result<Json<DeltaResponse>, ApiError> {
    let q: DeltaQuery = serde_urlencoded::from_str(raw.as_deref().unwrap_or("")).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let update = state.server().trap_delta(id, q.last_updated)?;
    Ok(Json(DeltaResponse::from_update(&update)?))
}
