//! Network front end for the CO pipeline.
//!
//! Two surfaces share one [`IngestSession`] (and so one store writer):
//!
//! * [`router`]: an HTTP/JSON API for classification, frame intake, reports
//!   and GeoJSON export.
//! * [`frames::serve_frames`]: a raw TCP listener that accepts LF-terminated
//!   frame lines from any number of concurrent device connections.

pub mod frames;

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cosentinel_core::domain::{assess, HazardBand};
use cosentinel_core::geo::{export_geojson, GeoError, SiteRegistry};
use cosentinel_core::ingest::{ingest_lines, load_store, IngestError, IngestSession, StoreError};
use cosentinel_core::protocol::{decode_frame, DecodeErrorKind};
use cosentinel_core::report::{campaign_report, RenderedReport};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

pub type SharedSession = Arc<Mutex<IngestSession>>;

pub fn shared(session: IngestSession) -> SharedSession {
    Arc::new(Mutex::new(session))
}

#[derive(Clone)]
pub struct AppState {
    session: SharedSession,
    registry: SiteRegistry,
    store_path: PathBuf,
    tz_offset_minutes: i32,
}

impl AppState {
    pub async fn new(session: SharedSession, store_path: impl Into<PathBuf>) -> Self {
        let (registry, tz_offset_minutes) = {
            let s = session.lock().await;
            (s.registry().clone(), s.tz_offset_minutes())
        };
        Self {
            session,
            registry,
            store_path: store_path.into(),
            tz_offset_minutes,
        }
    }
}

/// JSON error body returned with every non-2xx response.
#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<DecodeErrorKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Decode(cosentinel_core::DecodeError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("background task failed: {0}")]
    Join(#[from] tokio::task::JoinError),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, offset) = match &self {
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, None, None),
            ApiError::Decode(e) => (StatusCode::UNPROCESSABLE_ENTITY, Some(e.kind), Some(e.offset)),
            ApiError::Store(StoreError::NotFound { .. }) => (StatusCode::NOT_FOUND, None, None),
            ApiError::Geo(GeoError::UnknownSite(_)) => (StatusCode::CONFLICT, None, None),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, None, None),
        };
        if status.is_server_error() {
            tracing::error!("{self}");
        }
        let body = ErrorBody {
            error: self.to_string(),
            kind,
            offset,
        };
        (status, Json(body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/classify", get(classify_handler))
        .route("/v1/decode", post(decode_handler))
        .route("/v1/frames", post(frames_handler))
        .route("/v1/report", get(report_handler))
        .route("/v1/geojson", get(geojson_handler))
        .route("/v1/sites", get(sites_handler))
        .with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Deserialize)]
struct ClassifyQuery {
    ppm: String,
}

async fn classify_handler(Query(q): Query<ClassifyQuery>) -> Result<impl IntoResponse, ApiError> {
    let ppm: f64 = q
        .ppm
        .trim()
        .parse()
        .map_err(|_| ApiError::BadRequest(format!("ppm {:?} is not a number", q.ppm)))?;
    let assessment = assess(ppm).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    Ok(Json(assessment))
}

async fn decode_handler(body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let reading = decode_frame(&body).map_err(ApiError::Decode)?;
    Ok(Json(reading))
}

async fn frames_handler(State(state): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let mut session = state.session.lock().await;
    let stats = ingest_lines(&body[..], &mut session)?;
    session.sync()?;
    Ok(Json(stats))
}

#[derive(Deserialize)]
struct ReportQuery {
    min_band: Option<String>,
    format: Option<String>,
}

async fn load_report(state: &AppState, min_band: HazardBand) -> Result<RenderedReport, ApiError> {
    let path = state.store_path.clone();
    let loaded = tokio::task::spawn_blocking(move || load_store(path)).await??;
    Ok(RenderedReport::new(
        campaign_report(&loaded.records),
        min_band,
        state.tz_offset_minutes,
    ))
}

async fn report_handler(State(state): State<AppState>, Query(q): Query<ReportQuery>) -> Result<Response, ApiError> {
    let min_band = match q.min_band.as_deref() {
        Some(b) => b.parse().map_err(|e: cosentinel_core::domain::UnknownBand| ApiError::BadRequest(e.to_string()))?,
        None => HazardBand::Danger30Heart,
    };
    let rendered = load_report(&state, min_band).await?;
    Ok(match q.format.as_deref().unwrap_or("json") {
        "json" => Json(rendered).into_response(),
        "csv" => ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], rendered.to_csv()).into_response(),
        "table" => ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], rendered.to_table()).into_response(),
        other => return Err(ApiError::BadRequest(format!("unknown format {other:?}"))),
    })
}

async fn geojson_handler(State(state): State<AppState>) -> Result<Response, ApiError> {
    let rendered = load_report(&state, HazardBand::Danger30Heart).await?;
    let doc = export_geojson(&rendered.report, &state.registry)?;
    Ok(([(header::CONTENT_TYPE, "application/geo+json")], doc).into_response())
}

async fn sites_handler(State(state): State<AppState>) -> impl IntoResponse {
    Json(state.registry.sites().to_vec())
}
