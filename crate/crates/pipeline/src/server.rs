//! HTTP API over a loaded [`Engine`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::net::TcpListener;
use tower_http::cors::CorsLayer;

use crate::engine::{ApiError, EditBody, Engine, ErrorCode, GenerateRequest};
use eet_core::facemodel::MeshManifest;

pub struct ServerState {
    pub engine: Engine,
    dictionary_json: String,
    metrics_json: Option<Vec<u8>>,
}

impl ServerState {
    /// `metrics` is served verbatim from `GET /api/metrics` when present.
    pub fn new(engine: Engine, metrics: Option<Vec<u8>>) -> anyhow::Result<Self> {
        if let Some(m) = &metrics {
            serde_json::from_slice::<serde_json::Value>(m).map_err(|e| anyhow::anyhow!("metrics file is not JSON: {e}"))?;
        }
        let dictionary_json = engine.dictionary.to_json()?;
        Ok(Self { engine, dictionary_json, metrics_json: metrics })
    }
}

#[derive(Serialize)]
pub struct EditResponse {
    pub embedding: Vec<f64>,
}

#[derive(Serialize)]
pub struct GenerateResponse {
    pub manifest: MeshManifest,
    /// `T × V × 3` little-endian f32 positions.
    pub vertices_b64: String,
    pub faces: Vec<[u32; 3]>,
    pub embedding: Vec<f64>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.code {
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        let body = serde_json::json!({ "error": { "code": self.code, "message": self.message } });
        (status, axum::Json(body)).into_response()
    }
}

fn json_bytes(bytes: impl Into<axum::body::Body>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes.into()).into_response()
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        let code = if e.is_data() { ErrorCode::InvalidRequest } else { ErrorCode::InvalidJson };
        ApiError::new(code, e.to_string())
    })
}

async fn dictionary(State(s): State<Arc<ServerState>>) -> Response {
    json_bytes(s.dictionary_json.clone())
}

async fn info(State(s): State<Arc<ServerState>>) -> Response {
    axum::Json(s.engine.info()).into_response()
}

async fn metrics(State(s): State<Arc<ServerState>>) -> Result<Response, ApiError> {
    match &s.metrics_json {
        Some(m) => Ok(json_bytes(m.clone())),
        None => Err(ApiError::new(ErrorCode::NotFound, "no metrics report is loaded")),
    }
}

async fn edit(State(s): State<Arc<ServerState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: EditBody = parse(&body)?;
    let e = s.engine.edit_body(req)?;
    Ok(axum::Json(EditResponse { embedding: e.into_inner() }).into_response())
}

pub fn generate_response(engine: &Engine, req: &GenerateRequest) -> Result<GenerateResponse, ApiError> {
    let g = engine.generate(req)?;
    Ok(GenerateResponse {
        manifest: g.manifest(&engine.face),
        vertices_b64: base64::engine::general_purpose::STANDARD.encode(g.vertex_bytes()),
        faces: engine.face.faces().to_vec(),
        embedding: g.embedding.into_inner(),
    })
}

async fn generate(State(s): State<Arc<ServerState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: GenerateRequest = parse(&body)?;
    let res = tokio::task::spawn_blocking(move || generate_response(&s.engine, &req))
        .await
        .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))??;
    Ok(axum::Json(res).into_response())
}

async fn fallback() -> ApiError {
    ApiError::new(ErrorCode::NotFound, "no such resource")
}

pub fn router(state: Arc<ServerState>) -> Router {
    Router::new()
        .route("/api/dictionary", get(dictionary))
        .route("/api/model/info", get(info))
        .route("/api/metrics", get(metrics))
        .route("/api/edit", post(edit))
        .route("/api/generate", post(generate))
        .fallback(fallback)
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Binds `addr` and serves in the background; returns the bound address.
pub async fn spawn(state: Arc<ServerState>, addr: &str) -> anyhow::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let app = router(state);
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            log::error!("server stopped: {e}");
        }
    });
    Ok((local, handle))
}

/// Serves until interrupted.
pub async fn serve(state: Arc<ServerState>, addr: &str) -> anyhow::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
