//! Serves any [`ModelBackend`] over the `/v1/*` wire protocol.

use std::sync::Arc;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};

use crate::backend::{CallContext, ModelBackend};
use crate::error::{ServiceError, ServiceErrorKind};
use crate::wire::*;

type Shared = Arc<dyn ModelBackend>;

struct WireError(ServiceError);

impl IntoResponse for WireError {
    fn into_response(self) -> Response {
        let status = match self.0.kind {
            ServiceErrorKind::Status(code) => StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            ServiceErrorKind::Transport => StatusCode::SERVICE_UNAVAILABLE,
            ServiceErrorKind::Malformed => StatusCode::BAD_GATEWAY,
        };
        let body = ErrorBody {
            error: self.0.message,
            retryable: self.0.retryable,
        };
        (status, Json(body)).into_response()
    }
}

fn context(headers: &HeaderMap) -> CallContext {
    CallContext {
        request_key: headers
            .get(REQUEST_KEY_HEADER)
            .and_then(|v| v.to_str().ok())
            .unwrap_or_default()
            .to_string(),
    }
}

fn image(b64: &str) -> Result<Vec<u8>, WireError> {
    decode_png(b64).map_err(|e| WireError(ServiceError::bad_request(e)))
}

async fn generate(
    State(b): State<Shared>,
    headers: HeaderMap,
    Json(req): Json<GenerateRequest>,
) -> Result<Json<GenerateResponse>, WireError> {
    if req.n == 0 {
        return Err(WireError(ServiceError::bad_request("n must be at least 1")));
    }
    let images = b.generate(&context(&headers), &req.prompt, req.n, req.seed).await.map_err(WireError)?;
    let mut out = Vec::with_capacity(images.len());
    for img in images {
        let png = img.png.map_err(|e| WireError(ServiceError::status(500, e, false)))?;
        out.push(WireImage {
            index: img.index,
            png_base64: encode_png(&png),
        });
    }
    Ok(Json(GenerateResponse { images: out }))
}

async fn classify(
    State(b): State<Shared>,
    headers: HeaderMap,
    Json(req): Json<ClassifyRequest>,
) -> Result<Json<ClassifyResponse>, WireError> {
    let png = image(&req.png_base64)?;
    let topk = b.classify(&context(&headers), &png, req.k).await.map_err(WireError)?;
    Ok(Json(ClassifyResponse {
        topk: topk.into_iter().map(|(label, score)| WireScore { label, score }).collect(),
    }))
}

async fn caption(
    State(b): State<Shared>,
    headers: HeaderMap,
    Json(req): Json<CaptionRequest>,
) -> Result<Json<CaptionResponse>, WireError> {
    let png = image(&req.png_base64)?;
    let caption = b
        .caption(&context(&headers), &png, &req.prefix, req.max_sentences, &req.profile)
        .await
        .map_err(WireError)?;
    Ok(Json(CaptionResponse { caption }))
}

async fn score(
    State(b): State<Shared>,
    headers: HeaderMap,
    Json(req): Json<ScoreRequest>,
) -> Result<Json<ScoreResponse>, WireError> {
    let png = image(&req.png_base64)?;
    let log_likelihood = b.score(&context(&headers), &png, &req.caption).await.map_err(WireError)?;
    Ok(Json(ScoreResponse { log_likelihood }))
}

async fn embed(
    State(b): State<Shared>,
    headers: HeaderMap,
    Json(req): Json<EmbedRequest>,
) -> Result<Json<EmbedResponse>, WireError> {
    let png = image(&req.png_base64)?;
    let vector = b.embed(&context(&headers), &png, &req.space).await.map_err(WireError)?;
    Ok(Json(EmbedResponse {
        dim: vector.len(),
        vector,
    }))
}

pub fn router(backend: Arc<dyn ModelBackend>) -> Router {
    Router::new()
        .route("/v1/generate", post(generate))
        .route("/v1/classify", post(classify))
        .route("/v1/caption", post(caption))
        .route("/v1/score", post(score))
        .route("/v1/embed", post(embed))
        .with_state(backend)
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(backend: Arc<dyn ModelBackend>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(backend)).await
}
