use async_trait::async_trait;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::backend::{CallContext, ModelBackend, ReturnedImage};
use crate::endpoint::ServiceEndpoint;
use crate::error::ServiceError;
use crate::wire::*;

/// Client for a service speaking the `/v1/*` JSON protocol.
pub struct HttpBackend {
    client: reqwest::Client,
    base_url: String,
    auth_token: Option<String>,
}

impl HttpBackend {
    pub fn new(ep: &ServiceEndpoint) -> Self {
        HttpBackend {
            client: reqwest::Client::new(),
            base_url: ep.base_url.trim_end_matches('/').to_string(),
            auth_token: ep.auth_token.clone(),
        }
    }

    async fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        ctx: &CallContext,
        route: &str,
        body: &Req,
    ) -> Result<Resp, ServiceError> {
        let mut req = self
            .client
            .post(format!("{}/v1/{route}", self.base_url))
            .header(REQUEST_KEY_HEADER, &ctx.request_key)
            .json(body);
        if let Some(token) = &self.auth_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().await.map_err(|e| ServiceError::transport(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| ServiceError::transport(e.to_string()))?;
        if !status.is_success() {
            let code = status.as_u16();
            return Err(match serde_json::from_slice::<ErrorBody>(&bytes) {
                Ok(body) => ServiceError::status(code, body.error, body.retryable),
                Err(_) => ServiceError::status(
                    code,
                    String::from_utf8_lossy(&bytes).into_owned(),
                    status.is_server_error(),
                ),
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| ServiceError::malformed(format!("/v1/{route}: {e}")))
    }
}

#[async_trait]
impl ModelBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    async fn generate(
        &self,
        ctx: &CallContext,
        prompt: &str,
        n: u32,
        seed: u64,
    ) -> Result<Vec<ReturnedImage>, ServiceError> {
        let req = GenerateRequest {
            prompt: prompt.to_string(),
            n,
            seed,
        };
        let resp: GenerateResponse = self.post(ctx, "generate", &req).await?;
        Ok(resp
            .images
            .into_iter()
            .map(|img| ReturnedImage {
                index: img.index,
                png: decode_png(&img.png_base64),
            })
            .collect())
    }

    async fn classify(&self, ctx: &CallContext, png: &[u8], k: u32) -> Result<Vec<(String, f64)>, ServiceError> {
        let req = ClassifyRequest {
            png_base64: encode_png(png),
            k,
        };
        let resp: ClassifyResponse = self.post(ctx, "classify", &req).await?;
        Ok(resp.topk.into_iter().map(|s| (s.label, s.score)).collect())
    }

    async fn caption(
        &self,
        ctx: &CallContext,
        png: &[u8],
        prefix: &str,
        max_sentences: u32,
        profile: &str,
    ) -> Result<String, ServiceError> {
        let req = CaptionRequest {
            png_base64: encode_png(png),
            prefix: prefix.to_string(),
            max_sentences,
            profile: profile.to_string(),
        };
        let resp: CaptionResponse = self.post(ctx, "caption", &req).await?;
        Ok(resp.caption)
    }

    async fn score(&self, ctx: &CallContext, png: &[u8], caption: &str) -> Result<f64, ServiceError> {
        let req = ScoreRequest {
            png_base64: encode_png(png),
            caption: caption.to_string(),
        };
        let resp: ScoreResponse = self.post(ctx, "score", &req).await?;
        Ok(resp.log_likelihood)
    }

    async fn embed(&self, ctx: &CallContext, png: &[u8], space: &str) -> Result<Vec<f64>, ServiceError> {
        let req = EmbedRequest {
            png_base64: encode_png(png),
            space: space.to_string(),
        };
        let resp: EmbedResponse = self.post(ctx, "embed", &req).await?;
        if resp.dim != resp.vector.len() {
            return Err(ServiceError::malformed(format!(
                "embed: dim {} but vector has {} entries",
                resp.dim,
                resp.vector.len()
            )));
        }
        Ok(resp.vector)
    }
}
