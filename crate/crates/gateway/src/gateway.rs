use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use spurfinder_core::{Caption, ContentHash, LabelId, LabelScore, Prediction, Sample};
use tokio::sync::Semaphore;

use crate::backend::{CallContext, ModelBackend};
use crate::endpoint::{ServiceEndpoint, ServiceRole};
use crate::error::{GatewayError, ServiceError, ServiceErrorKind};
use crate::sink::BlobSink;
use crate::{CLUSTER_SPACE, FID_SPACE};

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

/// A generated image together with its bytes.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub sample: Sample,
    pub png: Arc<Vec<u8>>,
}

/// Result of one generation request. Indices whose payload could not be
/// decoded are listed in `decode_failures`; they are not in `samples`.
#[derive(Debug, Clone, Default)]
pub struct GenerationBatch {
    pub samples: Vec<GeneratedSample>,
    pub decode_failures: Vec<(u32, String)>,
}

#[derive(Debug, Default)]
pub struct GatewayStats {
    calls: [AtomicU64; 5],
    attempts: [AtomicU64; 5],
}

impl GatewayStats {
    /// Logical requests issued to a service.
    pub fn calls(&self, role: ServiceRole) -> u64 {
        self.calls[role as usize].load(Ordering::Relaxed)
    }

    /// Attempts including retries.
    pub fn attempts(&self, role: ServiceRole) -> u64 {
        self.attempts[role as usize].load(Ordering::Relaxed)
    }
}

struct Service {
    role: ServiceRole,
    backend: Arc<dyn ModelBackend>,
    endpoint: ServiceEndpoint,
    limiter: Semaphore,
}

pub struct GatewayBuilder {
    default_backend: Arc<dyn ModelBackend>,
    default_endpoint: ServiceEndpoint,
    overrides: BTreeMap<ServiceRole, (Arc<dyn ModelBackend>, ServiceEndpoint)>,
    labels: Option<BTreeSet<LabelId>>,
    spaces: BTreeMap<String, Option<usize>>,
    sink: Option<Arc<dyn BlobSink>>,
    retry_seed: u64,
}

impl GatewayBuilder {
    pub fn endpoint(mut self, ep: ServiceEndpoint) -> Self {
        self.default_endpoint = ep;
        self
    }

    pub fn service(mut self, role: ServiceRole, backend: Arc<dyn ModelBackend>, ep: ServiceEndpoint) -> Self {
        self.overrides.insert(role, (backend, ep));
        self
    }

    /// Restricts classifier output to this label set.
    pub fn labels<I: IntoIterator<Item = LabelId>>(mut self, labels: I) -> Self {
        self.labels = Some(labels.into_iter().collect());
        self
    }

    /// Declares an embedding space; `None` pins the dimension on first use.
    pub fn space(mut self, name: &str, dim: Option<usize>) -> Self {
        self.spaces.insert(name.to_string(), dim);
        self
    }

    pub fn sink(mut self, sink: Arc<dyn BlobSink>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn retry_seed(mut self, seed: u64) -> Self {
        self.retry_seed = seed;
        self
    }

    pub fn build(self) -> Result<Gateway, GatewayError> {
        let mut services = Vec::new();
        for role in ServiceRole::ALL {
            let (backend, endpoint) = match self.overrides.get(&role) {
                Some((b, e)) => (b.clone(), e.clone()),
                None => (self.default_backend.clone(), self.default_endpoint.clone()),
            };
            endpoint.validate().map_err(GatewayError::BackendConfig)?;
            services.push(Service {
                role,
                backend,
                limiter: Semaphore::new(endpoint.max_in_flight),
                endpoint,
            });
        }
        Ok(Gateway {
            services,
            labels: self.labels,
            spaces: Mutex::new(self.spaces),
            sink: self.sink,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(self.retry_seed)),
            stats: GatewayStats::default(),
        })
    }
}

/// Shared, concurrency-safe front door to the model services.
pub struct Gateway {
    services: Vec<Service>,
    labels: Option<BTreeSet<LabelId>>,
    spaces: Mutex<BTreeMap<String, Option<usize>>>,
    sink: Option<Arc<dyn BlobSink>>,
    rng: Mutex<ChaCha8Rng>,
    stats: GatewayStats,
}

/// Deterministic key for one logical request; retries reuse it.
pub(crate) fn request_key(ep: &ServiceEndpoint, route: &str, payload: &serde_json::Value) -> String {
    let text = format!("{}\n{}\n{}", ep.base_url, route, payload);
    ContentHash::of(text.as_bytes()).to_hex()
}

impl Gateway {
    /// Gateway where every service uses `backend`. Spaces `cluster` and
    /// `fid` are declared with dimensions pinned on first use.
    pub fn builder(backend: Arc<dyn ModelBackend>) -> GatewayBuilder {
        let mut spaces = BTreeMap::new();
        spaces.insert(CLUSTER_SPACE.to_string(), None);
        spaces.insert(FID_SPACE.to_string(), None);
        GatewayBuilder {
            default_backend: backend,
            default_endpoint: ServiceEndpoint::default(),
            overrides: BTreeMap::new(),
            labels: None,
            spaces,
            sink: None,
            retry_seed: 0,
        }
    }

    pub fn stats(&self) -> &GatewayStats {
        &self.stats
    }

    pub fn backend_name(&self, role: ServiceRole) -> &str {
        self.services[role as usize].backend.name()
    }

    fn service(&self, role: ServiceRole) -> &Service {
        &self.services[role as usize]
    }

    fn backoff(&self, ep: &ServiceEndpoint, attempt: u32) -> Duration {
        let base = ep.retry.base_backoff_ms.saturating_mul(1u64 << (attempt - 1).min(16));
        let jitter: f64 = self.rng.lock().expect("rng poisoned").random();
        Duration::from_millis(base + (base as f64 * 0.5 * jitter) as u64)
    }

    async fn call<T, F, Fut>(&self, role: ServiceRole, payload: serde_json::Value, f: F) -> Result<T, GatewayError>
    where
        F: Fn(Arc<dyn ModelBackend>, CallContext) -> Fut,
        Fut: Future<Output = Result<T, ServiceError>>,
    {
        let svc = self.service(role);
        let ctx = CallContext {
            request_key: request_key(&svc.endpoint, role.route(), &payload),
        };
        self.stats.calls[role as usize].fetch_add(1, Ordering::Relaxed);
        let timeout = Duration::from_millis(svc.endpoint.timeout_ms.max(1));
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.stats.attempts[role as usize].fetch_add(1, Ordering::Relaxed);
            let outcome = {
                let _permit = svc.limiter.acquire().await.expect("limiter closed");
                tokio::time::timeout(timeout, f(svc.backend.clone(), ctx.clone())).await
            };
            let retryable = match &outcome {
                Ok(Ok(_)) => false,
                Ok(Err(e)) => e.retryable && e.kind != ServiceErrorKind::Malformed,
                Err(_) => true,
            };
            if retryable && attempt < svc.endpoint.retry.max_attempts {
                tracing::debug!(service = %svc.role, attempt, "retrying");
                tokio::time::sleep(self.backoff(&svc.endpoint, attempt)).await;
                continue;
            }
            return match outcome {
                Ok(Ok(v)) => Ok(v),
                Ok(Err(error)) => Err(GatewayError::Service {
                    service: svc.role.as_str(),
                    attempts: attempt,
                    error,
                }),
                Err(_) => Err(GatewayError::Timeout {
                    service: svc.role.as_str(),
                    attempts: attempt,
                }),
            };
        }
    }

    /// Generates `n` images for `prompt`. Images are persisted through the
    /// attached sink (if any) before returning.
    pub async fn generate(&self, prompt: &Caption, n: u32, seed: u64) -> Result<GenerationBatch, GatewayError> {
        if n == 0 {
            return Err(GatewayError::InvalidRequest("n must be at least 1".into()));
        }
        let text = prompt.render();
        let payload = json!({"prompt": text, "n": n, "seed": seed});
        let images = self
            .call(ServiceRole::Generator, payload, |b, ctx| {
                let text = text.clone();
                async move { b.generate(&ctx, &text, n, seed).await }
            })
            .await?;

        let mut by_index = BTreeMap::new();
        for img in images {
            if img.index >= n {
                return Err(GatewayError::Protocol {
                    service: "generator",
                    message: format!("image index {} out of range for n={n}", img.index),
                });
            }
            if by_index.insert(img.index, img.png).is_some() {
                return Err(GatewayError::Protocol {
                    service: "generator",
                    message: format!("duplicate image index {}", img.index),
                });
            }
        }
        let missing: Vec<u32> = (0..n).filter(|i| !by_index.contains_key(i)).collect();
        if !missing.is_empty() {
            return Err(GatewayError::PartialResult { missing });
        }

        let mut batch = GenerationBatch::default();
        for (index, png) in by_index {
            let png = match png {
                Ok(bytes) if bytes.starts_with(PNG_MAGIC) => bytes,
                Ok(_) => {
                    batch.decode_failures.push((index, "payload is not a PNG".into()));
                    continue;
                }
                Err(e) => {
                    batch.decode_failures.push((index, e));
                    continue;
                }
            };
            let hash = match &self.sink {
                Some(sink) => sink.put(&png).map_err(GatewayError::Sink)?,
                None => ContentHash::of(&png),
            };
            batch.samples.push(GeneratedSample {
                sample: Sample::new(hash, prompt.clone(), seed, index),
                png: Arc::new(png),
            });
        }
        Ok(batch)
    }

    pub async fn classify(&self, png: &[u8], k: u32) -> Result<Prediction, GatewayError> {
        if k == 0 {
            return Err(GatewayError::InvalidRequest("k must be at least 1".into()));
        }
        if let Some(labels) = &self.labels {
            if k as usize > labels.len() {
                return Err(GatewayError::InvalidRequest(format!(
                    "k={k} exceeds the label set size {}",
                    labels.len()
                )));
            }
        }
        let payload = json!({"image": ContentHash::of(png).to_hex(), "k": k});
        let topk = self
            .call(ServiceRole::Classifier, payload, |b, ctx| async move {
                b.classify(&ctx, png, k).await
            })
            .await?;
        if topk.len() != k as usize {
            return Err(GatewayError::Protocol {
                service: "classifier",
                message: format!("asked for {k} labels, got {}", topk.len()),
            });
        }
        let mut entries = Vec::with_capacity(topk.len());
        for (label, score) in topk {
            let label = LabelId::new(label);
            if let Some(labels) = &self.labels {
                if !labels.contains(&label) {
                    return Err(GatewayError::UnknownLabel(label.0));
                }
            }
            if !score.is_finite() {
                return Err(GatewayError::NonFinite("classifier"));
            }
            entries.push(LabelScore { label, score });
        }
        Prediction::new(entries).map_err(|e| GatewayError::Protocol {
            service: "classifier",
            message: e.to_string(),
        })
    }

    /// Captions an image; the completion must begin with `prefix`.
    pub async fn caption(
        &self,
        png: &[u8],
        prefix: &str,
        max_sentences: u32,
        profile: &str,
    ) -> Result<Caption, GatewayError> {
        if prefix.is_empty() {
            return Err(GatewayError::InvalidRequest("caption prefix is empty".into()));
        }
        let payload = json!({
            "image": ContentHash::of(png).to_hex(),
            "prefix": prefix,
            "max_sentences": max_sentences,
            "profile": profile,
        });
        let text = self
            .call(ServiceRole::Captioner, payload, |b, ctx| async move {
                b.caption(&ctx, png, prefix, max_sentences, profile).await
            })
            .await?;
        let caption = Caption::from_completion(prefix, &text).ok_or_else(|| GatewayError::Protocol {
            service: "captioner",
            message: format!("completion does not start with prefix `{prefix}`"),
        })?;
        Ok(caption.truncated(max_sentences as usize))
    }

    pub async fn score(&self, png: &[u8], caption: &Caption) -> Result<f64, GatewayError> {
        let text = caption.render();
        if text.is_empty() {
            return Err(GatewayError::InvalidRequest("caption is empty".into()));
        }
        let payload = json!({"image": ContentHash::of(png).to_hex(), "caption": text});
        let ll = self
            .call(ServiceRole::Scorer, payload, |b, ctx| {
                let text = text.clone();
                async move { b.score(&ctx, png, &text).await }
            })
            .await?;
        if !ll.is_finite() {
            return Err(GatewayError::NonFinite("scorer"));
        }
        Ok(ll)
    }

    pub async fn embed(&self, png: &[u8], space: &str) -> Result<Vec<f64>, GatewayError> {
        let expected = {
            let spaces = self.spaces.lock().expect("spaces poisoned");
            match spaces.get(space) {
                Some(d) => *d,
                None => return Err(GatewayError::UnknownSpace(space.to_string())),
            }
        };
        let payload = json!({"image": ContentHash::of(png).to_hex(), "space": space});
        let v = self
            .call(ServiceRole::Embedder, payload, |b, ctx| async move {
                b.embed(&ctx, png, space).await
            })
            .await?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(GatewayError::NonFinite("embedder"));
        }
        let expected = match expected {
            Some(d) => d,
            None => {
                let mut spaces = self.spaces.lock().expect("spaces poisoned");
                *spaces.get_mut(space).expect("space present").get_or_insert(v.len())
            }
        };
        if v.len() != expected {
            return Err(GatewayError::DimensionMismatch {
                space: space.to_string(),
                expected,
                got: v.len(),
            });
        }
        Ok(v)
    }
}
