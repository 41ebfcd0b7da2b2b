use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use spurfinder_core::{Caption, ContentHash};
use spurfinder_gateway::{
    server, BackendRegistry, BackendSpec, CallContext, Gateway, GatewayError, ModelBackend, RetryPolicy,
    ReturnedImage, ServiceEndpoint, ServiceError, ServiceRole,
};

fn fake_png(tag: &str) -> Vec<u8> {
    let mut v = b"\x89PNG\r\n\x1a\n".to_vec();
    v.extend_from_slice(tag.as_bytes());
    v
}

/// Instrumented backend: tracks concurrency, can fail the first attempts of
/// every request key, can delay responses, can drop images.
#[derive(Default)]
struct Fake {
    in_flight: AtomicUsize,
    max_seen: AtomicUsize,
    fail_first: usize,
    attempts_by_key: Mutex<HashMap<String, usize>>,
    delay_ms: u64,
    drop_index: Option<u32>,
    reverse: bool,
    bad_index: Option<u32>,
    caption_text: Option<String>,
    labels: Vec<String>,
}

impl Fake {
    fn enter(&self) {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_seen.fetch_max(now, Ordering::SeqCst);
    }

    fn leave(&self) {
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
    }

    fn attempt(&self, ctx: &CallContext) -> Result<(), ServiceError> {
        let mut m = self.attempts_by_key.lock().unwrap();
        let c = m.entry(ctx.request_key.clone()).or_default();
        *c += 1;
        if *c <= self.fail_first {
            return Err(ServiceError::status(503, "busy", true));
        }
        Ok(())
    }

    async fn pause(&self, salt: &[u8]) {
        if self.delay_ms > 0 {
            // pseudo-random per request so completion order is scrambled
            let jitter = ContentHash::of(salt).prefix_u64() % self.delay_ms;
            tokio::time::sleep(Duration::from_millis(1 + jitter)).await;
        }
    }
}

#[async_trait]
impl ModelBackend for Fake {
    fn name(&self) -> &str {
        "fake"
    }

    async fn generate(&self, ctx: &CallContext, prompt: &str, n: u32, seed: u64) -> Result<Vec<ReturnedImage>, ServiceError> {
        self.enter();
        self.pause(ctx.request_key.as_bytes()).await;
        let r = self.attempt(ctx);
        self.leave();
        r?;
        let mut out: Vec<ReturnedImage> = (0..n)
            .filter(|i| Some(*i) != self.drop_index)
            .map(|i| ReturnedImage {
                index: i,
                png: if Some(i) == self.bad_index {
                    Err("corrupt".into())
                } else {
                    Ok(fake_png(&format!("{prompt}|{seed}|{i}")))
                },
            })
            .collect();
        if self.reverse {
            out.reverse();
        }
        Ok(out)
    }

    async fn classify(&self, ctx: &CallContext, png: &[u8], k: u32) -> Result<Vec<(String, f64)>, ServiceError> {
        self.enter();
        self.pause(png).await;
        let r = self.attempt(ctx);
        self.leave();
        r?;
        let h = ContentHash::of(png).prefix_u64();
        let mut labels = self.labels.clone();
        let len = labels.len() as u64;
        labels.rotate_left((h % len) as usize);
        Ok(labels
            .into_iter()
            .take(k as usize)
            .enumerate()
            .map(|(i, l)| (l, 1.0 - i as f64 * 0.1))
            .collect())
    }

    async fn caption(&self, ctx: &CallContext, _png: &[u8], prefix: &str, _m: u32, _p: &str) -> Result<String, ServiceError> {
        self.attempt(ctx)?;
        Ok(self
            .caption_text
            .clone()
            .unwrap_or_else(|| format!("{prefix} it is red. it is big. it is round.")))
    }

    async fn score(&self, ctx: &CallContext, png: &[u8], caption: &str) -> Result<f64, ServiceError> {
        self.attempt(ctx)?;
        Ok(-((png.len() + caption.len()) as f64))
    }

    async fn embed(&self, ctx: &CallContext, png: &[u8], space: &str) -> Result<Vec<f64>, ServiceError> {
        self.attempt(ctx)?;
        let dim = if space == "fid" { 4 } else { 3 };
        Ok((0..dim).map(|i| (png[png.len() - 1] as f64) + i as f64).collect())
    }
}

fn labels() -> Vec<String> {
    ["fly", "bee", "wasp", "net"].iter().map(|s| s.to_string()).collect()
}

fn fast_endpoint(max_in_flight: usize) -> ServiceEndpoint {
    let mut ep = ServiceEndpoint::new("fake://");
    ep.max_in_flight = max_in_flight;
    ep.retry = RetryPolicy {
        max_attempts: 4,
        base_backoff_ms: 1,
    };
    ep
}

fn gateway(fake: Fake, max_in_flight: usize) -> (Arc<Fake>, Gateway) {
    let fake = Arc::new(fake);
    let gw = Gateway::builder(fake.clone())
        .endpoint(fast_endpoint(max_in_flight))
        .labels(labels().into_iter().map(Into::into))
        .retry_seed(7)
        .build()
        .unwrap();
    (fake, gw)
}

fn prompt() -> Caption {
    Caption::parse("a realistic photograph of a fly (insect). it is on a flower.").unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn never_exceeds_max_in_flight() {
    let (fake, gw) = gateway(
        Fake {
            delay_ms: 5,
            labels: labels(),
            ..Default::default()
        },
        3,
    );
    let gw = Arc::new(gw);
    let mut tasks = Vec::new();
    for i in 0..40 {
        let gw = gw.clone();
        tasks.push(tokio::spawn(async move { gw.classify(&fake_png(&i.to_string()), 2).await }));
    }
    for t in tasks {
        t.await.unwrap().unwrap();
    }
    let max = fake.max_seen.load(Ordering::SeqCst);
    assert!(max <= 3 && max >= 2, "max in flight {max}");
}

#[tokio::test]
async fn retries_are_idempotent() {
    let (_, flaky) = gateway(
        Fake {
            fail_first: 2,
            labels: labels(),
            ..Default::default()
        },
        4,
    );
    let (_, clean) = gateway(
        Fake {
            labels: labels(),
            ..Default::default()
        },
        4,
    );
    let a = flaky.generate(&prompt(), 5, 11).await.unwrap();
    let b = clean.generate(&prompt(), 5, 11).await.unwrap();
    let ha: Vec<_> = a.samples.iter().map(|s| s.sample.image).collect();
    let hb: Vec<_> = b.samples.iter().map(|s| s.sample.image).collect();
    assert_eq!(ha, hb);
    assert_eq!(flaky.stats().attempts(ServiceRole::Generator), 3);
    let p1 = flaky.classify(&a.samples[0].png, 3).await.unwrap();
    let p2 = clean.classify(&a.samples[0].png, 3).await.unwrap();
    assert_eq!(p1, p2);
}

#[tokio::test]
async fn exhausted_retries_report_attempts() {
    let (_, gw) = gateway(
        Fake {
            fail_first: 10,
            labels: labels(),
            ..Default::default()
        },
        4,
    );
    match gw.generate(&prompt(), 2, 0).await {
        Err(GatewayError::Service { attempts, .. }) => assert_eq!(attempts, 4),
        other => panic!("{other:?}"),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn order_follows_index_not_completion() {
    let (_, a) = gateway(
        Fake {
            reverse: true,
            delay_ms: 7,
            labels: labels(),
            ..Default::default()
        },
        8,
    );
    let (_, b) = gateway(
        Fake {
            labels: labels(),
            ..Default::default()
        },
        8,
    );
    let ba = a.generate(&prompt(), 6, 3).await.unwrap();
    let bb = b.generate(&prompt(), 6, 3).await.unwrap();
    let idx: Vec<u32> = ba.samples.iter().map(|s| s.sample.index).collect();
    assert_eq!(idx, vec![0, 1, 2, 3, 4, 5]);
    let enc = |batch: &spurfinder_gateway::GenerationBatch| {
        serde_json::to_vec(&batch.samples.iter().map(|s| s.sample.clone()).collect::<Vec<_>>()).unwrap()
    };
    assert_eq!(enc(&ba), enc(&bb));

    let futs: Vec<_> = ba.samples.iter().map(|s| a.classify(&s.png, 2)).collect();
    let preds: Vec<_> = futures::future::join_all(futs).await.into_iter().map(Result::unwrap).collect();
    let futs: Vec<_> = bb.samples.iter().map(|s| b.classify(&s.png, 2)).collect();
    let preds_b: Vec<_> = futures::future::join_all(futs).await.into_iter().map(Result::unwrap).collect();
    assert_eq!(serde_json::to_vec(&preds).unwrap(), serde_json::to_vec(&preds_b).unwrap());
}

#[tokio::test]
async fn missing_image_is_partial_result() {
    let (_, gw) = gateway(
        Fake {
            drop_index: Some(3),
            labels: labels(),
            ..Default::default()
        },
        4,
    );
    assert_eq!(
        gw.generate(&prompt(), 4, 1).await.unwrap_err(),
        GatewayError::PartialResult { missing: vec![3] }
    );
}

#[tokio::test]
async fn decode_failure_spares_siblings() {
    let (_, gw) = gateway(
        Fake {
            bad_index: Some(1),
            labels: labels(),
            ..Default::default()
        },
        4,
    );
    let batch = gw.generate(&prompt(), 3, 1).await.unwrap();
    assert_eq!(batch.samples.len(), 2);
    assert_eq!(batch.decode_failures.len(), 1);
    assert_eq!(batch.decode_failures[0].0, 1);
}

#[tokio::test]
async fn precondition_and_contract_errors() {
    let (_, gw) = gateway(
        Fake {
            labels: labels(),
            ..Default::default()
        },
        4,
    );
    assert!(matches!(gw.generate(&prompt(), 0, 1).await, Err(GatewayError::InvalidRequest(_))));
    let png = fake_png("x");
    assert!(matches!(gw.classify(&png, 5).await, Err(GatewayError::InvalidRequest(_))));
    assert!(matches!(gw.classify(&png, 0).await, Err(GatewayError::InvalidRequest(_))));
    assert!(matches!(gw.embed(&png, "bogus").await, Err(GatewayError::UnknownSpace(_))));
    assert_eq!(gw.embed(&png, "fid").await.unwrap().len(), 4);

    let prefix = "a realistic photograph of a fly (insect).";
    let c = gw.caption(&png, prefix, 2, "default").await.unwrap();
    assert_eq!(c.base(), prefix);
    assert_eq!(c.sentences(), ["it is red.", "it is big."]);
    assert!(gw.caption(&png, prefix, 0, "default").await.unwrap().is_empty());

    let (_, bad) = gateway(
        Fake {
            caption_text: Some("a photo of a fly. it is red.".into()),
            labels: labels(),
            ..Default::default()
        },
        4,
    );
    assert!(matches!(
        bad.caption(&png, prefix, 2, "default").await,
        Err(GatewayError::Protocol { .. })
    ));
    // protocol violations are never retried
    assert_eq!(bad.stats().attempts(ServiceRole::Captioner), 1);
}

#[tokio::test]
async fn unknown_label_rejected() {
    let fake = Arc::new(Fake {
        labels: vec!["fly".into(), "moth".into()],
        ..Default::default()
    });
    let gw = Gateway::builder(fake)
        .endpoint(fast_endpoint(2))
        .labels(["fly".into(), "bee".into()])
        .build()
        .unwrap();
    let mut saw = false;
    for i in 0..8 {
        if let Err(GatewayError::UnknownLabel(l)) = gw.classify(&fake_png(&i.to_string()), 2).await {
            assert_eq!(l, "moth");
            saw = true;
        }
    }
    assert!(saw);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn http_round_trip_through_wire_server() {
    let fake = Arc::new(Fake {
        labels: labels(),
        ..Default::default()
    });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = server::router(fake.clone());
    tokio::spawn(async move { axum::serve(listener, app).await });

    let ep = fast_endpoint(4);
    let registry = BackendRegistry::new();
    let http = registry
        .create(&BackendSpec::parse(&format!("http://{addr}")), &ep)
        .unwrap();
    let remote = Gateway::builder(http)
        .endpoint(ep.clone())
        .labels(labels().into_iter().map(Into::into))
        .build()
        .unwrap();
    let local = Gateway::builder(fake.clone())
        .endpoint(ep)
        .labels(labels().into_iter().map(Into::into))
        .build()
        .unwrap();

    let r = remote.generate(&prompt(), 3, 9).await.unwrap();
    let l = local.generate(&prompt(), 3, 9).await.unwrap();
    let hashes = |b: &spurfinder_gateway::GenerationBatch| b.samples.iter().map(|s| s.sample.image).collect::<Vec<_>>();
    assert_eq!(hashes(&r), hashes(&l));
    let png = &r.samples[0].png;
    assert_eq!(remote.classify(png, 3).await.unwrap(), local.classify(png, 3).await.unwrap());
    assert_eq!(remote.score(png, &prompt()).await.unwrap(), local.score(png, &prompt()).await.unwrap());
    assert_eq!(remote.embed(png, "cluster").await.unwrap(), local.embed(png, "cluster").await.unwrap());
    let prefix = "a realistic photograph of a fly (insect).";
    assert_eq!(
        remote.caption(png, prefix, 3, "default").await.unwrap(),
        local.caption(png, prefix, 3, "default").await.unwrap()
    );
    // the request key reached the backend: one attempt recorded per key
    assert!(fake.attempts_by_key.lock().unwrap().keys().all(|k| k.len() == 64));
}

#[tokio::test]
async fn http_status_errors_map_to_retry_policy() {
    use axum::routing::post;
    use axum::{http::StatusCode, Json, Router};
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    let app = Router::new().route(
        "/v1/score",
        post(move || {
            let h = h.clone();
            async move {
                let n = h.fetch_add(1, Ordering::SeqCst);
                if n == 0 {
                    (StatusCode::SERVICE_UNAVAILABLE, Json(serde_json::json!({"error": "warming up", "retryable": true})))
                } else {
                    (StatusCode::BAD_REQUEST, Json(serde_json::json!({"error": "nope", "retryable": false})))
                }
            }
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await });
    let mut ep = fast_endpoint(1);
    ep.base_url = format!("http://{addr}");
    let gw = Gateway::builder(Arc::new(spurfinder_gateway::HttpBackend::new(&ep)))
        .endpoint(ep)
        .build()
        .unwrap();
    let err = gw.score(&fake_png("a"), &prompt()).await.unwrap_err();
    match err {
        GatewayError::Service { attempts, error, .. } => {
            assert_eq!(attempts, 2);
            assert_eq!(error.message, "nope");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}
