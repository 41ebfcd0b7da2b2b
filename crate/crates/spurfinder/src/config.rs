//! The `spurfinder.toml` file and everything built from it.
//!
//! ```toml
//! backend = "synth"               # synth, synth:<world.json> or http://host:port
//! hierarchy = "labels.tsv"        # required unless the backend is synthetic
//!
//! [endpoint]
//! max-in-flight = 16
//!
//! [services.classifier]           # per-role backend override
//! backend = "http://127.0.0.1:9001"
//!
//! [engine]
//! seed = 3
//! [engine.stop]
//! max-samples = 5000
//!
//! [server]
//! workers = 1
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use spurfinder_core::{ContentHash, LabelHierarchy};
use spurfinder_engine::{Engine, EngineConfig};
use spurfinder_gateway::{BackendRegistry, BackendSpec, Gateway, RetryPolicy, ServiceEndpoint, ServiceRole};
use spurfinder_store::Run;
use spurfinder_synthworld::{default_world, WorldConfig};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct EndpointConfig {
    pub max_in_flight: usize,
    pub timeout_ms: u64,
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub auth_token: Option<String>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        let ep = ServiceEndpoint::default();
        EndpointConfig {
            max_in_flight: ep.max_in_flight,
            timeout_ms: ep.timeout_ms,
            max_attempts: ep.retry.max_attempts,
            base_backoff_ms: ep.retry.base_backoff_ms,
            auth_token: None,
        }
    }
}

impl EndpointConfig {
    pub fn endpoint(&self) -> ServiceEndpoint {
        ServiceEndpoint {
            max_in_flight: self.max_in_flight,
            timeout_ms: self.timeout_ms,
            retry: RetryPolicy {
                max_attempts: self.max_attempts,
                base_backoff_ms: self.base_backoff_ms,
            },
            auth_token: self.auth_token.clone(),
            ..ServiceEndpoint::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ServiceOverride {
    pub backend: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
    /// Jobs executed at once.
    pub workers: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct AppConfig {
    pub backend: String,
    pub hierarchy: Option<PathBuf>,
    pub run_id: Option<String>,
    pub endpoint: EndpointConfig,
    pub services: BTreeMap<ServiceRole, ServiceOverride>,
    pub engine: EngineConfig,
    pub server: ServerConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            backend: "synth".into(),
            hierarchy: None,
            run_id: None,
            endpoint: EndpointConfig::default(),
            services: BTreeMap::new(),
            engine: EngineConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str) -> AppResult<Self> {
        let cfg: AppConfig = toml::from_str(text).map_err(|e| AppError::user(format!("config: {e}")))?;
        cfg.engine.validate()?;
        if cfg.server.workers == 0 {
            return Err(AppError::user("config: server.workers must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::user(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

/// Backends this binary knows: `http` plus the synthetic world.
pub fn registry() -> BackendRegistry {
    let mut r = BackendRegistry::new();
    spurfinder_synthworld::register(&mut r);
    r
}

/// The world behind a `synth[:path]` spec, if it is one.
pub fn synth_world(spec: &BackendSpec) -> AppResult<Option<WorldConfig>> {
    if spec.name != "synth" {
        return Ok(None);
    }
    match &spec.arg {
        Some(path) => WorldConfig::load(Path::new(path))
            .map(Some)
            .map_err(|e| AppError::user(format!("world config {path}: {e}"))),
        None => Ok(Some(default_world())),
    }
}

fn build_gateway(
    registry: &BackendRegistry,
    config: &AppConfig,
    hierarchy: &LabelHierarchy,
    spec: &str,
    with_overrides: bool,
) -> AppResult<Arc<Gateway>> {
    let ep = config.endpoint.endpoint();
    let backend = registry.create(&BackendSpec::parse(spec), &ep)?;
    let mut b = Gateway::builder(backend)
        .endpoint(ep.clone())
        .labels(hierarchy.leaves().cloned())
        .retry_seed(config.engine.seed);
    if with_overrides {
        for (role, o) in &config.services {
            b = b.service(*role, registry.create(&BackendSpec::parse(&o.backend), &ep)?, ep.clone());
        }
    }
    Ok(Arc::new(b.build()?))
}

/// Resolved configuration: label hierarchy, gateway and run identity.
pub struct Context {
    pub config: AppConfig,
    pub hierarchy: LabelHierarchy,
    pub gateway: Arc<Gateway>,
    registry: BackendRegistry,
    fingerprint: ContentHash,
}

impl Context {
    pub fn new(config: AppConfig) -> AppResult<Self> {
        let registry = registry();
        let spec = BackendSpec::parse(&config.backend);
        let world = synth_world(&spec)?;
        let hierarchy = match (&config.hierarchy, &world) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| AppError::user(format!("cannot read {}: {e}", path.display())))?;
                LabelHierarchy::parse(&text).map_err(|e| AppError::user(format!("{}: {e}", path.display())))?
            }
            (None, Some(w)) => w.hierarchy().map_err(|e| AppError::user(e.to_string()))?,
            (None, None) => {
                return Err(AppError::user(format!(
                    "backend `{}` needs a label hierarchy file (set `hierarchy` in the config or pass --hierarchy)",
                    config.backend
                )))
            }
        };

        // what the results depend on: engine settings, models and labels
        let descriptor = match &world {
            Some(w) => w.to_json(),
            None => config.backend.clone(),
        };
        let overrides: Vec<String> = config
            .services
            .iter()
            .map(|(role, o)| format!("{role}={}", o.backend))
            .collect();
        let fingerprint = ContentHash::of(
            format!(
                "{}\n{}\n{}\n{}",
                config.engine.hash(),
                descriptor,
                hierarchy.to_tsv(),
                overrides.join(",")
            )
            .as_bytes(),
        );

        let gateway = build_gateway(&registry, &config, &hierarchy, &config.backend, true)?;
        Ok(Context {
            config,
            hierarchy,
            gateway,
            registry,
            fingerprint,
        })
    }

    /// A gateway with every service on `spec`, sharing this run's labels.
    pub fn gateway_for(&self, spec: &str) -> AppResult<Arc<Gateway>> {
        build_gateway(&self.registry, &self.config, &self.hierarchy, spec, false)
    }

    pub fn fingerprint(&self) -> String {
        self.fingerprint.to_hex()
    }

    /// Configured run id, else a prefix of the fingerprint.
    pub fn run_id(&self) -> String {
        self.config
            .run_id
            .clone()
            .unwrap_or_else(|| self.fingerprint()[..16].to_string())
    }

    /// Opens (or resumes) the run for writing.
    pub fn open_run(&self, root: &Path) -> AppResult<Run> {
        let id = self.run_id();
        let (run, report) = Run::open(root, &id, &self.fingerprint())?;
        if let Some(repair) = &report.repair {
            tracing::warn!(run = %id, "{repair}");
        }
        tracing::info!(run = %id, records = report.records, created = report.created, "run open");
        Ok(run)
    }

    pub fn engine(&self, run: Option<Run>) -> AppResult<Engine> {
        let engine = Engine::new(self.gateway.clone(), self.hierarchy.clone(), self.config.engine.clone())?;
        Ok(match run {
            Some(r) => engine.with_run(r),
            None => engine,
        })
    }
}
