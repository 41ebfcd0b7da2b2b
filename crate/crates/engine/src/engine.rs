use std::collections::{BTreeSet, HashMap};
use std::future::Future;
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use spurfinder_core::{build_base_prompt, Caption, ContentHash, LabelHierarchy, LabelId};
use spurfinder_gateway::Gateway;
use spurfinder_store::{RecordKind, Run, StoredRecord};

use crate::config::EngineConfig;
use crate::error::{EngineError, Result};
use crate::refine::{default_lexicon, RewriteRegistry};

/// A value together with the id of the record holding it (empty when the
/// engine runs without a store).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stored<T> {
    pub id: String,
    pub value: T,
}

/// Shared state of one run: services, label hierarchy, config and the
/// optional run store that makes every stage resumable.
pub struct Engine {
    gateway: Arc<Gateway>,
    hierarchy: Arc<LabelHierarchy>,
    config: EngineConfig,
    run: Option<Arc<Mutex<Run>>>,
    images: Mutex<HashMap<ContentHash, Arc<Vec<u8>>>>,
    lexicon: BTreeSet<String>,
    rules: RewriteRegistry,
}

impl Engine {
    pub fn new(gateway: Arc<Gateway>, hierarchy: LabelHierarchy, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let mut lexicon = default_lexicon();
        lexicon.extend(config.extra_adjectives.iter().cloned());
        Ok(Engine {
            gateway,
            hierarchy: Arc::new(hierarchy),
            config,
            run: None,
            images: Mutex::new(HashMap::new()),
            lexicon,
            rules: RewriteRegistry::default(),
        })
    }

    pub fn with_run(mut self, run: Run) -> Self {
        self.run = Some(Arc::new(Mutex::new(run)));
        self
    }

    pub fn with_rules(mut self, rules: RewriteRegistry) -> Self {
        self.rules = rules;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn hierarchy(&self) -> &LabelHierarchy {
        &self.hierarchy
    }

    pub fn lexicon(&self) -> &BTreeSet<String> {
        &self.lexicon
    }

    pub fn rules(&self) -> &RewriteRegistry {
        &self.rules
    }

    pub fn run(&self) -> Option<&Arc<Mutex<Run>>> {
        self.run.as_ref()
    }

    pub fn base_caption(&self, label: &LabelId) -> Result<Caption> {
        Ok(build_base_prompt(label, &self.hierarchy)?)
    }

    /// Label ids the classifier may return.
    pub fn label_count(&self) -> usize {
        self.hierarchy.leaves().count()
    }

    /// Keeps image bytes for later stages; persisted when a run is open.
    pub(crate) fn keep_image(&self, hash: ContentHash, png: Arc<Vec<u8>>) -> Result<()> {
        if let Some(run) = &self.run {
            let run = run.lock().expect("run poisoned");
            if !run.blobs().contains(&hash) {
                run.blobs().put(&png)?;
            }
        }
        self.images.lock().expect("image cache poisoned").insert(hash, png);
        Ok(())
    }

    pub fn image(&self, hash: &ContentHash) -> Result<Arc<Vec<u8>>> {
        if let Some(png) = self.images.lock().expect("image cache poisoned").get(hash) {
            return Ok(png.clone());
        }
        if let Some(run) = &self.run {
            let png = Arc::new(run.lock().expect("run poisoned").blobs().get(hash)?);
            self.images
                .lock()
                .expect("image cache poisoned")
                .insert(*hash, png.clone());
            return Ok(png);
        }
        Err(EngineError::MissingImage(hash.to_hex()))
    }

    pub fn record(&self, id: &str) -> Option<StoredRecord> {
        let run = self.run.as_ref()?;
        let run = run.lock().expect("run poisoned");
        run.by_id(id).cloned()
    }

    /// Returns the stored result for `(kind, key)` or computes and appends
    /// it. Stages must be deterministic so a resumed run reproduces the
    /// uninterrupted one, and callers must run stages one at a time so
    /// record order never depends on timing.
    pub(crate) async fn stage<T, F>(&self, kind: RecordKind, key: &str, compute: F) -> Result<Stored<T>>
    where
        T: Serialize + DeserializeOwned,
        F: Future<Output = Result<T>>,
    {
        if let Some(run) = &self.run {
            let found = run.lock().expect("run poisoned").find(kind, key).cloned();
            if let Some(rec) = found {
                return Ok(Stored {
                    id: rec.id(),
                    value: rec.decode()?,
                });
            }
        }
        let value = compute.await?;
        let id = match &self.run {
            Some(run) => {
                let seq = run.lock().expect("run poisoned").append(kind, key, &value)?;
                format!("{kind}-{seq}")
            }
            None => String::new(),
        };
        Ok(Stored { id, value })
    }
}
