//! Adversarial dataset harvesting: caption a seed corpus, mass-sample each
//! caption, keep the failures, export a manifest plus blobs.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use spurfinder_core::{Caption, ContentHash, FailurePolicy, LabelId, Prediction};

use crate::config::{HarvestConfig, StopRule};
use crate::discovery::sample_caption;
use crate::engine::Engine;
use crate::error::{EngineError, Result};
use crate::progress::Progress;
use crate::seeds::stream_seed;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One image of the seed corpus with its ground-truth label.
#[derive(Debug, Clone)]
pub struct SeedImage {
    pub name: String,
    pub png: Arc<Vec<u8>>,
    pub truth: LabelId,
}

/// Reads `<dir>/<label-id>/*.png`, sorted by label then file name.
pub fn load_seed_dir(dir: &Path) -> Result<Vec<SeedImage>> {
    let mut out = Vec::new();
    let mut labels: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| EngineError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    labels.sort();
    for label_dir in labels {
        let label = label_dir.file_name().unwrap().to_string_lossy().into_owned();
        let mut files: Vec<PathBuf> = fs::read_dir(&label_dir)
            .map_err(|e| EngineError::io(&label_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        for f in files {
            let png = fs::read(&f).map_err(|e| EngineError::io(&f, e))?;
            out.push(SeedImage {
                name: format!("{label}/{}", f.file_name().unwrap().to_string_lossy()),
                png: Arc::new(png),
                truth: LabelId::new(label.clone()),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCaption {
    pub caption: Caption,
    pub truth: LabelId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCorpus {
    pub captions: Vec<SeedCaption>,
    /// Images whose captioning failed.
    pub skipped: Vec<String>,
}

/// One caption per seed image, prefixed with the truth's base prompt.
pub async fn caption_seed_corpus(engine: &Engine, images: &[SeedImage], max_sentences: u32) -> Result<SeedCorpus> {
    if images.is_empty() {
        return Err(EngineError::Invalid("seed corpus is empty".into()));
    }
    let profile = &engine.config().fewshot_profile;
    let mut prefixes = Vec::with_capacity(images.len());
    for img in images {
        prefixes.push(engine.base_caption(&img.truth)?.render());
    }
    let results = futures::future::join_all(
        images
            .iter()
            .zip(&prefixes)
            .map(|(img, prefix)| engine.gateway().caption(&img.png, prefix, max_sentences, profile)),
    )
    .await;
    let mut corpus = SeedCorpus {
        captions: Vec::new(),
        skipped: Vec::new(),
    };
    let mut last = None;
    for (img, r) in images.iter().zip(results) {
        match r {
            Ok(caption) => corpus.captions.push(SeedCaption {
                caption,
                truth: img.truth.clone(),
            }),
            Err(e) => {
                tracing::warn!(image = %img.name, error = %e, "seed captioning failed");
                corpus.skipped.push(img.name.clone());
                last = Some(e);
            }
        }
    }
    if corpus.captions.is_empty() {
        let e = last.expect("at least one failure");
        return Err(EngineError::ServiceDown(format!("every seed captioning failed: {e}")));
    }
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub image: ContentHash,
    pub truth: LabelId,
    pub prediction: Prediction,
    pub caption: Caption,
    pub seed: u64,
    pub index: u32,
}

/// What happened to one seed caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionHarvest {
    pub caption: Caption,
    pub truth: LabelId,
    pub sampled: u64,
    pub kept: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialDataset {
    pub name: String,
    pub policy: FailurePolicy,
    pub entries: Vec<DatasetEntry>,
    #[serde(default)]
    pub captions: Vec<CaptionHarvest>,
    pub manifest_hash: ContentHash,
}

/// Manifest line; field order is the file format.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    image_sha256: String,
    label: LabelId,
    topk: Prediction,
    caption: String,
    seed: u64,
    index: u32,
    policy: String,
}

impl AdversarialDataset {
    pub fn new(name: impl Into<String>, policy: FailurePolicy, entries: Vec<DatasetEntry>) -> Self {
        let mut d = AdversarialDataset {
            name: name.into(),
            policy,
            entries,
            captions: Vec::new(),
            manifest_hash: ContentHash::of(b""),
        };
        d.manifest_hash = ContentHash::of(&d.manifest_bytes());
        d
    }

    pub fn manifest_bytes(&self) -> Vec<u8> {
        let policy = self.policy.to_string();
        let mut out = Vec::new();
        for e in &self.entries {
            let line = ManifestLine {
                image_sha256: e.image.to_hex(),
                label: e.truth.clone(),
                topk: e.prediction.clone(),
                caption: e.caption.render(),
                seed: e.seed,
                index: e.index,
                policy: policy.clone(),
            };
            serde_json::to_writer(&mut out, &line).expect("manifest line serializes");
            out.push(b'\n');
        }
        out
    }
}

/// Samples every caption until `keep_cap` failures are kept or
/// `sample_cap` images are drawn, then merges the per-caption lists round
/// robin so a total cap keeps as many captions represented as possible.
/// Entries are unique by image hash.
pub async fn harvest(
    engine: &Engine,
    name: &str,
    captions: &[SeedCaption],
    cfg: &HarvestConfig,
    policy: &FailurePolicy,
    seed: u64,
    progress: &Progress,
) -> Result<AdversarialDataset> {
    if captions.is_empty() {
        return Err(EngineError::Invalid("no captions to harvest".into()));
    }
    cfg.validate()?;
    let per_caption: Vec<(CaptionHarvest, Vec<DatasetEntry>)> = stream::iter(captions)
        .map(|sc| harvest_one(engine, sc, cfg, policy, seed, progress))
        .buffered(cfg.width)
        .collect()
        .await;

    let total_cap = cfg.total_keep_cap.unwrap_or(u64::MAX) as usize;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    let depth = per_caption.iter().map(|(_, e)| e.len()).max().unwrap_or(0);
    let mut kept = vec![0u64; per_caption.len()];
    'rounds: for round in 0..depth {
        for (i, (_, list)) in per_caption.iter().enumerate() {
            if entries.len() >= total_cap {
                break 'rounds;
            }
            if let Some(e) = list.get(round) {
                if seen.insert(e.image) {
                    entries.push(e.clone());
                    kept[i] += 1;
                }
            }
        }
    }
    let mut ds = AdversarialDataset::new(name, *policy, entries);
    ds.captions = per_caption
        .into_iter()
        .zip(kept)
        .map(|((mut h, _), k)| {
            h.kept = k;
            h
        })
        .collect();
    Ok(ds)
}

async fn harvest_one(
    engine: &Engine,
    sc: &SeedCaption,
    cfg: &HarvestConfig,
    policy: &FailurePolicy,
    seed: u64,
    progress: &Progress,
) -> (CaptionHarvest, Vec<DatasetEntry>) {
    let mut report = CaptionHarvest {
        caption: sc.caption.clone(),
        truth: sc.truth.clone(),
        sampled: 0,
        kept: 0,
        error: None,
    };
    if cfg.keep_cap == 0 {
        return (report, Vec::new());
    }
    let stop = StopRule {
        target_failures: cfg.keep_cap,
        max_samples: cfg.sample_cap,
        batch_size: cfg.sample_cap.min(StopRule::default().batch_size),
    };
    let s = stream_seed(seed, "harvest", &sc.truth, &sc.caption);
    match sample_caption(engine, &sc.caption, &sc.truth, None, policy, &stop, s, progress).await {
        Ok(out) => {
            report.sampled = out.measurement.n;
            let entries = out
                .failures
                .into_iter()
                .take(cfg.keep_cap as usize)
                .map(|f| DatasetEntry {
                    image: f.image,
                    truth: sc.truth.clone(),
                    prediction: f.prediction.expect("failures carry predictions"),
                    caption: f.prompt,
                    seed: f.seed,
                    index: f.index,
                })
                .collect();
            (report, entries)
        }
        Err(e) => {
            tracing::warn!(caption = %sc.caption.render(), error = %e, "caption harvest failed");
            report.error = Some(e.to_string());
            (report, Vec::new())
        }
    }
}

/// Writes `manifest.jsonl` and `blobs/<hex>.png` under `dir`. Images come
/// from `image`, typically a run's blob store.
pub fn export<F>(dataset: &AdversarialDataset, dir: &Path, image: F) -> Result<PathBuf>
where
    F: Fn(&ContentHash) -> Result<Arc<Vec<u8>>>,
{
    let blobs = dir.join("blobs");
    fs::create_dir_all(&blobs).map_err(|e| EngineError::io(&blobs, e))?;
    for e in &dataset.entries {
        let png = image(&e.image)?;
        if ContentHash::of(&png) != e.image {
            return Err(EngineError::MissingImage(e.image.to_hex()));
        }
        let path = blobs.join(format!("{}.png", e.image.to_hex()));
        if !path.is_file() {
            fs::write(&path, &*png).map_err(|err| EngineError::io(&path, err))?;
        }
    }
    let manifest = dir.join(MANIFEST_FILE);
    let tmp = dir.join("manifest.jsonl.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| EngineError::io(&tmp, e))?;
    f.write_all(&dataset.manifest_bytes())
        .and_then(|_| f.sync_all())
        .map_err(|e| EngineError::io(&tmp, e))?;
    fs::rename(&tmp, &manifest).map_err(|e| EngineError::io(&manifest, e))?;
    Ok(manifest)
}

/// Path of an exported entry's image.
pub fn exported_blob(dir: &Path, hash: &ContentHash) -> PathBuf {
    dir.join("blobs").join(format!("{}.png", hash.to_hex()))
}

/// Reads an exported dataset back, verifying every blob against its hash.
pub fn import(dir: &Path, name: &str) -> Result<AdversarialDataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| EngineError::io(&path, e))?;
    let mut entries = Vec::new();
    let mut policy: Option<FailurePolicy> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let fail = |image: &str, reason: String| EngineError::Manifest {
            line: lineno,
            image: image.to_string(),
            reason,
        };
        let line: ManifestLine = serde_json::from_str(raw).map_err(|e| fail("?", e.to_string()))?;
        let img = line.image_sha256.as_str();
        let hash: ContentHash = img.parse().map_err(|e| fail(img, format!("{e}")))?;
        let p: FailurePolicy = line.policy.parse().map_err(|e| fail(img, format!("{e}")))?;
        if policy.is_some_and(|q| q != p) {
            return Err(fail(img, "policy differs from earlier entries".into()));
        }
        policy = Some(p);
        let blob = exported_blob(dir, &hash);
        let bytes = fs::read(&blob).map_err(|e| fail(img, format!("blob unreadable: {e}")))?;
        let actual = ContentHash::of(&bytes);
        if actual != hash {
            return Err(fail(img, format!("blob hash mismatch (found {})", actual.to_hex())));
        }
        let caption = Caption::parse(&line.caption).map_err(|e| fail(img, e.to_string()))?;
        entries.push(DatasetEntry {
            image: hash,
            truth: line.label,
            prediction: line.topk,
            caption,
            seed: line.seed,
            index: line.index,
        });
    }
    let policy = policy.unwrap_or_default();
    let ds = AdversarialDataset::new(name, policy, entries);
    let on_disk = ContentHash::of(text.as_bytes());
    if ds.manifest_hash != on_disk {
        return Err(EngineError::Manifest {
            line: 0,
            image: String::new(),
            reason: "manifest is not in canonical form".into(),
        });
    }
    Ok(ds)
}
