use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::blobs::BlobStore;
use crate::error::StoreError;
use crate::fault::CrashPlan;
use crate::record::{
    decode_line, encode, line_hash, parse_chain_line, Envelope, RecordKind, StoredRecord,
    GENESIS_HASH,
};

const CHAIN_FILE: &str = "chain.idx";
const RUN_FILE: &str = "run.json";
const LOCK_FILE: &str = "lock";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_id: String,
    /// Seconds since the Unix epoch. Never part of any hash.
    pub created: u64,
    pub config_hash: String,
}

/// Snapshot of a run's committed state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub info: RunInfo,
    pub records: Vec<RecordMeta>,
    /// Committed record count per stage (the part of the key before `/`).
    pub cursor: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub seq: u64,
    pub kind: RecordKind,
    pub key: String,
    pub hash: String,
}

/// What happened while opening a run for writing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpenReport {
    pub created: bool,
    pub records: u64,
    /// Set when a torn tail was cut off; describes the cut.
    pub repair: Option<String>,
}

fn validate_run_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidRunId(id.to_string()))
    }
}

fn read_or_empty(path: &Path) -> Result<Vec<u8>, StoreError> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(StoreError::io(path, e)),
    }
}

/// Complete (newline-terminated) lines of `bytes` with their end offsets.
fn complete_lines(bytes: &[u8]) -> Vec<(&str, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, b) in bytes.iter().enumerate() {
        if *b == b'\n' {
            match std::str::from_utf8(&bytes[start..i]) {
                Ok(s) => out.push((s, i + 1)),
                Err(_) => break,
            }
            start = i + 1;
        }
    }
    out
}

/// Result of walking the chain against the record files.
struct Loaded {
    records: Vec<StoredRecord>,
    chain_len: usize,
    chain_total: usize,
    record_ends: BTreeMap<RecordKind, usize>,
    record_totals: BTreeMap<RecordKind, usize>,
    stop_reason: Option<String>,
}

fn load(dir: &Path) -> Result<Loaded, StoreError> {
    let chain_bytes = read_or_empty(&dir.join(CHAIN_FILE))?;
    let mut files = BTreeMap::new();
    for kind in RecordKind::ALL {
        files.insert(kind, read_or_empty(&dir.join("records").join(kind.file_name()))?);
    }
    let lines: BTreeMap<RecordKind, Vec<(&str, usize)>> =
        files.iter().map(|(k, b)| (*k, complete_lines(b))).collect();
    let mut cursor: BTreeMap<RecordKind, usize> = BTreeMap::new();
    let mut records = Vec::new();
    let mut chain_len = 0;
    let mut prev = GENESIS_HASH.to_string();
    let mut stop_reason = None;
    for (line, end) in complete_lines(&chain_bytes) {
        let seq = records.len() as u64;
        let Some((cseq, kind, hash)) = parse_chain_line(line) else {
            stop_reason = Some(format!("unparseable chain line at seq {seq}"));
            break;
        };
        let idx = cursor.entry(kind).or_insert(0);
        let Some((rline, _)) = lines[&kind].get(*idx) else {
            stop_reason = Some(format!("chain seq {seq} references a missing {kind} record"));
            break;
        };
        let rec = match decode_line(rline) {
            Ok(r) => r,
            Err(e) => {
                stop_reason = Some(format!("record seq {seq} does not decode: {e}"));
                break;
            }
        };
        if cseq != seq || rec.seq != seq || rec.kind != kind || rec.hash != hash || rec.prev != prev {
            stop_reason = Some(format!("chain link broken at seq {seq}"));
            break;
        }
        *idx += 1;
        prev = rec.hash.clone();
        records.push(rec);
        chain_len = end;
    }
    let record_ends = lines
        .iter()
        .map(|(k, ls)| {
            let used = cursor.get(k).copied().unwrap_or(0);
            (*k, if used == 0 { 0 } else { ls[used - 1].1 })
        })
        .collect();
    Ok(Loaded {
        records,
        chain_len,
        chain_total: chain_bytes.len(),
        record_ends,
        record_totals: files.iter().map(|(k, b)| (*k, b.len())).collect(),
        stop_reason,
    })
}

fn manifest_of(info: &RunInfo, records: &[StoredRecord]) -> RunManifest {
    let mut cursor = BTreeMap::new();
    for r in records {
        let stage = r.key.split('/').next().unwrap_or("").to_string();
        *cursor.entry(stage).or_insert(0) += 1;
    }
    RunManifest {
        info: info.clone(),
        records: records
            .iter()
            .map(|r| RecordMeta {
                seq: r.seq,
                kind: r.kind,
                key: r.key.clone(),
                hash: r.hash.clone(),
            })
            .collect(),
        cursor,
    }
}

fn index_keys(records: &[StoredRecord]) -> HashMap<(RecordKind, String), usize> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| ((r.kind, r.key.clone()), i))
        .collect()
}

fn record_by_id<'a>(records: &'a [StoredRecord], id: &str) -> Option<&'a StoredRecord> {
    let (kind, seq) = id.rsplit_once('-')?;
    let seq: u64 = seq.parse().ok()?;
    let r = records.get(seq as usize)?;
    (r.kind.as_str() == kind).then_some(r)
}

/// The single writer of a run directory.
#[derive(Debug)]
pub struct Run {
    dir: PathBuf,
    info: RunInfo,
    records: Vec<StoredRecord>,
    by_key: HashMap<(RecordKind, String), usize>,
    blobs: BlobStore,
    crash: Option<CrashPlan>,
    dirty: bool,
    _lock: File,
}

impl Run {
    /// Creates or resumes `<root>/<run_id>`, taking the writer lock and
    /// repairing a torn tail.
    pub fn open(root: &Path, run_id: &str, config_hash: &str) -> Result<(Run, OpenReport), StoreError> {
        Run::open_with(root, run_id, config_hash, None)
    }

    pub fn open_with(
        root: &Path,
        run_id: &str,
        config_hash: &str,
        crash: Option<CrashPlan>,
    ) -> Result<(Run, OpenReport), StoreError> {
        validate_run_id(run_id)?;
        let dir = root.join(run_id);
        fs::create_dir_all(dir.join("records")).map_err(|e| StoreError::io(&dir, e))?;
        let lock = acquire_lock(&dir)?;

        let run_path = dir.join(RUN_FILE);
        let mut report = OpenReport::default();
        let info = if run_path.is_file() {
            let text = fs::read_to_string(&run_path).map_err(|e| StoreError::io(&run_path, e))?;
            let info: RunInfo = serde_json::from_str(&text)?;
            if info.config_hash != config_hash {
                return Err(StoreError::ConfigMismatch {
                    stored: info.config_hash,
                    requested: config_hash.to_string(),
                });
            }
            info
        } else {
            report.created = true;
            let info = RunInfo {
                run_id: run_id.to_string(),
                created: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                config_hash: config_hash.to_string(),
            };
            let tmp = dir.join("run.json.tmp");
            fs::write(&tmp, serde_json::to_vec_pretty(&info)?).map_err(|e| StoreError::io(&tmp, e))?;
            fs::rename(&tmp, &run_path).map_err(|e| StoreError::io(&run_path, e))?;
            info
        };

        let loaded = load(&dir)?;
        let mut cuts = Vec::new();
        if loaded.chain_len < loaded.chain_total {
            truncate(&dir.join(CHAIN_FILE), loaded.chain_len)?;
            cuts.push(format!(
                "chain.idx {} -> {} bytes",
                loaded.chain_total, loaded.chain_len
            ));
        }
        for (kind, end) in &loaded.record_ends {
            let total = loaded.record_totals[kind];
            if *end < total {
                truncate(&dir.join("records").join(kind.file_name()), *end)?;
                cuts.push(format!("{} {} -> {} bytes", kind.file_name(), total, end));
            }
        }
        if !cuts.is_empty() {
            let reason = loaded
                .stop_reason
                .clone()
                .unwrap_or_else(|| "uncommitted tail".to_string());
            report.repair = Some(format!(
                "repaired to {} committed records ({reason}): {}",
                loaded.records.len(),
                cuts.join(", ")
            ));
        }
        report.records = loaded.records.len() as u64;
        let blobs = BlobStore::new(dir.join("blobs")).with_crash_plan(crash.clone());
        Ok((
            Run {
                by_key: index_keys(&loaded.records),
                records: loaded.records,
                dir,
                info,
                blobs,
                crash,
                dirty: false,
                _lock: lock,
            },
            report,
        ))
    }

    pub fn info(&self) -> &RunInfo {
        &self.info
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn records(&self) -> &[StoredRecord] {
        &self.records
    }

    pub fn find(&self, kind: RecordKind, key: &str) -> Option<&StoredRecord> {
        self.by_key
            .get(&(kind, key.to_string()))
            .map(|&i| &self.records[i])
    }

    /// Locates a record by its `<kind>-<seq>` id.
    pub fn by_id(&self, id: &str) -> Option<&StoredRecord> {
        record_by_id(&self.records, id)
    }

    pub fn manifest(&self) -> RunManifest {
        manifest_of(&self.info, &self.records)
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    /// Appends a record and returns its sequence number. The record is on
    /// disk (data synced) before this returns.
    pub fn append<T: Serialize>(&mut self, kind: RecordKind, key: &str, body: &T) -> Result<u64, StoreError> {
        if self.dirty {
            return Err(StoreError::Dirty);
        }
        let result = self.append_inner(kind, key, body);
        if result.is_err() {
            self.dirty = true;
        }
        result
    }

    fn append_inner<T: Serialize>(&mut self, kind: RecordKind, key: &str, body: &T) -> Result<u64, StoreError> {
        let seq = self.records.len() as u64;
        let prev = self
            .records
            .last()
            .map(|r| r.hash.clone())
            .unwrap_or_else(|| GENESIS_HASH.to_string());
        let env = Envelope {
            seq,
            kind,
            key: key.to_string(),
            prev: prev.clone(),
            body: serde_json::to_value(body)?,
        };
        let line = encode(&env)?;
        let hash = line_hash(&line);
        self.write_boundary(&self.dir.join("records").join(kind.file_name()), format!("{line}\n").as_bytes())?;
        self.write_boundary(&self.dir.join(CHAIN_FILE), format!("{seq}\t{kind}\t{hash}\n").as_bytes())?;
        self.by_key.insert((kind, key.to_string()), self.records.len());
        self.records.push(StoredRecord {
            seq,
            kind,
            key: key.to_string(),
            hash,
            prev,
            body: env.body,
        });
        Ok(seq)
    }

    fn write_boundary(&self, path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| StoreError::io(path, e))?;
        if let Some(n) = self.crash.as_ref().and_then(CrashPlan::tick) {
            let _ = f.write_all(&bytes[..bytes.len() / 2]);
            return Err(StoreError::InjectedCrash(n));
        }
        f.write_all(bytes).map_err(|e| StoreError::io(path, e))?;
        f.sync_data().map_err(|e| StoreError::io(path, e))
    }
}

fn truncate(path: &Path, len: usize) -> Result<(), StoreError> {
    let f = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(|e| StoreError::io(path, e))?;
    f.set_len(len as u64).map_err(|e| StoreError::io(path, e))?;
    f.sync_all().map_err(|e| StoreError::io(path, e))
}

fn acquire_lock(dir: &Path) -> Result<File, StoreError> {
    let path = dir.join(LOCK_FILE);
    let mut f = OpenOptions::new()
        .read(true)
        .write(true)
        .create(true)
        .truncate(false)
        .open(&path)
        .map_err(|e| StoreError::io(&path, e))?;
    match f.try_lock() {
        Ok(()) => {}
        Err(std::fs::TryLockError::WouldBlock) => {
            let mut holder = String::new();
            let _ = f.read_to_string(&mut holder);
            let holder = holder.trim().to_string();
            return Err(StoreError::Locked {
                path: dir.to_path_buf(),
                holder: (!holder.is_empty()).then_some(holder),
            });
        }
        Err(std::fs::TryLockError::Error(e)) => return Err(StoreError::io(&path, e)),
    }
    f.set_len(0).map_err(|e| StoreError::io(&path, e))?;
    f.seek(SeekFrom::Start(0)).map_err(|e| StoreError::io(&path, e))?;
    write!(f, "{}", std::process::id()).map_err(|e| StoreError::io(&path, e))?;
    Ok(f)
}

/// Lock-free view of a run's committed records; torn tails are ignored,
/// never repaired.
#[derive(Debug, Clone)]
pub struct RunReader {
    dir: PathBuf,
    info: RunInfo,
    records: Vec<StoredRecord>,
}

impl RunReader {
    pub fn open(root: &Path, run_id: &str) -> Result<RunReader, StoreError> {
        validate_run_id(run_id)?;
        let dir = root.join(run_id);
        let run_path = dir.join(RUN_FILE);
        if !run_path.is_file() {
            return Err(StoreError::NoSuchRun(run_id.to_string()));
        }
        let text = fs::read_to_string(&run_path).map_err(|e| StoreError::io(&run_path, e))?;
        let info: RunInfo = serde_json::from_str(&text)?;
        let loaded = load(&dir)?;
        Ok(RunReader {
            dir,
            info,
            records: loaded.records,
        })
    }

    /// Ids of every run directory under `root`, sorted.
    pub fn list(root: &Path) -> Result<Vec<String>, StoreError> {
        let mut out = Vec::new();
        let entries = match fs::read_dir(root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(StoreError::io(root, e)),
        };
        for e in entries {
            let e = e.map_err(|e| StoreError::io(root, e))?;
            if e.path().join(RUN_FILE).is_file() {
                out.push(e.file_name().to_string_lossy().into_owned());
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn info(&self) -> &RunInfo {
        &self.info
    }

    pub fn records(&self) -> &[StoredRecord] {
        &self.records
    }

    pub fn blobs(&self) -> BlobStore {
        BlobStore::new(self.dir.join("blobs"))
    }

    pub fn manifest(&self) -> RunManifest {
        manifest_of(&self.info, &self.records)
    }

    /// Locates a record by its `<kind>-<seq>` id.
    pub fn by_id(&self, id: &str) -> Option<&StoredRecord> {
        record_by_id(&self.records, id)
    }
}
