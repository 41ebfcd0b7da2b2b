use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use spurfinder_core::ContentHash;

use crate::error::StoreError;

/// Predecessor hash of the first record.
pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Baseline,
    Hypothesis,
    Cluster,
    Refinement,
    Harvest,
    Metric,
}

impl RecordKind {
    pub const ALL: [RecordKind; 6] = [
        RecordKind::Baseline,
        RecordKind::Hypothesis,
        RecordKind::Cluster,
        RecordKind::Refinement,
        RecordKind::Harvest,
        RecordKind::Metric,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RecordKind::Baseline => "baseline",
            RecordKind::Hypothesis => "hypothesis",
            RecordKind::Cluster => "cluster",
            RecordKind::Refinement => "refinement",
            RecordKind::Harvest => "harvest",
            RecordKind::Metric => "metric",
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}.jsonl", self.as_str())
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecordKind {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RecordKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| StoreError::Malformed(format!("unknown record kind `{s}`")))
    }
}

/// On-disk envelope, one per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Envelope {
    pub seq: u64,
    pub kind: RecordKind,
    pub key: String,
    pub prev: String,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredRecord {
    pub seq: u64,
    pub kind: RecordKind,
    /// Stage key used to find the record again on resume.
    pub key: String,
    /// SHA-256 of the record's line (without the newline).
    pub hash: String,
    pub prev: String,
    pub body: Value,
}

impl StoredRecord {
    pub fn decode<T: serde::de::DeserializeOwned>(&self) -> Result<T, StoreError> {
        Ok(serde_json::from_value(self.body.clone())?)
    }

    /// Stable identifier exposed to clients: `<kind>-<seq>`.
    pub fn id(&self) -> String {
        format!("{}-{}", self.kind, self.seq)
    }
}

pub(crate) fn line_hash(line: &str) -> String {
    ContentHash::of(line.as_bytes()).to_hex()
}

pub(crate) fn encode(env: &Envelope) -> Result<String, StoreError> {
    Ok(serde_json::to_string(env)?)
}

pub(crate) fn decode_line(line: &str) -> Result<StoredRecord, StoreError> {
    let env: Envelope = serde_json::from_str(line)?;
    Ok(StoredRecord {
        seq: env.seq,
        kind: env.kind,
        key: env.key,
        hash: line_hash(line),
        prev: env.prev,
        body: env.body,
    })
}

/// Chain line: `seq<TAB>kind<TAB>hash`.
pub(crate) fn parse_chain_line(line: &str) -> Option<(u64, RecordKind, String)> {
    let mut parts = line.split('\t');
    let seq = parts.next()?.parse().ok()?;
    let kind = parts.next()?.parse().ok()?;
    let hash = parts.next()?.to_string();
    if parts.next().is_some() || hash.len() != 64 {
        return None;
    }
    Some((seq, kind, hash))
}
