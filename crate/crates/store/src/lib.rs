//! Run directories.
//!
//! ```text
//! <root>/<run-id>/
//!   run.json              run id, creation time, config hash
//!   records/<kind>.jsonl  one JSON record per line, per record kind
//!   chain.idx             `seq<TAB>kind<TAB>hash` per committed record
//!   blobs/<2-hex>/<hash>.png
//!   lock                  held by the single writer
//! ```
//!
//! A record is committed once its chain line is written. Opening a run for
//! writing repairs any torn tail back to the last valid chain link.

mod blobs;
mod error;
mod fault;
mod record;
mod run;

pub use blobs::BlobStore;
pub use error::StoreError;
pub use fault::CrashPlan;
pub use record::{RecordKind, StoredRecord, GENESIS_HASH};
pub use run::{OpenReport, Run, RunInfo, RunManifest, RunReader};
