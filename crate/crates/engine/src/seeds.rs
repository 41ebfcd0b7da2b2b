use spurfinder_core::{Caption, ContentHash, LabelId};

/// Seed for one (stage, label, caption) stream of a run, so adding a
/// hypothesis never shifts the samples of another.
pub fn stream_seed(run_seed: u64, stage: &str, label: &LabelId, caption: &Caption) -> u64 {
    let text = format!("{run_seed}\n{stage}\n{label}\n{}", caption.render());
    ContentHash::of(text.as_bytes()).prefix_u64() >> 1
}
