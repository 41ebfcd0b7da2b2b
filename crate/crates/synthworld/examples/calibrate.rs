//! Regenerates `world.json`: `cargo run --release --example calibrate > world.json`

use spurfinder_core::LabelId;
use spurfinder_synthworld::{calibrate, default_world_with_weight, DEFAULT_LABEL, DEFAULT_TARGET, PLANTED_ATTRIBUTE};

fn main() {
    let cfg = calibrate(
        default_world_with_weight(1.0),
        &LabelId::new(DEFAULT_LABEL),
        &LabelId::new(DEFAULT_TARGET),
        PLANTED_ATTRIBUTE,
        20.0,
        1_000_000,
        2024,
    )
    .expect("calibration");
    println!("{}", cfg.to_json());
}
