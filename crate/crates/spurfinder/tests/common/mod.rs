#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;
use spurfinder_core::{build_base_prompt, LabelId};
use spurfinder_synthworld::{default_world, World, PLANTED_PHRASE};

pub const PLANTED: &str = "a realistic photograph of a fly (insect). it is on a flower.";
pub const FLY_BASE: &str = "a realistic photograph of a fly (insect).";

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spurfinder"));
    c.env_remove("RUST_LOG").env_remove("SPURFINDER_RUN_ROOT");
    c
}

pub fn spurfinder(root: &Path, args: &[&str]) -> Output {
    bin().args(args).env("SPURFINDER_RUN_ROOT", root).output().unwrap()
}

pub fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// `<dir>/<label>/<i>.png` images from the default world; fly images carry
/// the planted attribute so harvesting finds failures quickly.
pub fn write_seed_dir(dir: &Path, per_label: u32) -> PathBuf {
    let world = World::new(default_world()).unwrap();
    for label in ["fly", "bee", "daisy"] {
        let mut prompt = build_base_prompt(&LabelId::new(label), world.hierarchy()).unwrap().render();
        if label == "fly" {
            prompt = format!("{prompt} {PLANTED_PHRASE}");
        }
        let sub = dir.join(label);
        std::fs::create_dir_all(&sub).unwrap();
        for (i, (_, png)) in world.generate(&prompt, per_label, 40).unwrap().into_iter().enumerate() {
            std::fs::write(sub.join(format!("{i:02}.png")), png).unwrap();
        }
    }
    dir.to_path_buf()
}

/// A child process killed on drop.
pub struct Server {
    pub child: Child,
    pub url: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Starts a serving subcommand on port 0 and waits for its address.
pub fn start_server(args: &[&str], root: &Path) -> Server {
    let mut child = bin()
        .args(args)
        .env("SPURFINDER_RUN_ROOT", root)
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let url = loop {
        let line = lines.next().expect("server exited before listening").unwrap();
        if let Some(url) = line.strip_prefix("listening on ") {
            break url.trim().to_string();
        }
    };
    // keep draining so the child never blocks on a full pipe
    std::thread::spawn(move || for _ in lines {});
    Server { child, url }
}
