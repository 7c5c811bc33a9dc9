#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixtures().join(name)
}

pub fn studykit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_studykit"))
        .args(args)
        .env_remove("EMBED_URL")
        .env_remove("GEN_URL")
        .env_remove("GEN_API_KEY")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = studykit(args);
    assert!(
        out.status.success(),
        "studykit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Runs the layout stages on the fixture: typed, headed and chunked blocks
/// end up in `dir`.
pub fn layout_stages(dir: &Path) -> PathBuf {
    let typed = dir.join("typed.jsonl");
    let headed = dir.join("headed.jsonl");
    let chunks = dir.join("chunks.jsonl");
    ok(&[
        "associate",
        "--blocks",
        s(&fixture("blocks.jsonl")),
        "--instances",
        s(&fixture("instances.jsonl")),
        "--out",
        s(&typed),
    ]);
    ok(&["infer-headings", "--blocks", s(&typed), "--out", s(&headed)]);
    ok(&["chunk", "--blocks", s(&headed), "--out", s(&chunks)]);
    chunks
}
