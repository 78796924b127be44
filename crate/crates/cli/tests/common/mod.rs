#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use truthlens_core::manifest::{save_manifest, scan_directories, Generator, Manifest};
use truthlens_core::pipeline::format_verdict;
use truthlens_core::Label;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_truthlens")
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn truthlens(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("TRUTHLENS_CACHE_DIR")
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn truthlens")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes distinct small `.png` files and saves a manifest at `root/manifest.jsonl`.
pub fn dataset(root: &Path, reals: usize, fakes: usize, generator: Generator) -> (PathBuf, Manifest) {
    for (dir, n) in [("real", reals), ("fake", fakes)] {
        std::fs::create_dir_all(root.join(dir)).unwrap();
        for i in 0..n {
            std::fs::write(root.join(dir).join(format!("{i:03}.png")), format!("\u{89}PNG {dir} sample {i}")).unwrap();
        }
    }
    let mut m = scan_directories(&root.join("real"), &root.join("fake"), generator).unwrap();
    m.name = "synthetic".into();
    let path = root.join("manifest.jsonl");
    save_manifest(&m, &path).unwrap();
    (path, m)
}

/// Scripted outcome of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    FalseNegative,
    TrueNegative,
    FalsePositive,
}

impl Outcome {
    fn marker(self) -> &'static str {
        match self {
            Outcome::TruePositive => "MARK_TP",
            Outcome::FalseNegative => "MARK_FN",
            Outcome::TrueNegative => "MARK_TN",
            Outcome::FalsePositive => "MARK_FP",
        }
    }

    /// Verdict whose fake score keeps every fake above every real:
    /// TP 0.90, FN 0.60, FP 0.55, TN 0.10.
    fn verdict(self) -> String {
        let (label, conf) = match self {
            Outcome::TruePositive => (Label::Fake, 90),
            Outcome::FalseNegative => (Label::Real, 40),
            Outcome::FalsePositive => (Label::Fake, 55),
            Outcome::TrueNegative => (Label::Real, 90),
        };
        format_verdict(label, conf, "scripted outcome")
    }
}

/// Mock script making the first `wrong_real` reals false positives and the
/// first `wrong_fake` fakes false negatives.
pub fn confusion_script(m: &Manifest, wrong_real: usize, wrong_fake: usize) -> Value {
    let mut groups: Vec<(Outcome, Vec<String>)> = [
        Outcome::TruePositive,
        Outcome::FalseNegative,
        Outcome::TrueNegative,
        Outcome::FalsePositive,
    ]
    .into_iter()
    .map(|o| (o, Vec::new()))
    .collect();
    let (mut r, mut f) = (0, 0);
    for s in &m.samples {
        let outcome = match s.true_label {
            Label::Real => {
                r += 1;
                if r <= wrong_real { Outcome::FalsePositive } else { Outcome::TrueNegative }
            }
            Label::Fake => {
                f += 1;
                if f <= wrong_fake { Outcome::FalseNegative } else { Outcome::TruePositive }
            }
        };
        groups.iter_mut().find(|(o, _)| *o == outcome).unwrap().1.push(s.sha256.clone());
    }
    let mut rules = Vec::new();
    for (o, shas) in &groups {
        rules.push(json!({"kind": "multimodal", "image_sha256": shas, "reply": format!("observation {}", o.marker())}));
    }
    for (o, _) in &groups {
        rules.push(json!({"kind": "text", "prompt_contains": o.marker(), "reply": o.verdict()}));
    }
    json!({"rules": rules})
}

/// Mock script where only `signal_prompt` on fake images carries a fake cue.
pub fn single_signal_script(m: &Manifest, signal_prompt: Option<&str>) -> Value {
    let fakes: Vec<&str> = m.samples.iter().filter(|s| s.true_label == Label::Fake).map(|s| s.sha256.as_str()).collect();
    let mut rules = Vec::new();
    if let Some(id) = signal_prompt {
        rules.push(json!({"kind": "multimodal", "prompt_id": id, "image_sha256": fakes, "reply": "ARTIFACT_SIGNAL present"}));
    }
    rules.push(json!({"kind": "multimodal", "reply": "nothing unusual"}));
    rules.push(json!({"kind": "text", "prompt_contains": "ARTIFACT_SIGNAL", "reply": format_verdict(Label::Fake, 80, "artifact")}));
    rules.push(json!({"kind": "text", "reply": format_verdict(Label::Real, 70, "clean")}));
    json!({"rules": rules})
}

pub fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

/// Config file pointing both endpoints at `base_url`.
pub fn live_config(path: &Path, base_url: &str, cache_dir: &Path) {
    let text = format!(
        "cache_dir = {cache:?}\nparallelism = 4\n\n[mm_endpoint]\nbase_url = {base:?}\nmodel_name = \"stub-vlm\"\nmax_retries = 0\n\n[lm_endpoint]\nbase_url = {base:?}\nmodel_name = \"stub-llm\"\nmax_retries = 0\n",
        cache = cache_dir.display().to_string(),
        base = base_url,
    );
    std::fs::write(path, text).unwrap();
}
