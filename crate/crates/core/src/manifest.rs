//! Labelled image manifests.
//!
//! A manifest is a JSONL file with one sample per line:
//!
//! ```text
//! {"id":"fake_3f2a9c01b4de","path":"/data/ldm/0001.png","true_label":"Fake","generator":"LDM","sha256":"3f2a…"}
//! ```
//!
//! An optional first line `{"manifest":{"name":…,"created_at":…,"source_note":…}}`
//! carries the metadata. Relative sample paths resolve against the
//! manifest's directory.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::digest::{is_hex64, sha256_hex};
use crate::Label;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Generator {
    None,
    Ldm,
    ProGan,
    Other(String),
}

impl Generator {
    pub fn as_str(&self) -> &str {
        match self {
            Generator::None => "None",
            Generator::Ldm => "LDM",
            Generator::ProGan => "ProGAN",
            Generator::Other(tag) => tag,
        }
    }

    pub fn parse(tag: &str) -> Generator {
        match tag {
            "None" => Generator::None,
            "LDM" => Generator::Ldm,
            "ProGAN" => Generator::ProGan,
            other => Generator::Other(other.to_string()),
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Generator {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Generator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Generator::parse(&String::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub path: PathBuf,
    pub true_label: Label,
    pub generator: Generator,
    pub sha256: String,
}

impl Sample {
    fn check(&self) -> Result<(), String> {
        match (self.true_label, &self.generator) {
            (Label::Real, Generator::None) | (Label::Fake, Generator::Ldm | Generator::ProGan | Generator::Other(_)) => {}
            (Label::Real, g) => return Err(format!("Real sample `{}` has generator {g}", self.id)),
            (Label::Fake, _) => return Err(format!("Fake sample `{}` has generator None", self.id)),
        }
        if !is_hex64(&self.sha256) {
            return Err(format!("sample `{}` sha256 is not 64 lowercase hex chars", self.id));
        }
        if self.id.is_empty() {
            return Err("empty sample id".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub name: String,
    #[serde(default)]
    pub created_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub source_note: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub name: String,
    pub samples: Vec<Sample>,
    /// Unset until the manifest is stamped, so scans stay pure.
    pub created_at: Option<DateTime<Utc>>,
    pub source_note: String,
    /// Directory relative sample paths resolve against.
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("directory not found: {}", .0.display())]
    MissingDirectory(PathBuf),
    #[error("no {0} images found")]
    EmptyClass(Label),
    #[error("duplicate image {sha256}: {} and {}", first.display(), second.display())]
    DuplicateImage { sha256: String, first: PathBuf, second: PathBuf },
    #[error("empty image file: {}", .0.display())]
    EmptyImageFile(PathBuf),
    #[error("malformed manifest at line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },
    #[error("manifest invariant violated at line {line}: {reason}")]
    InvariantViolation { line: usize, reason: String },
    #[error("{label}: {available} samples available, {requested} requested")]
    InsufficientClass { label: Label, available: usize, requested: usize },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io { path: path.to_path_buf(), source }
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn collect_images(dir: &Path) -> Result<Vec<PathBuf>, ManifestError> {
    if !dir.is_dir() {
        return Err(ManifestError::MissingDirectory(dir.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).follow_links(true) {
        let entry = entry.map_err(|e| ManifestError::Io {
            path: e.path().unwrap_or(dir).to_path_buf(),
            source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk error")),
        })?;
        if entry.file_type().is_file() && is_image(entry.path()) {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

fn hash_files(files: &[PathBuf]) -> Result<Vec<(PathBuf, String)>, ManifestError> {
    files
        .par_iter()
        .map(|path| {
            let bytes = std::fs::read(path).map_err(io_err(path))?;
            if bytes.is_empty() {
                return Err(ManifestError::EmptyImageFile(path.clone()));
            }
            Ok((path.clone(), sha256_hex(&bytes)))
        })
        .collect()
}

fn sample_id(label: Label, sha256: &str) -> String {
    format!("{}_{}", label.as_str().to_ascii_lowercase(), &sha256[..12])
}

fn sort_samples(samples: &mut [Sample]) {
    samples.sort_by(|a, b| (a.true_label, &a.sha256).cmp(&(b.true_label, &b.sha256)));
}

/// Builds a manifest from a directory of real images and one of fake images
/// produced by `generator`. Samples are ordered by (label, sha256).
pub fn scan_directories(real_dir: &Path, fake_dir: &Path, generator: Generator) -> Result<Manifest, ManifestError> {
    if generator == Generator::None {
        return Err(ManifestError::InvariantViolation { line: 0, reason: "fake images need a generator tag".into() });
    }
    let mut samples = Vec::new();
    let mut seen: HashMap<String, PathBuf> = HashMap::new();
    for (dir, label, gen) in [(real_dir, Label::Real, Generator::None), (fake_dir, Label::Fake, generator)] {
        let mut hashed = hash_files(&collect_images(dir)?)?;
        if hashed.is_empty() {
            return Err(ManifestError::EmptyClass(label));
        }
        hashed.sort();
        for (path, sha256) in hashed {
            if let Some(first) = seen.get(&sha256) {
                let (first, second) = if first <= &path { (first.clone(), path) } else { (path, first.clone()) };
                return Err(ManifestError::DuplicateImage { sha256, first, second });
            }
            seen.insert(sha256.clone(), path.clone());
            samples.push(Sample { id: sample_id(label, &sha256), path, true_label: label, generator: gen.clone(), sha256 });
        }
    }
    sort_samples(&mut samples);
    Ok(Manifest { name: String::new(), samples, created_at: None, source_note: String::new(), base_dir: None })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    manifest: ManifestMeta,
}

impl Manifest {
    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.true_label == label).count()
    }

    /// Fake generator tags present, sorted.
    pub fn generators(&self) -> Vec<Generator> {
        let mut g: Vec<_> = self
            .samples
            .iter()
            .filter(|s| s.true_label == Label::Fake)
            .map(|s| s.generator.clone())
            .collect();
        g.sort();
        g.dedup();
        g
    }

    pub fn resolve(&self, sample: &Sample) -> PathBuf {
        match &self.base_dir {
            Some(base) if sample.path.is_relative() => base.join(&sample.path),
            _ => sample.path.clone(),
        }
    }

    /// JSONL body: metadata line, then one sample per line.
    pub fn to_jsonl(&self) -> String {
        let header = HeaderLine {
            manifest: ManifestMeta {
                name: self.name.clone(),
                created_at: self.created_at,
                source_note: self.source_note.clone(),
            },
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    /// Recomputes each file's digest; returns the samples that don't match.
    pub fn verify(&self) -> Vec<(Sample, String)> {
        self.samples
            .par_iter()
            .filter_map(|s| {
                let path = self.resolve(s);
                match std::fs::read(&path) {
                    Ok(bytes) if sha256_hex(&bytes) == s.sha256 => None,
                    Ok(bytes) => Some((s.clone(), format!("digest mismatch: file hashes to {}", sha256_hex(&bytes)))),
                    Err(e) => Some((s.clone(), format!("{}: {e}", path.display()))),
                }
            })
            .collect()
    }
}

pub fn parse_manifest(source: &str, default_name: &str) -> Result<Manifest, ManifestError> {
    let mut meta = ManifestMeta { name: default_name.to_string(), created_at: None, source_note: String::new() };
    let mut samples = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut digests: HashMap<String, usize> = HashMap::new();

    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if samples.is_empty() && line.trim_start().starts_with("{\"manifest\"") {
            let header: HeaderLine = serde_json::from_str(line)
                .map_err(|e| ManifestError::MalformedManifest { line: line_no, reason: e.to_string() })?;
            meta = header.manifest;
            continue;
        }
        let sample: Sample = serde_json::from_str(line)
            .map_err(|e| ManifestError::MalformedManifest { line: line_no, reason: e.to_string() })?;
        let violation = |reason: String| ManifestError::InvariantViolation { line: line_no, reason };
        sample.check().map_err(violation)?;
        if let Some(prev) = ids.insert(sample.id.clone(), line_no) {
            return Err(violation(format!("duplicate id `{}` (first on line {prev})", sample.id)));
        }
        if let Some(prev) = digests.insert(sample.sha256.clone(), line_no) {
            return Err(violation(format!("duplicate sha256 {} (first on line {prev})", sample.sha256)));
        }
        samples.push(sample);
    }
    Ok(Manifest { name: meta.name, samples, created_at: meta.created_at, source_note: meta.source_note, base_dir: None })
}

pub fn load_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    let source = std::fs::read_to_string(path).map_err(io_err(path))?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut manifest = parse_manifest(&source, &stem)?;
    manifest.base_dir = path.parent().map(Path::to_path_buf);
    Ok(manifest)
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<(), ManifestError> {
    let mut file = std::fs::File::create(path).map_err(io_err(path))?;
    file.write_all(manifest.to_jsonl().as_bytes()).map_err(io_err(path))
}

/// Draws `n_per_class` Real and Fake samples with a ChaCha8 generator seeded
/// by `seed`, over each class in sha256 order.
pub fn sample_balanced(manifest: &Manifest, n_per_class: usize, seed: u64) -> Result<Manifest, ManifestError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(2 * n_per_class);
    for label in [Label::Real, Label::Fake] {
        let mut class: Vec<&Sample> = manifest.samples.iter().filter(|s| s.true_label == label).collect();
        class.sort_by(|a, b| a.sha256.cmp(&b.sha256));
        if class.len() < n_per_class {
            return Err(ManifestError::InsufficientClass { label, available: class.len(), requested: n_per_class });
        }
        picked.extend(index::sample(&mut rng, class.len(), n_per_class).into_iter().map(|i| class[i].clone()));
    }
    sort_samples(&mut picked);
    Ok(Manifest {
        name: format!("{}-balanced{n_per_class}-seed{seed}", manifest.name),
        samples: picked,
        created_at: manifest.created_at,
        source_note: manifest.source_note.clone(),
        base_dir: manifest.base_dir.clone(),
    })
}
