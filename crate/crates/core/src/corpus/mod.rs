//! Deterministic synthetic fixtures: fake repositories, matching dumps,
//! ground truth and scripted trajectories.

mod generate;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crashdump::{parse_crashdump, CrashType};
use crate::evalkit::{GroundTruth, Truths};

pub use generate::{generate_corpus, largest_remainder_counts};

pub const MANIFEST_FILE: &str = "corpus.json";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid crash-type mix: {0}")]
    InvalidMix(String),
    #[error("manifest {path}: {detail}")]
    Manifest { path: String, detail: String },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Target share of each crash type; must sum to 1.
pub type CrashMix = Vec<(CrashType, f64)>;

/// Crash-type distribution of the studied dataset (289/118/43/3/1 of 454).
pub fn default_mix() -> CrashMix {
    [
        (CrashType::SigAbrt, 289.0),
        (CrashType::SigSegvNpe, 118.0),
        (CrashType::SigSegvNonNpe, 43.0),
        (CrashType::SigBus, 3.0),
        (CrashType::SigFpe, 1.0),
    ]
    .into_iter()
    .map(|(t, n)| (t, n / 454.0))
    .collect()
}

/// Parses `SigAbrt=0.64,SigSegvNpe=0.26,...`.
pub fn parse_mix(text: &str) -> Result<CrashMix, CorpusError> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|part| {
            let (name, ratio) = part
                .split_once('=')
                .ok_or_else(|| CorpusError::InvalidMix(format!("expected TYPE=RATIO, got '{part}'")))?;
            let kind: CrashType = name.trim().parse().map_err(CorpusError::InvalidMix)?;
            let ratio: f64 = ratio
                .trim()
                .parse()
                .map_err(|_| CorpusError::InvalidMix(format!("bad ratio '{ratio}'")))?;
            Ok((kind, ratio))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    /// Buggy file is the top backtrace frame.
    StackTop,
    /// Buggy file appears only in the pending-exception trace.
    PendingOnly,
    /// Buggy file is absent from the stack; reachable through a symbol
    /// definition used at the top frame.
    DeepOnly,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::StackTop, Difficulty::PendingOnly, Difficulty::DeepOnly];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptQuality {
    /// Buggy file predicted first.
    Hit,
    /// Buggy file predicted second, after a decoy.
    Second,
    /// Only decoys predicted.
    Miss,
}

/// What the generator guarantees about a crash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    pub difficulty: Difficulty,
    pub script_quality: ScriptQuality,
    /// Ranking produced by replaying the script any number of times.
    pub agent_ranking: Vec<String>,
    pub agent_confidence: f64,
    /// Repository-relative baseline rankings.
    pub baseline1: Vec<String>,
    pub baseline2: Vec<String>,
    /// The trajectory relies on get_term_definition.
    pub uses_deep_search: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub crash_id: String,
    /// Paths are relative to the manifest's directory unless absolute.
    pub dump_path: PathBuf,
    pub repo_path: PathBuf,
    pub revision: String,
    pub buggy_files: Vec<String>,
    pub crash_type: CrashType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub postmortem_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<Expected>,
}

impl ManifestEntry {
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth::new(self.crash_id.clone(), self.buggy_files.iter().cloned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl CorpusManifest {
    /// Loads a manifest file, or `corpus.json` inside a directory.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(io_err(&file))?;
        let mut manifest: CorpusManifest = serde_json::from_str(&text).map_err(|e| CorpusError::Manifest {
            path: file.display().to_string(),
            detail: e.to_string(),
        })?;
        manifest.base_dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.base_dir.join(rel)
        }
    }

    pub fn entry(&self, crash_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.crash_id == crash_id)
    }

    pub fn truths(&self) -> Truths {
        self.entries
            .iter()
            .map(|e| (e.crash_id.clone(), e.ground_truth()))
            .collect()
    }

    pub fn type_counts(&self) -> BTreeMap<CrashType, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.crash_type).or_default() += 1;
        }
        counts
    }
}

/// Every broken invariant as one line; empty when the corpus is sound.
pub fn validate_manifest(manifest: &CorpusManifest) -> Vec<String> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for e in &manifest.entries {
        let id = &e.crash_id;
        if !ids.insert(id.as_str()) {
            out.push(format!("{id}: duplicate crash id"));
        }
        let dump_path = manifest.resolve(&e.dump_path);
        match fs::read_to_string(&dump_path) {
            Err(err) => out.push(format!("{id}: dump {}: {err}", dump_path.display())),
            Ok(text) => match parse_crashdump(&text) {
                Err(err) => out.push(format!("{id}: dump does not parse: {err}")),
                Ok(dump) => match dump.build_revision() {
                    Some(rev) if rev == e.revision => {}
                    Some(rev) => out.push(format!("{id}: dump revision {rev} differs from {}", e.revision)),
                    None => out.push(format!("{id}: dump has no build revision")),
                },
            },
        }
        let repo = manifest.resolve(&e.repo_path);
        if !repo.is_dir() {
            out.push(format!("{id}: repository {} is missing", repo.display()));
        } else {
            if e.buggy_files.is_empty() {
                out.push(format!("{id}: no buggy files"));
            }
            for f in &e.buggy_files {
                if !repo.join(f).is_file() {
                    out.push(format!("{id}: buggy file {f} not in repository"));
                }
            }
        }
        for (what, p) in [("script", &e.script_path), ("postmortem", &e.postmortem_path)] {
            if let Some(p) = p {
                let full = manifest.resolve(p);
                if !full.is_file() {
                    out.push(format!("{id}: {what} {} is missing", full.display()));
                }
            }
        }
    }
    out
}
