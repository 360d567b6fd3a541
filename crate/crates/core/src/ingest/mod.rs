//! Log ingestion: format detection, per-format parsing and the canonical
//! interchange format.

pub mod canonical;
pub mod nested;
pub mod react;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Trajectory;

pub use canonical::{parse_canonical_line, read_canonical, write_canonical, CanonicalAdapter};
pub use nested::NestedJsonAdapter;
pub use react::ReactLogAdapter;

/// One trajectory parsed from a file, or the reason it was rejected.
pub type ParsedItem = std::result::Result<Trajectory, String>;

/// A pluggable log format. Implementations must be stateless with respect to
/// the files they see, and `detect` must not overlap with any other
/// registered adapter.
pub trait FormatAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, bytes: &[u8]) -> bool;
    fn parse(&self, bytes: &[u8]) -> Vec<ParsedItem>;
}

/// LLM → family assignments, loaded from a JSON object file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FamilyMap(BTreeMap<String, String>);

impl FamilyMap {
    pub const UNMAPPED: &'static str = "unmapped";

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("family map {}: {e}", path.display())))
    }

    pub fn insert(&mut self, llm: impl Into<String>, family: impl Into<String>) {
        self.0.insert(llm.into(), family.into());
    }

    pub fn family_of(&self, llm: &str) -> String {
        self.0
            .get(llm)
            .cloned()
            .unwrap_or_else(|| Self::UNMAPPED.to_string())
    }
}

pub const ADAPTER_NAMES: [&str; 3] = ["canonical", "react", "nested-json"];

/// Builds adapters by name; `None` selects all of them.
pub fn adapters(names: Option<&[String]>, families: &FamilyMap) -> Result<Vec<Box<dyn FormatAdapter>>> {
    let wanted: Vec<String> = match names {
        Some(n) => n.to_vec(),
        None => ADAPTER_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    wanted
        .iter()
        .map(|name| -> Result<Box<dyn FormatAdapter>> {
            match name.as_str() {
                "canonical" => Ok(Box::new(CanonicalAdapter)),
                "react" => Ok(Box::new(ReactLogAdapter::new(families.clone()))),
                "nested-json" => Ok(Box::new(NestedJsonAdapter::new(families.clone()))),
                other => Err(Error::Config(format!(
                    "unknown adapter {other:?} (known: {})",
                    ADAPTER_NAMES.join(", ")
                ))),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub file: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub files_seen: usize,
    pub trajectories_parsed: usize,
    pub trajectories_rejected: usize,
    pub rejection_reasons: Vec<Rejection>,
}

fn list_files(root: &Path) -> Result<Vec<PathBuf>> {
    let meta = std::fs::metadata(root).map_err(|e| Error::io(root, e))?;
    if meta.is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(path, e.into())
        })?;
        if entry.file_type().is_file() {
            files.push(entry.into_path());
        }
    }
    files.sort();
    Ok(files)
}

fn display_path(root: &Path, file: &Path) -> String {
    let rel = file.strip_prefix(root).ok().filter(|p| !p.as_os_str().is_empty());
    rel.unwrap_or(file)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Parses every file below `root` with the given adapters.
///
/// Files are processed in parallel and merged in lexicographic path order.
/// A file that matches no adapter, or more than one, counts as one rejected
/// trajectory; parse failures inside a file are recorded per trajectory.
pub fn ingest_path(
    root: &Path,
    adapters: &[Box<dyn FormatAdapter>],
) -> Result<(Vec<Trajectory>, IngestReport)> {
    let files = list_files(root)?;
    let per_file: Vec<(String, Vec<ParsedItem>)> = files
        .par_iter()
        .map(|path| {
            let name = display_path(root, path);
            let bytes = match std::fs::read(path) {
                Ok(b) => b,
                Err(e) => return (name, vec![Err(format!("unreadable file: {e}"))]),
            };
            let matching: Vec<&Box<dyn FormatAdapter>> =
                adapters.iter().filter(|a| a.detect(&bytes)).collect();
            let items = match matching.as_slice() {
                [] => vec![Err("no format match".to_string())],
                [one] => one.parse(&bytes),
                many => vec![Err(format!(
                    "ambiguous format match: {}",
                    many.iter().map(|a| a.name()).collect::<Vec<_>>().join(", ")
                ))],
            };
            (name, items)
        })
        .collect();

    let mut report = IngestReport {
        files_seen: files.len(),
        ..Default::default()
    };
    let mut trajectories = Vec::new();
    for (file, items) in per_file {
        for item in items {
            match item {
                Ok(t) => {
                    report.trajectories_parsed += 1;
                    trajectories.push(t);
                }
                Err(reason) => {
                    report.trajectories_rejected += 1;
                    report.rejection_reasons.push(Rejection {
                        file: file.clone(),
                        reason,
                    });
                }
            }
        }
    }
    Ok((trajectories, report))
}
