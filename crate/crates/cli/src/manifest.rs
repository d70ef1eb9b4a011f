//! Per-asset run records, stored one JSON object per line.
//!
//! Record schema:
//!
//! | key             | meaning                                                     |
//! |-----------------|-------------------------------------------------------------|
//! | `asset`         | output directory name, `<stem>-<first 8 hex of input hash>` |
//! | `input`         | path relative to the input root                             |
//! | `input_sha256`  | hash of the input file bytes                                |
//! | `config_sha256` | [`PipelineConfig::content_hash`](crate::config::PipelineConfig::content_hash) |
//! | `seed`          | per-asset seed derived from the global seed and input hash  |
//! | `tool_version`  | crate version                                               |
//! | `stages`        | ordered stage outcomes (`ok`, `skipped`, `failed`)          |
//! | `filter`        | filter report, when the filter ran                          |
//! | `stats`         | mesh, field and sample statistics                           |
//! | `artifacts`     | every written file with its SHA-256 and size                |
//! | `error`         | first failure message, if any                               |
//! | `timings`       | wall-clock seconds per stage                                |

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{Context, Result};
use meshflow_core::render::FilterReport;
use meshflow_core::sample::BundleStats;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the output root.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Skipped { reason: String },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: String,
    #[serde(flatten)]
    pub status: StageStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssetStats {
    pub input_vertices: Option<usize>,
    pub input_triangles: Option<usize>,
    pub visible_cells: Option<usize>,
    pub extracted_triangles: Option<usize>,
    pub output_triangles: Option<usize>,
    pub output_watertight: Option<bool>,
    pub components_kept: Option<usize>,
    pub components_total: Option<usize>,
    pub samples: Option<BundleStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub asset: String,
    pub input: String,
    pub input_sha256: String,
    pub config_sha256: String,
    pub seed: u64,
    pub tool_version: String,
    pub stages: Vec<StageOutcome>,
    pub filter: Option<FilterReport>,
    pub stats: AssetStats,
    pub artifacts: Vec<ArtifactRecord>,
    pub error: Option<String>,
    pub timings: BTreeMap<String, f64>,
}

impl AssetRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn kept(&self) -> bool {
        self.filter.as_ref().is_none_or(FilterReport::keep)
    }

    pub fn stage(&self, name: &str) -> Option<&StageStatus> {
        self.stages.iter().find(|s| s.stage == name).map(|s| &s.status)
    }

    /// SHA-256 of the record with timings removed.
    pub fn content_sha256(&self) -> String {
        let mut r = self.clone();
        r.timings.clear();
        hex::encode(Sha256::digest(serde_json::to_vec(&r).expect("record serializes")))
    }
}

/// Appends records to the manifest, one line each, flushing after every line.
pub struct ManifestWriter {
    file: File,
}

impl ManifestWriter {
    /// Starts a fresh manifest, replacing any previous one.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self { file })
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(Self { file })
    }

    pub fn append(&mut self, record: &AssetRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<AssetRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|(i, line)| {
            let line = line?;
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> AssetRecord {
        AssetRecord {
            asset: "a-0123abcd".into(),
            input: "a.obj".into(),
            input_sha256: "00".into(),
            config_sha256: "11".into(),
            seed: 7,
            tool_version: TOOL_VERSION.into(),
            stages: vec![
                StageOutcome {
                    stage: "ingest".into(),
                    status: StageStatus::Ok,
                },
                StageOutcome {
                    stage: "fieldgen".into(),
                    status: StageStatus::Skipped {
                        reason: "rejected".into(),
                    },
                },
            ],
            filter: None,
            stats: AssetStats::default(),
            artifacts: vec![],
            error: None,
            timings: BTreeMap::from([("ingest".to_string(), 0.25)]),
        }
    }

    #[test]
    fn roundtrip_and_timing_free_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut w = ManifestWriter::create(&path).unwrap();
        let a = record();
        let mut b = record();
        b.timings.insert("ingest".into(), 9.0);
        w.append(&a).unwrap();
        w.append(&b).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, vec![a.clone(), b.clone()]);
        assert_eq!(a.content_sha256(), b.content_sha256());
        let line = std::fs::read_to_string(&path).unwrap();
        assert!(line.contains(r#"{"stage":"fieldgen","status":"skipped","reason":"rejected"}"#));
    }
}
