//! Pipeline configuration, read from TOML.
//!
//! ```toml
//! input = "assets"          # directory scanned recursively
//! output = "out"            # optional; --output or MESHFLOW_OUTPUT win
//! seed = 0
//! jobs = 1
//!
//! [stages]
//! filter = true
//! previews = true
//! fieldgen = true
//! sample = true
//!
//! [fieldgen]               # FieldGenParams
//! resolution = 128          # tau defaults to 3 / resolution
//!
//! [sampling]               # SamplingParams (seed is derived per asset)
//! [filter]                 # FilterThresholds
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use meshflow_core::fieldgen::FieldGenParams;
use meshflow_core::render::FilterThresholds;
use meshflow_core::sample::SamplingParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_EXTENSIONS: [&str; 3] = ["obj", "ply", "stl"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageToggles {
    pub filter: bool,
    pub previews: bool,
    pub fieldgen: bool,
    pub sample: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            filter: true,
            previews: true,
            fieldgen: true,
            sample: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_extensions")]
    pub extensions: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default)]
    pub fieldgen: FieldGenParams,
    #[serde(default)]
    pub sampling: SamplingParams,
    #[serde(default)]
    pub filter: FilterThresholds,
}

fn default_extensions() -> Vec<String> {
    DEFAULT_EXTENSIONS.iter().map(|s| s.to_string()).collect()
}

fn default_jobs() -> usize {
    1
}

/// Everything that influences artifact bytes.
#[derive(Serialize)]
struct HashedPart<'a> {
    seed: u64,
    stages: &'a StageToggles,
    fieldgen: &'a FieldGenParams,
    sampling: &'a SamplingParams,
    filter: &'a FilterThresholds,
}

impl PipelineConfig {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            output: None,
            extensions: default_extensions(),
            seed: 0,
            jobs: 1,
            stages: StageToggles::default(),
            fieldgen: FieldGenParams::default(),
            sampling: SamplingParams::default(),
            filter: FilterThresholds::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).context("invalid pipeline configuration")?;
        // tau follows the resolution unless given explicitly
        let raw: toml::Table = text.parse()?;
        let tau_given = raw
            .get("fieldgen")
            .and_then(|f| f.as_table())
            .is_some_and(|f| f.contains_key("tau"));
        if !tau_given {
            cfg.fieldgen.tau = FieldGenParams::for_resolution(cfg.fieldgen.resolution).tau;
        }
        Ok(cfg)
    }

    /// Parses the file and resolves a relative `input` against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.input.is_relative() {
            cfg.input = base.join(&cfg.input);
        }
        if let Some(out) = &cfg.output {
            if out.is_relative() {
                cfg.output = Some(base.join(out));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.input.is_dir() {
            bail!("input directory {} does not exist", self.input.display());
        }
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        if self.extensions.is_empty() {
            bail!("no input extensions configured");
        }
        self.fieldgen.validate().context("[fieldgen]")?;
        self.sampling.validate().context("[sampling]")?;
        if !(self.filter.resolution >= 8 && self.filter.planar_angle_deg >= 0.0) {
            bail!("[filter]: resolution must be ≥ 8 and the planar angle non-negative");
        }
        Ok(())
    }

    /// SHA-256 over the settings that affect outputs (not paths or `jobs`).
    pub fn content_hash(&self) -> String {
        let part = HashedPart {
            seed: self.seed,
            stages: &self.stages,
            fieldgen: &self.fieldgen,
            sampling: &self.sampling,
            filter: &self.filter,
        };
        let bytes = serde_json::to_vec(&part).expect("plain data serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
