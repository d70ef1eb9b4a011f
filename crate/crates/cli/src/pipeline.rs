//! Batch orchestration: discover meshes, run the stage chain per asset on a
//! bounded worker pool, and stream records into the manifest in input order.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use anyhow::{Context, Result};
use meshflow_core::fieldgen::{make_watertight, FieldGenParams};
use meshflow_core::io::{load_mesh_auto, write_obj};
use meshflow_core::mesh::NORMALIZE_MARGIN;
use meshflow_core::render::{canonical_views, filter_decision, render_normal_mask};
use meshflow_core::sample::build_bundle;
use meshflow_core::TriangleMesh;
use sha2::{Digest, Sha256};

use crate::artifacts::{png_bytes, sha256_hex, verify_artifact, write_atomic};
use crate::config::PipelineConfig;
use crate::manifest::{
    read_manifest, ArtifactRecord, AssetRecord, AssetStats, ManifestWriter, StageOutcome, StageStatus, MANIFEST_FILE,
    TOOL_VERSION,
};

pub const STAGES: [&str; 5] = ["ingest", "filter", "previews", "fieldgen", "sample"];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub total: usize,
    pub kept: usize,
    pub rejected: usize,
    pub failed: usize,
    pub reused: usize,
}

/// Mesh files under `root` with a configured extension, sorted by path.
pub fn discover_inputs(root: &Path, extensions: &[String]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, exts: &[String], out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, exts, out)?;
            } else if path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)))
            {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, extensions, &mut out)?;
    out.sort();
    Ok(out)
}

/// First 8 bytes (little-endian) of `sha256(global_seed_le ‖ input_hash)`.
pub fn asset_seed(global_seed: u64, input_sha256: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(input_sha256.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn asset_name(path: &Path, input_sha256: &str) -> String {
    let stem: String = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("asset")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{stem}-{}", &input_sha256[..8])
}

/// Normalization margin that keeps the `tau` offset surface at least one
/// cell inside the field grid.
pub fn normalize_margin(params: &FieldGenParams) -> f64 {
    NORMALIZE_MARGIN.max(params.tau + params.spacing())
}

pub fn load_normalized(path: &Path, margin: f64) -> Result<TriangleMesh> {
    let mesh = load_mesh_auto(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(mesh.normalize_to_unit_cube(margin)?)
}

pub fn obj_bytes(mesh: &TriangleMesh) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_obj(mesh, &mut out)?;
    Ok(out)
}

struct AssetRun<'a> {
    cfg: &'a PipelineConfig,
    out_root: &'a Path,
    record: AssetRecord,
}

impl AssetRun<'_> {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = format!("{}/{rel}", self.record.asset);
        let rec = write_atomic(self.out_root, &path, bytes)?;
        self.record.artifacts.push(rec);
        Ok(())
    }

    fn push(&mut self, stage: &str, status: StageStatus) {
        self.record.stages.push(StageOutcome {
            stage: stage.to_string(),
            status,
        });
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Option<T> {
        let start = Instant::now();
        let result = f(self);
        self.record
            .timings
            .insert(stage.to_string(), start.elapsed().as_secs_f64());
        match result {
            Ok(v) => {
                self.push(stage, StageStatus::Ok);
                Some(v)
            }
            Err(e) => {
                let msg = format!("{e:#}");
                self.push(stage, StageStatus::Failed { error: msg.clone() });
                self.record.error = Some(format!("{stage}: {msg}"));
                None
            }
        }
    }

    fn skip_rest(&mut self, reason: &str) {
        let done = self.record.stages.len();
        for stage in &STAGES[done..] {
            self.push(stage, StageStatus::Skipped { reason: reason.to_string() });
        }
    }

    fn run(&mut self, path: &Path) {
        let Some(mesh) = self.timed("ingest", |r| {
            let mesh = load_normalized(path, normalize_margin(&r.cfg.fieldgen))?;
            r.record.stats.input_vertices = Some(mesh.vertex_count());
            r.record.stats.input_triangles = Some(mesh.triangle_count());
            r.write("normalized.obj", &obj_bytes(&mesh)?)?;
            Ok(mesh)
        }) else {
            return self.skip_rest("ingest failed");
        };

        if self.cfg.stages.filter {
            let Some(report) = self.timed("filter", |r| {
                let cams = canonical_views(r.cfg.filter.resolution)?;
                let report = filter_decision(&mesh, &cams, &r.cfg.filter);
                r.write("filter.json", &serde_json::to_vec_pretty(&report)?)?;
                Ok(report)
            }) else {
                return self.skip_rest("filter failed");
            };
            let keep = report.keep();
            self.record.filter = Some(report);
            if !keep {
                return self.skip_rest("rejected by filter");
            }
        } else {
            self.push("filter", StageStatus::Skipped { reason: "disabled".into() });
        }

        if self.cfg.stages.previews {
            let ok = self.timed("previews", |r| {
                for (i, cam) in canonical_views(r.cfg.filter.resolution)?.iter().enumerate() {
                    let render = render_normal_mask(&mesh, cam);
                    r.write(&format!("views/view{i}.png"), &png_bytes(&render)?)?;
                    r.write(&format!("views/view{i}.f32"), &render.to_f32_le())?;
                }
                Ok(())
            });
            if ok.is_none() {
                return self.skip_rest("previews failed");
            }
        } else {
            self.push("previews", StageStatus::Skipped { reason: "disabled".into() });
        }

        let surface = if self.cfg.stages.fieldgen {
            let Some(wt) = self.timed("fieldgen", |r| {
                let out = make_watertight(&mesh, &r.cfg.fieldgen)?;
                let mut udf = Vec::new();
                out.udf.write_to(&mut udf)?;
                r.write("udf.sfgd", &udf)?;
                r.write("watertight.obj", &obj_bytes(&out.mesh)?)?;
                let s = &mut r.record.stats;
                s.visible_cells = Some(out.visible_cells);
                s.extracted_triangles = Some(out.extracted.triangle_count());
                s.output_triangles = Some(out.mesh.triangle_count());
                s.output_watertight = Some(out.mesh.is_watertight());
                s.components_total = Some(out.components.len());
                s.components_kept = Some(out.components.iter().filter(|c| c.kept).count());
                Ok(out.mesh)
            }) else {
                return self.skip_rest("fieldgen failed");
            };
            wt
        } else {
            self.push("fieldgen", StageStatus::Skipped { reason: "disabled".into() });
            mesh
        };

        if self.cfg.stages.sample {
            self.timed("sample", |r| {
                let mut params = r.cfg.sampling;
                params.seed = r.record.seed;
                let (bundle, stats) = build_bundle(&surface, &params)?;
                r.write("samples.sfsb", &bundle.to_bytes())?;
                r.record.stats.samples = Some(stats);
                Ok(())
            });
        } else {
            self.push("sample", StageStatus::Skipped { reason: "disabled".into() });
        }
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

/// Runs every stage for one input. Never fails: errors and panics end up in
/// the record.
pub fn process_asset(cfg: &PipelineConfig, out_root: &Path, path: &Path) -> AssetRecord {
    let input = relative(&cfg.input, path);
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            let mut rec = blank_record(cfg, input, String::new(), "unreadable".into());
            rec.error = Some(format!("reading input: {e}"));
            rec.stages = STAGES
                .iter()
                .map(|s| StageOutcome {
                    stage: s.to_string(),
                    status: StageStatus::Skipped {
                        reason: "input unreadable".into(),
                    },
                })
                .collect();
            return rec;
        }
    };
    let hash = sha256_hex(&bytes);
    let name = asset_name(path, &hash);
    let mut run = AssetRun {
        cfg,
        out_root,
        record: blank_record(cfg, input, hash, name),
    };
    let caught = catch_unwind(AssertUnwindSafe(|| run.run(path)));
    if let Err(payload) = caught {
        let msg = panic_message(payload.as_ref());
        let stage = STAGES.get(run.record.stages.len()).copied().unwrap_or("unknown");
        run.push(stage, StageStatus::Failed { error: msg.clone() });
        run.record.error = Some(format!("{stage}: panic: {msg}"));
        run.skip_rest("earlier stage panicked");
    }
    run.record
}

fn blank_record(cfg: &PipelineConfig, input: String, hash: String, asset: String) -> AssetRecord {
    AssetRecord {
        asset,
        seed: if hash.is_empty() { 0 } else { asset_seed(cfg.seed, &hash) },
        input,
        input_sha256: hash,
        config_sha256: cfg.content_hash(),
        tool_version: TOOL_VERSION.to_string(),
        stages: Vec::new(),
        filter: None,
        stats: AssetStats::default(),
        artifacts: Vec::new(),
        error: None,
        timings: BTreeMap::new(),
    }
}

fn reusable(prev: &AssetRecord, cfg_hash: &str, input_hash: &str, out_root: &Path) -> bool {
    prev.ok()
        && prev.config_sha256 == cfg_hash
        && prev.input_sha256 == input_hash
        && prev.tool_version == TOOL_VERSION
        && prev.artifacts.iter().all(|a: &ArtifactRecord| verify_artifact(out_root, a))
}

/// Processes every input under `cfg.input` and writes `out_root/manifest.jsonl`.
///
/// With `resume`, records from a previous manifest are carried over when the
/// input bytes, config hash and tool version match and every listed artifact
/// still hashes to its recorded value.
pub fn run_pipeline(cfg: &PipelineConfig, out_root: &Path, resume: bool) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_root).with_context(|| format!("creating {}", out_root.display()))?;
    let inputs = discover_inputs(&cfg.input, &cfg.extensions)?;
    let manifest_path = out_root.join(MANIFEST_FILE);
    let previous: HashMap<String, AssetRecord> = if resume && manifest_path.exists() {
        read_manifest(&manifest_path)?
            .into_iter()
            .map(|r| (r.input.clone(), r))
            .collect()
    } else {
        HashMap::new()
    };
    let mut writer = ManifestWriter::create(&manifest_path)?;
    let cfg_hash = cfg.content_hash();
    let mut summary = RunSummary {
        total: inputs.len(),
        ..Default::default()
    };

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, AssetRecord, bool)>();
    let workers = cfg.jobs.min(inputs.len()).max(1);
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (inputs, next, previous, cfg_hash) = (&inputs, &next, &previous, &cfg_hash);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(path) = inputs.get(i) else { break };
                let prev = previous.get(&relative(&cfg.input, path)).filter(|p| {
                    std::fs::read(path).is_ok_and(|b| reusable(p, cfg_hash, &sha256_hex(&b), out_root))
                });
                let (record, reused) = match prev {
                    Some(p) => (p.clone(), true),
                    None => (process_asset(cfg, out_root, path), false),
                };
                if tx.send((i, record, reused)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // reorder buffer: records reach the manifest in input order
        let mut pending = BTreeMap::new();
        let mut cursor = 0;
        for (i, record, reused) in rx {
            pending.insert(i, (record, reused));
            while let Some((record, reused)) = pending.remove(&cursor) {
                match (&record.error, record.kept()) {
                    (Some(e), _) => {
                        log::warn!("{}: {e}", record.input);
                        summary.failed += 1;
                    }
                    (None, true) => summary.kept += 1,
                    (None, false) => summary.rejected += 1,
                }
                if reused {
                    summary.reused += 1;
                }
                log::info!("{} -> {}", record.input, record.asset);
                writer.append(&record)?;
                cursor += 1;
            }
        }
        Ok(())
    })?;
    Ok(summary)
}
