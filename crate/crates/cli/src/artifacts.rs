//! Atomic artifact writes with content hashes.

use std::io::{Cursor, Write};
use std::path::Path;

use anyhow::{Context, Result};
use image::{ImageFormat, RgbImage};
use meshflow_core::render::RenderOutput;
use sha2::{Digest, Sha256};

use crate::manifest::ArtifactRecord;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Writes `bytes` to `root/rel` through a temporary file in the same
/// directory, so readers never observe a partial file.
pub fn write_atomic(root: &Path, rel: &str, bytes: &[u8]) -> Result<ArtifactRecord> {
    let path = root.join(rel);
    let dir = path.parent().context("artifact path has no parent")?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(&path).with_context(|| format!("persisting {}", path.display()))?;
    Ok(ArtifactRecord {
        path: rel.to_string(),
        sha256: sha256_hex(bytes),
        bytes: bytes.len() as u64,
    })
}

/// Re-hashes an artifact on disk and compares it with its record.
pub fn verify_artifact(root: &Path, record: &ArtifactRecord) -> bool {
    match std::fs::read(root.join(&record.path)) {
        Ok(bytes) => bytes.len() as u64 == record.bytes && sha256_hex(&bytes) == record.sha256,
        Err(_) => false,
    }
}

pub fn png_bytes(render: &RenderOutput) -> Result<Vec<u8>> {
    let r = render.resolution as u32;
    let img = RgbImage::from_raw(r, r, render.to_rgb8()).context("render buffer size")?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use meshflow_core::render::{canonical_views, render_normal_mask};
    use meshflow_core::shapes::icosphere;

    #[test]
    fn atomic_write_records_hash() {
        let dir = tempfile::tempdir().unwrap();
        let rec = write_atomic(dir.path(), "a/b.bin", b"abc").unwrap();
        assert_eq!(rec.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(rec.bytes, 3);
        assert!(verify_artifact(dir.path(), &rec));
        std::fs::write(dir.path().join("a/b.bin"), b"abd").unwrap();
        assert!(!verify_artifact(dir.path(), &rec));
    }

    #[test]
    fn png_decodes_to_render() {
        let mesh = icosphere(0.8, 2);
        let cam = &canonical_views(32).unwrap()[0];
        let render = render_normal_mask(&mesh, cam);
        let png = png_bytes(&render).unwrap();
        let back = image::load_from_memory(&png).unwrap().to_rgb8();
        assert_eq!(back.dimensions(), (32, 32));
        assert_eq!(back.into_raw(), render.to_rgb8());
    }
}
