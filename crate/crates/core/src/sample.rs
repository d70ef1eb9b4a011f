//! Training samples drawn from a watertight mesh: surface points with
//! normals, near-surface and volume points with truncated signed distances.
//!
//! Bundle layout on disk (little-endian):
//!
//! | field            | type                                   |
//! |------------------|----------------------------------------|
//! | magic            | `b"SFSB"`                              |
//! | version          | u32 (= 1)                              |
//! | section header ×4| tag u32, count u64, components u8      |
//! | payloads ×4      | f32 × count·components, row-major      |
//!
//! Sections, in order: `SURF` (xyz + normal), `NEAR` (xyz + tsdf),
//! `VOLU` (xyz + tsdf), `ONSF` (xyz + normal).

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvh::DistanceAccelerator;
use crate::mesh::TriangleMesh;
use crate::{GeomError, Result, Vec3};

pub const BUNDLE_MAGIC: &[u8; 4] = b"SFSB";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingParams {
    pub surface_count: usize,
    pub near_surface_count: usize,
    pub volume_count: usize,
    pub on_surface_count: usize,
    pub near_sigma: f64,
    pub tsdf_truncation: f64,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            surface_count: 20480,
            near_surface_count: 8192,
            volume_count: 8192,
            on_surface_count: 8192,
            near_sigma: 0.01,
            tsdf_truncation: 0.05,
            seed: 0,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.surface_count,
            self.near_surface_count,
            self.volume_count,
            self.on_surface_count,
        ];
        if counts.contains(&0) {
            return Err(GeomError::InvalidParameter("sample counts must be ≥ 1".into()));
        }
        if !(self.near_sigma > 0.0 && self.near_sigma.is_finite()) {
            return Err(GeomError::InvalidParameter(format!("near_sigma {}", self.near_sigma)));
        }
        if !(self.tsdf_truncation > 0.0 && self.tsdf_truncation <= 1.0) {
            return Err(GeomError::InvalidParameter(format!(
                "tsdf_truncation {}",
                self.tsdf_truncation
            )));
        }
        Ok(())
    }
}

/// Independent stream per sampler so that changing one count never shifts
/// the draws of another.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct AreaTable {
    cumulative: Vec<f64>,
    total: f64,
}

impl AreaTable {
    fn new(mesh: &TriangleMesh) -> Result<Self> {
        let mut total = 0.0;
        let cumulative: Vec<f64> = (0..mesh.triangle_count())
            .map(|t| {
                total += mesh.triangle_area(t);
                total
            })
            .collect();
        if cumulative.is_empty() || total <= 0.0 {
            return Err(GeomError::EmptyMesh);
        }
        Ok(Self { cumulative, total })
    }

    fn pick(&self, u: f64) -> usize {
        let target = u * self.total;
        self.cumulative
            .partition_point(|&c| c <= target)
            .min(self.cumulative.len() - 1)
    }
}

fn surface_draws(mesh: &TriangleMesh, count: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<Vec3>, Vec<usize>)> {
    let table = AreaTable::new(mesh)?;
    let mut points = Vec::with_capacity(count);
    let mut faces = Vec::with_capacity(count);
    for _ in 0..count {
        let t = table.pick(rng.random());
        let [a, b, c] = mesh.corners(t);
        let r1: f64 = rng.random::<f64>().sqrt();
        let r2: f64 = rng.random();
        points.push(a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2));
        faces.push(t);
    }
    Ok((points, faces))
}

/// Area-weighted uniform points; each normal is the face normal of the
/// triangle the point was drawn from.
pub fn sample_surface(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let (points, faces) = surface_draws(mesh, count, &mut stream(seed, 0))?;
    let normals = faces.iter().map(|&f| mesh.face_normals()[f]).collect();
    Ok((points, normals))
}

/// Surface points displaced along their normal by `N(0, sigma²)`, clamped to
/// `[-1, 1]³`.
pub fn sample_near_surface(mesh: &TriangleMesh, count: usize, sigma: f64, seed: u64) -> Result<Vec<Vec3>> {
    let mut rng = stream(seed, 1);
    let (points, faces) = surface_draws(mesh, count, &mut rng)?;
    Ok(points
        .into_iter()
        .zip(faces)
        .map(|(p, f)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (p + mesh.face_normals()[f] * (sigma * z)).map(|c| c.clamp(-1.0, 1.0))
        })
        .collect())
}

/// I.i.d. uniform points in `[-1, 1]³`.
pub fn sample_volume(count: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = stream(seed, 2);
    (0..count)
        .map(|_| {
            Vec3::new(
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
            )
        })
        .collect()
}

/// `clamp(sign · UDF, -t_max, t_max)`, negative inside (winding > ½).
pub fn tsdf_label(accel: &DistanceAccelerator, p: &Vec3, t_max: f64) -> f64 {
    let d = accel.nearest_within(p, t_max).map_or(t_max, |n| n.distance);
    if d == 0.0 {
        return 0.0;
    }
    if accel.is_inside(p) {
        -d
    } else {
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleStats {
    /// Fraction of volume samples with negative label.
    pub inside_fraction: f64,
    pub mean_abs_tsdf_near: f64,
    pub mean_abs_tsdf_volume: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBundle {
    pub surface_points: Vec<Vec3>,
    pub surface_normals: Vec<Vec3>,
    pub near_points: Vec<Vec3>,
    pub near_tsdf: Vec<f64>,
    pub volume_points: Vec<Vec3>,
    pub volume_tsdf: Vec<f64>,
    pub on_surface_points: Vec<Vec3>,
    pub on_surface_normals: Vec<Vec3>,
}

/// Draws all four sample sets from one seed and labels the near-surface and
/// volume points.
pub fn build_bundle(mesh: &TriangleMesh, params: &SamplingParams) -> Result<(SampleBundle, BundleStats)> {
    params.validate()?;
    let accel = DistanceAccelerator::new(mesh)?;
    let (surface_points, surface_normals) = sample_surface(mesh, params.surface_count, params.seed)?;
    let near_points = sample_near_surface(mesh, params.near_surface_count, params.near_sigma, params.seed)?;
    let volume_points = sample_volume(params.volume_count, params.seed);
    let mut rng = stream(params.seed, 3);
    let (on_surface_points, faces) = surface_draws(mesh, params.on_surface_count, &mut rng)?;
    let on_surface_normals = faces.iter().map(|&f| mesh.face_normals()[f]).collect();
    let label = |pts: &[Vec3]| -> Vec<f64> {
        pts.par_iter()
            .map(|p| tsdf_label(&accel, p, params.tsdf_truncation))
            .collect()
    };
    let near_tsdf = label(&near_points);
    let volume_tsdf = label(&volume_points);
    let mean_abs = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64;
    let stats = BundleStats {
        inside_fraction: volume_tsdf.iter().filter(|&&s| s < 0.0).count() as f64 / volume_tsdf.len() as f64,
        mean_abs_tsdf_near: mean_abs(&near_tsdf),
        mean_abs_tsdf_volume: mean_abs(&volume_tsdf),
    };
    Ok((
        SampleBundle {
            surface_points,
            surface_normals,
            near_points,
            near_tsdf,
            volume_points,
            volume_tsdf,
            on_surface_points,
            on_surface_normals,
        },
        stats,
    ))
}

const TAGS: [&[u8; 4]; 4] = [b"SURF", b"NEAR", b"VOLU", b"ONSF"];

impl SampleBundle {
    fn sections(&self) -> [(usize, u8); 4] {
        [
            (self.surface_points.len(), 6),
            (self.near_points.len(), 4),
            (self.volume_points.len(), 4),
            (self.on_surface_points.len(), 6),
        ]
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(BUNDLE_MAGIC)?;
        out.write_u32::<LittleEndian>(BUNDLE_VERSION)?;
        for (tag, (count, comps)) in TAGS.iter().zip(self.sections()) {
            out.write_u32::<LittleEndian>(u32::from_le_bytes(**tag))?;
            out.write_u64::<LittleEndian>(count as u64)?;
            out.write_u8(comps)?;
        }
        let mut put = |v: f64| out.write_f32::<LittleEndian>(v as f32);
        for (p, n) in self.surface_points.iter().zip(&self.surface_normals) {
            p.iter().chain(n.iter()).try_for_each(|&c| put(c))?;
        }
        for (p, s) in self.near_points.iter().zip(&self.near_tsdf) {
            p.iter().chain(std::iter::once(s)).try_for_each(|&c| put(c))?;
        }
        for (p, s) in self.volume_points.iter().zip(&self.volume_tsdf) {
            p.iter().chain(std::iter::once(s)).try_for_each(|&c| put(c))?;
        }
        for (p, n) in self.on_surface_points.iter().zip(&self.on_surface_normals) {
            p.iter().chain(n.iter()).try_for_each(|&c| put(c))?;
        }
        Ok(())
    }

    /// Reads a bundle back; values carry f32 precision.
    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != BUNDLE_MAGIC {
            return Err(GeomError::Format("bad bundle magic".into()));
        }
        let version = input.read_u32::<LittleEndian>()?;
        if version != BUNDLE_VERSION {
            return Err(GeomError::Format(format!("unsupported bundle version {version}")));
        }
        let mut counts = [0usize; 4];
        for (i, tag) in TAGS.iter().enumerate() {
            let t = input.read_u32::<LittleEndian>()?;
            if t != u32::from_le_bytes(**tag) {
                return Err(GeomError::Format(format!("unexpected section tag {t:#x}")));
            }
            counts[i] = input.read_u64::<LittleEndian>()? as usize;
            let comps = input.read_u8()?;
            let want = if i == 0 || i == 3 { 6 } else { 4 };
            if comps != want {
                return Err(GeomError::Format(format!("section {i} has {comps} components")));
            }
        }
        let mut row = |n: usize| -> Result<Vec<f64>> {
            (0..n)
                .map(|_| Ok(input.read_f32::<LittleEndian>()? as f64))
                .collect()
        };
        let mut pn = |count: usize| -> Result<(Vec<Vec3>, Vec<Vec3>)> {
            let mut p = Vec::with_capacity(count);
            let mut n = Vec::with_capacity(count);
            for _ in 0..count {
                let r = row(6)?;
                p.push(Vec3::new(r[0], r[1], r[2]));
                n.push(Vec3::new(r[3], r[4], r[5]));
            }
            Ok((p, n))
        };
        let (surface_points, surface_normals) = pn(counts[0])?;
        let mut ps = |count: usize| -> Result<(Vec<Vec3>, Vec<f64>)> {
            let mut p = Vec::with_capacity(count);
            let mut s = Vec::with_capacity(count);
            for _ in 0..count {
                let r = row(4)?;
                p.push(Vec3::new(r[0], r[1], r[2]));
                s.push(r[3]);
            }
            Ok((p, s))
        };
        let (near_points, near_tsdf) = ps(counts[1])?;
        let (volume_points, volume_tsdf) = ps(counts[2])?;
        let mut on_surface_points = Vec::with_capacity(counts[3]);
        let mut on_surface_normals = Vec::with_capacity(counts[3]);
        for _ in 0..counts[3] {
            let r = row(6)?;
            on_surface_points.push(Vec3::new(r[0], r[1], r[2]));
            on_surface_normals.push(Vec3::new(r[3], r[4], r[5]));
        }
        Ok(Self {
            surface_points,
            surface_normals,
            near_points,
            near_tsdf,
            volume_points,
            volume_tsdf,
            on_surface_points,
            on_surface_normals,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}
