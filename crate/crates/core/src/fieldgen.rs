//! Watertight conversion: unsigned distance voxelization, exterior
//! visibility flood fill, hidden-cell reset, iso-surface extraction at `tau`
//! and removal of small or enclosed components.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvh::{closest_point_on_triangle, DistanceAccelerator};
use crate::components::{connected_components, ComponentLabeling};
use crate::grid::ScalarGrid;
use crate::mc::marching_cubes;
use crate::mesh::TriangleMesh;
use crate::{GeomError, Result, Vec3};

/// Value written into hidden cells. Anything below `tau` turns the hidden
/// region into solid so that only the exterior-facing offset surface crosses
/// the iso level.
pub const HIDDEN_FILL: f64 = 0.0;

/// Sample points per component for the ambient-occlusion estimate.
pub const AO_SAMPLE_POINTS: usize = 64;

const AO_SEED: u64 = 0x5EED_A0A0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldGenParams {
    pub resolution: usize,
    pub tau: f64,
    pub ao_rays: usize,
    pub ao_keep_threshold: f64,
    pub min_area_fraction: f64,
}

impl Default for FieldGenParams {
    fn default() -> Self {
        Self::for_resolution(128)
    }
}

impl FieldGenParams {
    /// Defaults with `tau = 3 / resolution`.
    pub fn for_resolution(resolution: usize) -> Self {
        Self {
            resolution,
            tau: 3.0 / resolution as f64,
            ao_rays: 64,
            ao_keep_threshold: 0.05,
            min_area_fraction: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GeomError::InvalidParameter(m));
        if self.resolution < 16 {
            return bad(format!("resolution {} < 16", self.resolution));
        }
        // grid extent is 2
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau {} outside (0, 1)", self.tau));
        }
        if self.ao_rays < 8 {
            return bad(format!("ao_rays {} < 8", self.ao_rays));
        }
        if !(0.0..=1.0).contains(&self.ao_keep_threshold) {
            return bad(format!("ao_keep_threshold {}", self.ao_keep_threshold));
        }
        if !(0.0..=1.0).contains(&self.min_area_fraction) {
            return bad(format!("min_area_fraction {}", self.min_area_fraction));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 / self.resolution as f64
    }
}

/// Exact unsigned distance from every cell center of an `R³` grid over
/// `[-1, 1]³` to the mesh.
pub fn compute_udf(mesh: &TriangleMesh, params: &FieldGenParams) -> Result<ScalarGrid> {
    params.validate()?;
    let accel = DistanceAccelerator::new(mesh)?;
    Ok(compute_udf_with(&accel, params.resolution, f64::INFINITY))
}

/// Width of the band in which [`make_watertight`] needs exact distances:
/// every cell whose value enters an edge interpolation at `tau` lies within
/// `tau + spacing` of the surface.
pub fn exact_band(params: &FieldGenParams) -> f64 {
    params.tau + 2.0 * params.spacing()
}

/// Unsigned distance field over `[-1, 1]³` with values clamped to `band`:
/// exact where the distance is below `band`, equal to `band` elsewhere.
/// Pass `f64::INFINITY` for the exact field.
pub fn compute_udf_with(accel: &DistanceAccelerator, r: usize, band: f64) -> ScalarGrid {
    let spacing = 2.0 / r as f64;
    let origin = Vec3::repeat(-1.0);
    let mesh = accel.mesh();
    let mut values = vec![0.0; r * r * r];
    values.par_chunks_mut(r).enumerate().for_each(|(row, out)| {
        let j = row % r;
        let k = row / r;
        let mut prev: Option<usize> = None;
        for (i, slot) in out.iter_mut().enumerate() {
            let c = origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * spacing;
            // the previous cell's nearest triangle bounds the search
            let hint = prev.map_or(f64::INFINITY, |t| {
                let [a, b, cc] = mesh.corners(t);
                (closest_point_on_triangle(&c, &a, &b, &cc) - c).norm() * (1.0 + 1e-12) + 1e-15
            });
            match accel.nearest_within(&c, hint.min(band)) {
                Some(n) => {
                    *slot = n.distance;
                    prev = Some(n.triangle);
                }
                None => {
                    *slot = band;
                    prev = None;
                }
            }
        }
    });
    ScalarGrid {
        resolution: [r, r, r],
        origin,
        spacing,
        values,
    }
}

/// Cells reachable from the grid boundary through cells with value `> tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMask {
    pub resolution: [usize; 3],
    pub reachable: Vec<bool>,
}

impl VisibilityMask {
    pub fn count(&self) -> usize {
        self.reachable.iter().filter(|&&b| b).count()
    }
}

/// 6-connected flood fill from every boundary cell whose value exceeds `tau`.
pub fn flood_visibility(grid: &ScalarGrid, tau: f64) -> VisibilityMask {
    let [nx, ny, nz] = grid.resolution;
    let mut reachable = vec![false; grid.len()];
    let mut queue = VecDeque::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let on_border = i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1;
                if !on_border {
                    continue;
                }
                let idx = grid.index(i, j, k);
                if grid.values[idx] > tau && !reachable[idx] {
                    reachable[idx] = true;
                    queue.push_back(idx);
                }
            }
        }
    }
    while let Some(idx) = queue.pop_front() {
        let [i, j, k] = grid.coords(idx);
        let mut visit = |ii: usize, jj: usize, kk: usize| {
            let n = grid.index(ii, jj, kk);
            if !reachable[n] && grid.values[n] > tau {
                reachable[n] = true;
                queue.push_back(n);
            }
        };
        if i > 0 {
            visit(i - 1, j, k);
        }
        if i + 1 < nx {
            visit(i + 1, j, k);
        }
        if j > 0 {
            visit(i, j - 1, k);
        }
        if j + 1 < ny {
            visit(i, j + 1, k);
        }
        if k > 0 {
            visit(i, j, k - 1);
        }
        if k + 1 < nz {
            visit(i, j, k + 1);
        }
    }
    VisibilityMask {
        resolution: grid.resolution,
        reachable,
    }
}

/// Fills hidden cells above `tau` with [`HIDDEN_FILL`]. Reachable cells and
/// cells inside the `tau` band are left untouched.
pub fn reset_invisible(grid: &ScalarGrid, mask: &VisibilityMask, tau: f64) -> Result<ScalarGrid> {
    if mask.resolution != grid.resolution || mask.reachable.len() != grid.len() {
        return Err(GeomError::ShapeMismatch(format!(
            "mask {:?} vs grid {:?}",
            mask.resolution, grid.resolution
        )));
    }
    let mut out = grid.clone();
    for (v, &vis) in out.values.iter_mut().zip(&mask.reachable) {
        if !vis && *v > tau {
            *v = HIDDEN_FILL;
        }
    }
    Ok(out)
}

/// Fraction of rays that escape to infinity, cast from stratified sample
/// points on component `component`. Half of each point's rays sample the
/// cosine-weighted hemisphere around the face normal and half the opposite
/// hemisphere, so the estimate does not depend on face winding.
pub fn ambient_occlusion_ratio(
    accel: &DistanceAccelerator,
    labeling: &ComponentLabeling,
    component: usize,
    ao_rays: usize,
) -> Result<f64> {
    if component >= labeling.count() {
        return Err(GeomError::UnknownComponent(component));
    }
    let mesh = accel.mesh();
    let faces = labeling.faces_of(component);
    let mut cumulative = Vec::with_capacity(faces.len());
    let mut total = 0.0;
    for &f in &faces {
        total += mesh.triangle_area(f);
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(AO_SEED ^ component as u64);
    let scale = mesh.aabb().radius().max(1e-12);
    let eps = 1e-9 * scale;
    let per_side = (ao_rays / 2).max(1);
    let mut escaped = 0usize;
    let mut cast = 0usize;
    for s in 0..AO_SAMPLE_POINTS {
        // systematic sampling over the cumulative area
        let target = (s as f64 + rng.random::<f64>()) / AO_SAMPLE_POINTS as f64 * total;
        let slot = cumulative.partition_point(|&c| c < target).min(faces.len() - 1);
        let face = faces[slot];
        let p = sample_triangle(&mesh.corners(face), &mut rng);
        let n = mesh.face_normals()[face];
        if n == Vec3::zeros() {
            continue;
        }
        let (t1, t2) = tangent_frame(&n);
        for side in [1.0, -1.0] {
            let axis = n * side;
            for r in 0..per_side {
                // stratified in the radial coordinate, cosine-weighted
                let u1 = (r as f64 + rng.random::<f64>()) / per_side as f64;
                let u2: f64 = rng.random();
                let rad = u1.sqrt();
                let phi = 2.0 * PI * u2;
                let dir = t1 * (rad * phi.cos()) + t2 * (rad * phi.sin()) + axis * (1.0 - u1).max(0.0).sqrt();
                let origin = p + axis * eps;
                if !accel.any_hit(&origin, &dir, eps, f64::INFINITY, Some(face)) {
                    escaped += 1;
                }
                cast += 1;
            }
        }
    }
    Ok(if cast == 0 { 0.0 } else { escaped as f64 / cast as f64 })
}

fn sample_triangle([a, b, c]: &[Vec3; 3], rng: &mut impl Rng) -> Vec3 {
    let mut u: f64 = rng.random();
    let mut v: f64 = rng.random();
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    a + (b - a) * u + (c - a) * v
}

fn tangent_frame(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Per-component decision made by [`remove_interior_components`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentVerdict {
    pub area_fraction: f64,
    pub ao_ratio: f64,
    pub kept: bool,
}

/// Drops components whose area fraction is below `min_area_fraction` or
/// whose ambient-occlusion ratio is below `ao_keep_threshold`. The largest
/// component always survives.
pub fn remove_interior_components(
    mesh: &TriangleMesh,
    params: &FieldGenParams,
) -> Result<(TriangleMesh, Vec<ComponentVerdict>)> {
    let labeling = connected_components(mesh);
    let accel = DistanceAccelerator::new(mesh)?;
    let total = labeling.total_area();
    let largest = labeling.largest().ok_or(GeomError::EmptyMesh)?;
    let verdicts: Vec<ComponentVerdict> = (0..labeling.count())
        .into_par_iter()
        .map(|c| {
            let area_fraction = labeling.areas[c] / total;
            let ao_ratio = if area_fraction < params.min_area_fraction {
                // skip the rays; it is dropped either way
                0.0
            } else {
                ambient_occlusion_ratio(&accel, &labeling, c, params.ao_rays)?
            };
            let kept = c == largest
                || (area_fraction >= params.min_area_fraction && ao_ratio >= params.ao_keep_threshold);
            Ok(ComponentVerdict {
                area_fraction,
                ao_ratio,
                kept,
            })
        })
        .collect::<Result<_>>()?;
    let keep: Vec<usize> = (0..mesh.triangle_count())
        .filter(|&f| verdicts[labeling.component_of[f]].kept)
        .collect();
    Ok((mesh.subset(&keep)?, verdicts))
}

/// Intermediate products of [`make_watertight`].
#[derive(Debug, Clone)]
pub struct WatertightOutput {
    /// Distance field clamped at [`exact_band`].
    pub udf: ScalarGrid,
    pub visible_cells: usize,
    pub extracted: TriangleMesh,
    pub mesh: TriangleMesh,
    pub components: Vec<ComponentVerdict>,
}

/// Banded UDF → visibility flood → hidden-cell reset → marching cubes at `tau` →
/// interior-component removal. Expects a mesh normalized into `[-1, 1]³`.
pub fn make_watertight(mesh: &TriangleMesh, params: &FieldGenParams) -> Result<WatertightOutput> {
    params.validate()?;
    let accel = DistanceAccelerator::new(mesh)?;
    let udf = compute_udf_with(&accel, params.resolution, exact_band(params));
    let mask = flood_visibility(&udf, params.tau);
    let reset = reset_invisible(&udf, &mask, params.tau)?;
    let extracted = marching_cubes(&reset, params.tau)?;
    let (cleaned, components) = remove_interior_components(&extracted, params)?;
    Ok(WatertightOutput {
        visible_cells: mask.count(),
        udf,
        extracted,
        mesh: cleaned,
        components,
    })
}
