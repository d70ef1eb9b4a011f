//! Orthographic normal-map rendering and the rule-based geometric filters:
//! planar-base detection and multi-object detection on opacity masks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvh::DistanceAccelerator;
use crate::mesh::TriangleMesh;
use crate::{GeomError, Result, Vec3};

/// Orthographic camera looking along `direction`. Pixels cover the square
/// `[-half_extent, half_extent]²` of the view plane; row 0 is the top.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoCamera {
    pub direction: Vec3,
    pub up: Vec3,
    pub half_extent: f64,
    pub resolution: usize,
}

impl OrthoCamera {
    pub fn new(direction: Vec3, up: Vec3, half_extent: f64, resolution: usize) -> Result<Self> {
        if resolution < 32 {
            return Err(GeomError::InvalidParameter(format!("resolution {resolution} < 32")));
        }
        if !(half_extent > 0.0 && half_extent.is_finite()) {
            return Err(GeomError::InvalidParameter(format!("half_extent {half_extent}")));
        }
        let d = direction.try_normalize(1e-12).ok_or(GeomError::NonUnitNormal)?;
        let up = (up - d * up.dot(&d))
            .try_normalize(1e-9)
            .ok_or_else(|| GeomError::InvalidParameter("up is parallel to the view direction".into()))?;
        Ok(Self {
            direction: d,
            up,
            half_extent,
            resolution,
        })
    }

    /// Camera on a sphere around the origin with +z up, looking at the origin.
    pub fn orbit(azimuth_deg: f64, elevation_deg: f64, resolution: usize) -> Result<Self> {
        let (a, e) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let eye = Vec3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin());
        Self::new(-eye, Vec3::z(), DEFAULT_HALF_EXTENT, resolution)
    }

    pub fn right(&self) -> Vec3 {
        self.direction.cross(&self.up)
    }

    /// Ray origin for pixel `(x, y)`, placed behind the unit cube.
    pub fn pixel_origin(&self, x: usize, y: usize) -> Vec3 {
        let step = 2.0 * self.half_extent / self.resolution as f64;
        let u = -self.half_extent + (x as f64 + 0.5) * step;
        let v = self.half_extent - (y as f64 + 0.5) * step;
        self.right() * u + self.up * v - self.direction * 10.0
    }
}

/// Half-width of the default view window. Slightly wider than the unit
/// cube so that tilted views of a normalized mesh are never clipped.
pub const DEFAULT_HALF_EXTENT: f64 = 1.25;

/// Azimuths of the four canonical views, in degrees.
pub const CANONICAL_AZIMUTHS: [f64; 4] = [0.0, 90.0, 180.0, 270.0];
pub const CANONICAL_ELEVATION: f64 = 15.0;

pub fn canonical_views(resolution: usize) -> Result<Vec<OrthoCamera>> {
    CANONICAL_AZIMUTHS
        .iter()
        .map(|&a| OrthoCamera::orbit(a, CANONICAL_ELEVATION, resolution))
        .collect()
}

/// Binary image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub resolution: usize,
    /// World-space face normal of the nearest hit, `None` where transparent.
    pub normals: Vec<Option<Vec3>>,
}

impl RenderOutput {
    pub fn mask(&self) -> Mask {
        Mask {
            width: self.resolution,
            height: self.resolution,
            data: self.normals.iter().map(Option::is_some).collect(),
        }
    }

    pub fn normal_at(&self, x: usize, y: usize) -> Option<Vec3> {
        self.normals[y * self.resolution + x]
    }

    /// 8-bit RGB with `n·0.5 + 0.5` per channel; transparent pixels are black.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.normals.len() * 3);
        for n in &self.normals {
            match n {
                Some(n) => out.extend(n.iter().map(|c| ((c * 0.5 + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8)),
                None => out.extend([0, 0, 0]),
            }
        }
        out
    }

    /// Raw little-endian f32 triples (NaN where transparent).
    pub fn to_f32_le(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.normals.len() * 12);
        for n in &self.normals {
            let v = n.unwrap_or(Vec3::repeat(f64::NAN));
            for c in v.iter() {
                out.extend((*c as f32).to_le_bytes());
            }
        }
        out
    }
}

pub fn render_normal_mask(mesh: &TriangleMesh, camera: &OrthoCamera) -> RenderOutput {
    let r = camera.resolution;
    let Ok(accel) = DistanceAccelerator::new(mesh) else {
        return RenderOutput {
            resolution: r,
            normals: vec![None; r * r],
        };
    };
    render_with(&accel, camera)
}

pub fn render_with(accel: &DistanceAccelerator, camera: &OrthoCamera) -> RenderOutput {
    let r = camera.resolution;
    let normals = (0..r * r)
        .into_par_iter()
        .map(|idx| {
            let o = camera.pixel_origin(idx % r, idx / r);
            accel
                .first_hit(&o, &camera.direction, 0.0, f64::INFINITY)
                .map(|h| accel.mesh().face_normals()[h.triangle])
                .filter(|n| *n != Vec3::zeros())
        })
        .collect();
    RenderOutput { resolution: r, normals }
}

/// 8-connected components as lists of pixel indices, largest first. Equal
/// sizes keep scan order of their first pixel.
pub fn mask_components(mask: &Mask) -> Vec<Vec<usize>> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; mask.data.len()];
    let mut comps = Vec::new();
    for start in 0..mask.data.len() {
        if !mask.data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut pixels = Vec::new();
        while let Some(p) = stack.pop() {
            pixels.push(p);
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask.data[q] && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        pixels.sort_unstable();
        comps.push(pixels);
    }
    comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    comps
}

/// Pixel count divided by the area of the convex hull of the pixel squares.
pub fn solidity(pixels: &[(usize, usize)]) -> Result<f64> {
    if pixels.is_empty() {
        return Err(GeomError::EmptyMask);
    }
    let mut pts: Vec<(i64, i64)> = Vec::with_capacity(pixels.len() * 4);
    for &(x, y) in pixels {
        let (x, y) = (x as i64, y as i64);
        pts.extend([(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)]);
    }
    let hull = convex_hull(pts);
    let twice_area: i64 = (0..hull.len())
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    Ok((pixels.len() as f64 / (twice_area.abs() as f64 / 2.0)).min(1.0))
}

fn convex_hull(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(i64, i64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn pixel_coords(mask: &Mask, idx: &[usize]) -> Vec<(usize, usize)> {
    idx.iter().map(|&p| (p % mask.width, p / mask.width)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterThresholds {
    pub component_ratio: f64,
    pub solidity_gap: f64,
    pub planar_fraction: f64,
    pub planar_angle_deg: f64,
    pub resolution: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            component_ratio: 0.95,
            solidity_gap: 0.25,
            planar_fraction: 0.15,
            planar_angle_deg: 3.0,
            resolution: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarBaseReport {
    pub detected: bool,
    pub plane_area_fraction: f64,
    pub plane_normal: Option<[f64; 3]>,
    /// Height of the detected plane along the up axis.
    pub plane_offset: Option<f64>,
}

/// Offsets closer than this (in normalized units) belong to the same plane.
pub const PLANE_OFFSET_TOLERANCE: f64 = 1e-3;

/// Largest cluster of coplanar downward-facing triangles (normal within
/// `angle_tol_deg` of −z), grouped by their height.
pub fn detect_planar_base(mesh: &TriangleMesh, angle_tol_deg: f64, fraction_threshold: f64) -> PlanarBaseReport {
    let mut areas: Vec<f64> = (0..mesh.triangle_count()).map(|t| mesh.triangle_area(t)).collect();
    areas.sort_by(f64::total_cmp);
    let total: f64 = areas.iter().sum();
    let cos_tol = angle_tol_deg.to_radians().cos();
    let mut cands: Vec<(f64, Vec3, f64, Vec3)> = (0..mesh.triangle_count())
        .filter_map(|t| {
            let n = mesh.face_normals()[t];
            let area = mesh.triangle_area(t);
            (area > 0.0 && -n.z >= cos_tol).then(|| {
                let c = mesh.triangle_centroid(t);
                (c.z, c, area, n)
            })
        })
        .collect();
    // sort on geometry alone so triangle order cannot matter
    cands.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.x.total_cmp(&b.1.x))
            .then(a.1.y.total_cmp(&b.1.y))
            .then(a.2.total_cmp(&b.2))
    });
    let mut best: Option<(f64, Vec3, f64)> = None;
    let mut i = 0;
    while i < cands.len() {
        let mut j = i;
        let mut area = 0.0;
        let mut normal = Vec3::zeros();
        let mut offset = 0.0;
        while j < cands.len() && (j == i || cands[j].0 - cands[j - 1].0 <= PLANE_OFFSET_TOLERANCE) {
            area += cands[j].2;
            normal += cands[j].3 * cands[j].2;
            offset += cands[j].0 * cands[j].2;
            j += 1;
        }
        if best.is_none_or(|b| area > b.0) {
            best = Some((area, normal, offset / area));
        }
        i = j;
    }
    match best {
        Some((area, normal, offset)) if total > 0.0 => {
            let fraction = area / total;
            let n = normal.normalize();
            PlanarBaseReport {
                detected: fraction >= fraction_threshold,
                plane_area_fraction: fraction,
                plane_normal: Some([n.x, n.y, n.z]),
                plane_offset: Some(offset),
            }
        }
        _ => PlanarBaseReport {
            detected: false,
            plane_area_fraction: 0.0,
            plane_normal: None,
            plane_offset: None,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiObjectReport {
    /// Smallest largest-component ratio over the views.
    pub largest_component_ratio: f64,
    /// Solidities from the view with the widest gap.
    pub largest_solidity: f64,
    pub full_solidity: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    PlanarBase,
    MultiObject,
    SolidityGap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Reject { reasons: Vec<RejectReason> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub planar_base: PlanarBaseReport,
    pub multi_object: MultiObjectReport,
    pub decision: Decision,
}

impl FilterReport {
    pub fn keep(&self) -> bool {
        self.decision == Decision::Keep
    }
}

/// Per-view mask statistics: (largest component ratio, largest-component
/// solidity, full-mask solidity). `None` for an empty mask.
pub fn mask_statistics(mask: &Mask) -> Option<(f64, f64, f64)> {
    let comps = mask_components(mask);
    let total: usize = comps.iter().map(Vec::len).sum();
    if total == 0 {
        return None;
    }
    let largest = &comps[0];
    let all: Vec<usize> = comps.iter().flatten().copied().collect();
    let ls = solidity(&pixel_coords(mask, largest)).ok()?;
    let fs = solidity(&pixel_coords(mask, &all)).ok()?;
    Some((largest.len() as f64 / total as f64, ls, fs))
}

pub fn filter_decision(mesh: &TriangleMesh, cameras: &[OrthoCamera], th: &FilterThresholds) -> FilterReport {
    let planar_base = detect_planar_base(mesh, th.planar_angle_deg, th.planar_fraction);
    let accel = DistanceAccelerator::new(mesh).ok();
    let mut ratio = 1.0f64;
    let mut gap_view: Option<(f64, f64)> = None;
    for cam in cameras {
        let Some(accel) = &accel else { break };
        let mask = render_with(accel, cam).mask();
        let Some((r, ls, fs)) = mask_statistics(&mask) else { continue };
        ratio = ratio.min(r);
        if gap_view.is_none_or(|(a, b)| ls - fs > a - b) {
            gap_view = Some((ls, fs));
        }
    }
    let (largest_solidity, full_solidity) = gap_view.unwrap_or((1.0, 1.0));
    let mut reasons = Vec::new();
    if planar_base.detected {
        reasons.push(RejectReason::PlanarBase);
    }
    let ratio_flag = ratio < th.component_ratio;
    let gap_flag = largest_solidity - full_solidity > th.solidity_gap;
    if ratio_flag {
        reasons.push(RejectReason::MultiObject);
    }
    if gap_flag {
        reasons.push(RejectReason::SolidityGap);
    }
    FilterReport {
        planar_base,
        multi_object: MultiObjectReport {
            largest_component_ratio: ratio,
            largest_solidity,
            full_solidity,
            flagged: ratio_flag || gap_flag,
        },
        decision: if reasons.is_empty() {
            Decision::Keep
        } else {
            Decision::Reject { reasons }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    fn disk(r: f64, cx: f64, cy: f64) -> impl Fn(usize, usize) -> bool {
        move |x, y| {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            dx * dx + dy * dy <= r * r
        }
    }

    #[test]
    fn camera_validation() {
        assert!(OrthoCamera::new(Vec3::z(), Vec3::z(), 1.0, 64).is_err());
        assert!(OrthoCamera::new(Vec3::x(), Vec3::z(), 1.0, 16).is_err());
        let c = OrthoCamera::new(Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.3, 0.0, 1.0), 1.0, 64).unwrap();
        assert!(c.up.dot(&c.direction).abs() < 1e-15);
        assert!((c.direction.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sphere_center_faces_camera() {
        let s = shapes::icosphere(0.5, 6);
        // odd resolution puts a pixel center on the optical axis
        for cam in canonical_views(65).unwrap() {
            let out = render_normal_mask(&s, &cam);
            let n = out.normal_at(32, 32).unwrap();
            assert!((n + cam.direction).norm() < 0.02, "{n:?}");
            for (n, o) in out.normals.iter().zip(&out.mask().data) {
                assert_eq!(n.is_some(), *o);
                if let Some(n) = n {
                    assert!((n.norm() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty_scene_is_transparent() {
        let empty = TriangleMesh::new(vec![], vec![]).unwrap();
        let cam = OrthoCamera::orbit(0.0, 0.0, 32).unwrap();
        assert_eq!(render_normal_mask(&empty, &cam).mask().count(), 0);
    }

    #[test]
    fn square_facing_camera_has_one_normal() {
        let sq = shapes::square(1.0, 4);
        let cam = OrthoCamera::new(-Vec3::z(), Vec3::y(), 1.0, 64).unwrap();
        let out = render_normal_mask(&sq, &cam);
        let hits: Vec<Vec3> = out.normals.iter().flatten().copied().collect();
        assert!(!hits.is_empty());
        assert!(hits.iter().all(|n| *n == Vec3::z()));
        // square of side 1 in a 2-wide window: a quarter of the pixels
        assert_eq!(hits.len(), 32 * 32);
    }

    #[test]
    fn rotation_consistency() {
        let m = shapes::two_spheres(0.3, 0.2);
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -0.2, 0.9);
        let rotated = m.map_vertices(|v| rot * v).unwrap();
        let cam = OrthoCamera::new(Vec3::new(0.2, 1.0, -0.3), Vec3::z(), 1.0, 64).unwrap();
        let cam_r = OrthoCamera::new(rot * cam.direction, rot * cam.up, 1.0, 64).unwrap();
        let a = render_normal_mask(&m, &cam);
        let b = render_normal_mask(&rotated, &cam_r);
        // pixels grazing a silhouette may flip on rounding
        let diff = a.mask().data.iter().zip(&b.mask().data).filter(|(x, y)| x != y).count();
        assert!(diff <= 4, "{diff}");
        let off = a
            .normals
            .iter()
            .zip(&b.normals)
            .filter(|(na, nb)| matches!((na, nb), (Some(na), Some(nb)) if (rot * *na - *nb).norm() > 1e-6))
            .count();
        assert!(off <= 4, "{off}");
    }

    #[test]
    fn components_examples() {
        let two = Mask::from_fn(256, 256, |x, y| disk(40.0, 70.0, 128.0)(x, y) || disk(40.0, 186.0, 128.0)(x, y));
        let comps = mask_components(&two);
        assert_eq!(comps.len(), 2);
        let ratio = comps[0].len() as f64 / two.count() as f64;
        assert!((ratio - 0.5).abs() < 0.01);

        let full = Mask::from_fn(64, 64, |_, _| true);
        assert_eq!(mask_components(&full).len(), 1);
        assert!(mask_components(&Mask::from_fn(8, 8, |_, _| false)).is_empty());

        // diagonal neighbours join under 8-connectivity
        let diag = Mask::from_fn(8, 8, |x, y| x == y);
        assert_eq!(mask_components(&diag).len(), 1);
    }

    #[test]
    fn solidity_examples() {
        let d = Mask::from_fn(256, 256, disk(100.0, 128.0, 128.0));
        let px: Vec<(usize, usize)> = (0..d.data.len()).filter(|&i| d.data[i]).map(|i| (i % 256, i / 256)).collect();
        let s = solidity(&px).unwrap();
        assert!(s >= 0.97 && s <= 1.0, "{s}");

        let blobs: Vec<(usize, usize)> = [(0, 0), (1, 0), (0, 1), (1, 1), (200, 200), (201, 200), (200, 201), (201, 201)].to_vec();
        assert!(solidity(&blobs).unwrap() < 0.01);
        assert_eq!(solidity(&[(5, 7)]).unwrap(), 1.0);
        assert!(matches!(solidity(&[]), Err(GeomError::EmptyMask)));
        // a straight row of pixels is its own hull
        let row: Vec<(usize, usize)> = (0..10).map(|x| (x, 3)).collect();
        assert_eq!(solidity(&row).unwrap(), 1.0);
    }

    #[test]
    fn planar_base_examples() {
        let ped = shapes::sphere_on_pedestal(0.4, 0.3);
        let r = detect_planar_base(&ped, 3.0, 0.15);
        assert!(r.detected);
        assert!((r.plane_area_fraction - 0.3).abs() < 0.01, "{}", r.plane_area_fraction);
        let n = r.plane_normal.unwrap();
        assert!((n[2] + 1.0).abs() < 1e-9);

        let s = shapes::icosphere(0.5, 4);
        let r = detect_planar_base(&s, 3.0, 0.15);
        assert!(!r.detected && r.plane_area_fraction < 0.02);

        let sq = shapes::square(1.0, 3);
        let plate = TriangleMesh::merge(&[sq.clone(), sq.flipped()]).unwrap();
        let r = detect_planar_base(&plate, 3.0, 0.15);
        assert!(r.detected);
        assert!((r.plane_area_fraction - 0.5).abs() < 1e-12);
    }

    #[test]
    fn filter_decisions() {
        let th = FilterThresholds {
            resolution: 128,
            ..Default::default()
        };
        let views = canonical_views(th.resolution).unwrap();
        let norm = |m: TriangleMesh| m.normalize_to_unit_cube(0.05).unwrap();

        let two = filter_decision(&norm(shapes::two_spheres(0.4, 0.3)), &views, &th);
        assert!(matches!(&two.decision, Decision::Reject { reasons } if reasons.contains(&RejectReason::MultiObject)));
        assert!((two.multi_object.largest_component_ratio - 0.5).abs() < 0.02);

        let one = filter_decision(&norm(shapes::icosphere(0.5, 3)), &views, &th);
        assert_eq!(one.decision, Decision::Keep);
        assert_eq!(one.multi_object.largest_component_ratio, 1.0);

        let ped = filter_decision(&norm(shapes::sphere_on_pedestal(0.4, 0.3)), &views, &th);
        assert!(matches!(&ped.decision, Decision::Reject { reasons } if reasons == &vec![RejectReason::PlanarBase]));
    }

    #[test]
    fn filter_ignores_triangle_order() {
        let th = FilterThresholds {
            resolution: 64,
            ..Default::default()
        };
        let views = canonical_views(th.resolution).unwrap();
        for m in [shapes::two_spheres(0.4, 0.3), shapes::sphere_on_pedestal(0.4, 0.3)] {
            let m = m.normalize_to_unit_cube(0.05).unwrap();
            let n = m.triangle_count();
            let order: Vec<usize> = (0..n).map(|i| (i * 7919) % n).collect();
            assert_eq!(order.iter().collect::<std::collections::HashSet<_>>().len(), n);
            let a = filter_decision(&m, &views, &th);
            let b = filter_decision(&m.reordered(&order).unwrap(), &views, &th);
            assert_eq!(a.decision, b.decision);
            assert_eq!(a.multi_object, b.multi_object);
            assert_eq!(a.planar_base.plane_area_fraction, b.planar_base.plane_area_fraction);
        }
    }
}
