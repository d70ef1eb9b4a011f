//! Indexed triangle meshes, bounding boxes and basic cleanup.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{GeomError, Result, Vec3};

/// Margin passed to [`TriangleMesh::normalize_to_unit_cube`] by the pipeline.
pub const NORMALIZE_MARGIN: f64 = 0.05;
/// Welding tolerance for duplicate vertices.
pub const WELD_TOLERANCE: f64 = 1e-9;
/// Triangles with area at or below this are treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    /// An inverted box that any `grow` call replaces.
    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    /// Half of the diagonal length.
    pub fn radius(&self) -> f64 {
        self.extent().norm() * 0.5
    }

    /// Squared distance from `p` to the box (zero inside).
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d2 += v * v;
        }
        d2
    }

    /// Slab test. Returns the entry parameter if the ray hits within `[0, t_max]`.
    pub fn ray_entry(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for i in 0..3 {
            let mut a = (self.min[i] - origin[i]) * inv_dir[i];
            let mut b = (self.max[i] - origin[i]) * inv_dir[i];
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            // NaN from 0 * inf means the ray lies in the slab plane; treat as inside.
            if a.is_nan() || b.is_nan() {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

/// Indexed triangle mesh with per-face unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    face_normals: Vec<Vec3>,
}

impl TriangleMesh {
    /// Builds a mesh without welding or dropping anything. Indices are
    /// validated; zero-area faces get a zero normal.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v as usize >= n) {
                return Err(GeomError::IndexOutOfRange {
                    triangle: i,
                    vertex_count: n,
                });
            }
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeomError::Parse("non-finite vertex coordinate".into()));
        }
        let face_normals = triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| vertices[i as usize]);
                let n = (b - a).cross(&(c - a));
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vec3::zeros()
                }
            })
            .collect();
        Ok(Self {
            vertices,
            triangles,
            face_normals,
        })
    }

    /// Builds a mesh and then welds duplicate vertices and drops degenerate faces.
    pub fn new_cleaned(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        Self::new(vertices, triangles)?.cleaned()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn face_normals(&self) -> &[Vec3] {
        &self.face_normals
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, tri: usize) -> [Vec3; 3] {
        self.triangles[tri].map(|i| self.vertices[i as usize])
    }

    pub fn triangle_area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.corners(tri);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn triangle_centroid(&self, tri: usize) -> Vec3 {
        let [a, b, c] = self.corners(tri);
        (a + b + c) / 3.0
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangle_count()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    /// Mean edge length over all triangle edges.
    pub fn mean_edge_length(&self) -> f64 {
        if self.triangles.is_empty() {
            return 0.0;
        }
        let mut sum = 0.0;
        for t in 0..self.triangle_count() {
            let [a, b, c] = self.corners(t);
            sum += (b - a).norm() + (c - b).norm() + (a - c).norm();
        }
        sum / (3 * self.triangle_count()) as f64
    }

    /// Welds vertices closer than [`WELD_TOLERANCE`], drops degenerate and
    /// collapsed triangles, and removes unreferenced vertices. Vertex order
    /// follows first use.
    pub fn cleaned(&self) -> Result<Self> {
        let remap = weld_vertices(&self.vertices, WELD_TOLERANCE);
        let mut tris = Vec::with_capacity(self.triangles.len());
        for t in &self.triangles {
            let m = t.map(|i| remap[i as usize]);
            if m[0] == m[1] || m[1] == m[2] || m[0] == m[2] {
                continue;
            }
            let [a, b, c] = m.map(|i| self.vertices[i as usize]);
            if 0.5 * (b - a).cross(&(c - a)).norm() <= DEGENERATE_AREA {
                continue;
            }
            tris.push(m);
        }
        if tris.is_empty() {
            return Err(GeomError::EmptyMesh);
        }
        let mut new_index = vec![u32::MAX; self.vertices.len()];
        let mut verts = Vec::new();
        for t in tris.iter_mut() {
            for v in t.iter_mut() {
                let slot = &mut new_index[*v as usize];
                if *slot == u32::MAX {
                    *slot = verts.len() as u32;
                    verts.push(self.vertices[*v as usize]);
                }
                *v = *slot;
            }
        }
        Self::new(verts, tris)
    }

    /// Applies `x -> scale * x + offset` to every vertex.
    pub fn transformed(&self, scale: f64, offset: &Vec3) -> Result<Self> {
        let verts = self.vertices.iter().map(|v| v * scale + offset).collect();
        Self::new(verts, self.triangles.clone())
    }

    /// Applies an arbitrary vertex map (e.g. a rotation).
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<Self> {
        Self::new(self.vertices.iter().map(f).collect(), self.triangles.clone())
    }

    /// Reverses the winding of every face.
    pub fn flipped(&self) -> Self {
        let tris = self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect();
        Self::new(self.vertices.clone(), tris).expect("indices unchanged")
    }

    /// Same faces in a different order: face `i` of the result is face `order[i]`.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        let tris = order.iter().map(|&i| self.triangles[i]).collect();
        Self::new(self.vertices.clone(), tris)
    }

    /// Concatenates meshes without welding.
    pub fn merge(parts: &[TriangleMesh]) -> Result<Self> {
        let mut verts = Vec::new();
        let mut tris = Vec::new();
        for p in parts {
            let base = verts.len() as u32;
            verts.extend_from_slice(&p.vertices);
            tris.extend(p.triangles.iter().map(|t| t.map(|i| i + base)));
        }
        Self::new(verts, tris)
    }

    /// Keeps only the listed triangles; unreferenced vertices are dropped.
    pub fn subset(&self, keep: &[usize]) -> Result<Self> {
        let mut new_index = vec![u32::MAX; self.vertices.len()];
        let mut verts = Vec::new();
        let mut tris = Vec::with_capacity(keep.len());
        for &k in keep {
            let t = self.triangles[k].map(|v| {
                let slot = &mut new_index[v as usize];
                if *slot == u32::MAX {
                    *slot = verts.len() as u32;
                    verts.push(self.vertices[v as usize]);
                }
                *slot
            });
            tris.push(t);
        }
        Self::new(verts, tris)
    }

    /// Number of faces incident to each undirected edge.
    pub fn edge_incidence(&self) -> HashMap<(u32, u32), u32> {
        let mut map = HashMap::with_capacity(self.triangles.len() * 3 / 2);
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *map.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        map
    }

    /// Every undirected edge is shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_incidence().values().all(|&c| c == 2)
    }

    /// Every directed edge occurs at most once, i.e. neighbouring faces agree on winding.
    pub fn is_consistently_oriented(&self) -> bool {
        let mut seen = std::collections::HashSet::with_capacity(self.triangles.len() * 3);
        self.triangles.iter().all(|t| (0..3).all(|k| seen.insert((t[k], t[(k + 1) % 3]))))
    }

    /// Signed enclosed volume (divergence theorem); positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangle_count())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Centers the mesh at the origin and scales it uniformly so that its
    /// longest bounding-box side equals `2 * (1 - margin)`.
    pub fn normalize_to_unit_cube(&self, margin: f64) -> Result<Self> {
        if self.is_empty() {
            return Err(GeomError::EmptyMesh);
        }
        if !(0.0..1.0).contains(&margin) {
            return Err(GeomError::InvalidParameter(format!("margin {margin} outside [0,1)")));
        }
        let bb = self.aabb();
        let longest = bb.extent().max();
        if longest <= 0.0 {
            return Err(GeomError::EmptyMesh);
        }
        let scale = 2.0 * (1.0 - margin) / longest;
        let center = bb.center();
        let verts = self.vertices.iter().map(|v| (v - center) * scale).collect();
        Self::new(verts, self.triangles.clone())
    }
}

/// Maps every vertex to the index of its first coincident vertex.
fn weld_vertices(vertices: &[Vec3], tol: f64) -> Vec<u32> {
    let key = |p: &Vec3| -> [i64; 3] { [0, 1, 2].map(|i| (p[i] / tol).floor() as i64) };
    let mut buckets: HashMap<[i64; 3], Vec<u32>> = HashMap::with_capacity(vertices.len());
    let mut remap = Vec::with_capacity(vertices.len());
    let tol2 = tol * tol;
    for (i, p) in vertices.iter().enumerate() {
        let k = key(p);
        let mut found = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &j in list {
                            if (vertices[j as usize] - p).norm_squared() <= tol2 {
                                found = Some(j);
                                break 'search;
                            }
                        }
                    }
                }
            }
        }
        match found {
            Some(j) => remap.push(j),
            None => {
                buckets.entry(k).or_default().push(i as u32);
                remap.push(i as u32);
            }
        }
    }
    remap
}
