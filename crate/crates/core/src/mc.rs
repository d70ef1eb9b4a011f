//! Marching cubes over the dual grid of cell centers.
//!
//! The 256-entry case table is derived at first use from the cube's face
//! configurations instead of being transcribed: each face contributes the
//! segments separating its above-iso corners from its below-iso corners
//! (ambiguous faces always isolate the below-iso corners), the segments are
//! chained into loops and every loop is triangulated. Face decisions
//! depend only on the four corners of that face, so adjacent cubes always
//! agree and the surface is crack-free.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::grid::ScalarGrid;
use crate::mesh::TriangleMesh;
use crate::{GeomError, Result, Vec3};

/// Corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
fn corner_pos(c: usize) -> Vec3 {
    Vec3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64)
}

/// The 12 cube edges as `(lower corner, axis)`; the upper corner is
/// `lower | (1 << axis)`.
const EDGES: [(usize, usize); 12] = [
    (0, 0),
    (2, 0),
    (4, 0),
    (6, 0),
    (0, 1),
    (1, 1),
    (4, 1),
    (5, 1),
    (0, 2),
    (1, 2),
    (2, 2),
    (3, 2),
];

fn edge_index(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    let axis = (hi ^ lo).trailing_zeros() as usize;
    EDGES
        .iter()
        .position(|&(c, ax)| c == lo && ax == axis)
        .expect("corners share an edge")
}

fn edge_mid(e: usize) -> Vec3 {
    let (c, axis) = EDGES[e];
    let mut p = corner_pos(c);
    p[axis] += 0.5;
    p
}

/// Oriented edge loops for each of the 256 corner configurations. Bit `c` of
/// the configuration is set when corner `c` is above the iso value.
pub fn case_table() -> &'static [Vec<Vec<u8>>; 256] {
    static TABLE: OnceLock<[Vec<Vec<u8>>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(|cfg| case_loops(cfg as u8)))
}

/// Vertex slot inside a cube: a cube edge, or the centroid of loop `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Edge(u8),
    Center(u8),
}

fn share_face(a: usize, b: usize) -> bool {
    let (ca, aa) = EDGES[a];
    let (cb, ab) = EDGES[b];
    (0..3).any(|f| f != aa && f != ab && (ca >> f) & 1 == (cb >> f) & 1)
}

/// Triangulates one loop. A fan is used when some apex has no diagonal lying
/// on a cube face (a neighbouring cube could emit the same diagonal);
/// otherwise the loop is fanned around its centroid.
pub fn triangulate_loop(lp: &[u8], loop_id: u8) -> Vec<[Slot; 3]> {
    let n = lp.len();
    let e = |i: usize| Slot::Edge(lp[i % n]);
    let apex = (0..n).find(|&a| (2..n - 1).all(|k| !share_face(lp[a] as usize, lp[(a + k) % n] as usize)));
    match apex {
        Some(a) => (1..n - 1).map(|k| [e(a), e(a + k), e(a + k + 1)]).collect(),
        None => (0..n).map(|k| [Slot::Center(loop_id), e(k), e(k + 1)]).collect(),
    }
}

/// Triangles as slot triples for configuration `cfg`.
pub fn case_triangles(cfg: u8) -> Vec<[Slot; 3]> {
    case_table()[cfg as usize]
        .iter()
        .enumerate()
        .flat_map(|(i, lp)| triangulate_loop(lp, i as u8))
        .collect()
}

fn case_loops(cfg: u8) -> Vec<Vec<u8>> {
    let above = |c: usize| cfg & (1 << c) != 0;
    // directed segments: next[e_from] = e_to
    let mut next: [Option<usize>; 12] = [None; 12];
    for axis in 0..3 {
        for side in 0..2 {
            let u = (axis + 1) % 3;
            let v = (axis + 2) % 3;
            let bit = |a: usize, s: usize| s << a;
            let base = bit(axis, side);
            // cyclic corner order on this face
            let ring = [
                base,
                base | bit(u, 1),
                base | bit(u, 1) | bit(v, 1),
                base | bit(v, 1),
            ];
            let mut normal = Vec3::zeros();
            normal[axis] = if side == 0 { -1.0 } else { 1.0 };
            let crossed: Vec<usize> = (0..4)
                .filter(|&i| above(ring[i]) != above(ring[(i + 1) % 4]))
                .collect();
            let mut segments: Vec<(usize, usize, Vec3)> = Vec::new();
            match crossed.len() {
                0 => {}
                2 => {
                    let e1 = edge_index(ring[crossed[0]], ring[(crossed[0] + 1) % 4]);
                    let e2 = edge_index(ring[crossed[1]], ring[(crossed[1] + 1) % 4]);
                    let ups: Vec<Vec3> = ring.iter().filter(|&&c| above(c)).map(|&c| corner_pos(c)).collect();
                    let centroid = ups.iter().sum::<Vec3>() / ups.len() as f64;
                    let mid = (edge_mid(e1) + edge_mid(e2)) * 0.5;
                    segments.push((e1, e2, centroid - mid));
                }
                4 => {
                    for i in 0..4 {
                        let c = ring[i];
                        if above(c) {
                            continue;
                        }
                        let prev = ring[(i + 3) % 4];
                        let nxt = ring[(i + 1) % 4];
                        let e1 = edge_index(prev, c);
                        let e2 = edge_index(c, nxt);
                        let mid = (edge_mid(e1) + edge_mid(e2)) * 0.5;
                        segments.push((e1, e2, mid - corner_pos(c)));
                    }
                }
                _ => unreachable!("a face ring has an even number of sign changes"),
            }
            for (e1, e2, toward_above) in segments {
                // the loop runs along `toward_above × outward_normal`
                let dir = toward_above.cross(&normal);
                let (from, to) = if (edge_mid(e2) - edge_mid(e1)).dot(&dir) > 0.0 {
                    (e1, e2)
                } else {
                    (e2, e1)
                };
                assert!(next[from].is_none(), "inconsistent loop orientation in case {cfg}");
                next[from] = Some(to);
            }
        }
    }
    let mut loops = Vec::new();
    let mut used = [false; 12];
    for start in 0..12 {
        if used[start] || next[start].is_none() {
            continue;
        }
        let mut cycle = vec![start as u8];
        used[start] = true;
        let mut e = next[start].expect("checked");
        while e != start {
            assert!(!used[e], "segment graph is not a union of loops in case {cfg}");
            used[e] = true;
            cycle.push(e as u8);
            e = next[e].expect("every crossed edge continues the loop");
        }
        loops.push(cycle);
    }
    loops
}

/// Extracts the level set `{field = iso}`. Corners with value `> iso` are
/// "above"; triangle normals point toward increasing field values. Vertices
/// are shared between cubes through their grid edge.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64) -> Result<TriangleMesh> {
    let [nx, ny, nz] = grid.resolution;
    if nx < 2 || ny < 2 || nz < 2 {
        return Err(GeomError::EmptySurface);
    }
    let table = case_table();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut cfg = 0u8;
                let mut vals = [0.0; 8];
                for (c, val) in vals.iter_mut().enumerate() {
                    *val = grid.get(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                    if *val > iso {
                        cfg |= 1 << c;
                    }
                }
                if cfg == 0 || cfg == 0xFF {
                    continue;
                }
                let mut edge_id = |e: usize, vertices: &mut Vec<Vec3>| {
                    let (c, axis) = EDGES[e];
                    let ci = [i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)];
                    let key = (grid.index(ci[0], ci[1], ci[2]), axis);
                    *edge_vertex.entry(key).or_insert_with(|| {
                        let v0 = vals[c];
                        let v1 = vals[c | (1 << axis)];
                        let t = (iso - v0) / (v1 - v0);
                        let mut p = grid.cell_center(ci[0], ci[1], ci[2]);
                        p[axis] += t * grid.spacing;
                        vertices.push(p);
                        (vertices.len() - 1) as u32
                    })
                };
                for (loop_id, lp) in table[cfg as usize].iter().enumerate() {
                    let ids: Vec<u32> = lp.iter().map(|&e| edge_id(e as usize, &mut vertices)).collect();
                    let mut center = None;
                    for tri in triangulate_loop(lp, loop_id as u8) {
                        let t = tri.map(|s| match s {
                            Slot::Edge(e) => ids[lp.iter().position(|&x| x == e).expect("loop edge")],
                            Slot::Center(_) => *center.get_or_insert_with(|| {
                                let c = ids.iter().map(|&v| vertices[v as usize]).sum::<Vec3>() / ids.len() as f64;
                                vertices.push(c);
                                (vertices.len() - 1) as u32
                            }),
                        });
                        triangles.push(t);
                    }
                }
            }
        }
    }
    if triangles.is_empty() {
        return Err(GeomError::EmptySurface);
    }
    TriangleMesh::new(vertices, triangles)
}
