//! Procedural meshes used as fixtures and test subjects.

use std::collections::HashMap;

use crate::mesh::TriangleMesh;
use crate::Vec3;

/// Subdivided icosahedron projected onto a sphere centered at the origin.
/// `subdivisions` levels give `20 * 4^subdivisions` faces, wound outward.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriangleMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut tris: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    let verts = verts.into_iter().map(|v| v * radius).collect();
    TriangleMesh::new(verts, tris).expect("valid icosphere")
}

/// Axis-aligned cube `[-half, half]^3`, 12 faces, wound outward.
pub fn cube(half: f64) -> TriangleMesh {
    cuboid(Vec3::repeat(2.0 * half))
}

/// Axis-aligned box with the given side lengths, centered at the origin.
pub fn cuboid(size: Vec3) -> TriangleMesh {
    box_with_faces(size, [true; 6])
}

/// Box with one or more faces omitted, in the order -x, +x, -y, +y, -z, +z.
pub fn box_with_faces(size: Vec3, faces: [bool; 6]) -> TriangleMesh {
    let h = size * 0.5;
    let mut verts = Vec::with_capacity(8);
    for i in 0..8u32 {
        verts.push(Vec3::new(
            if i & 1 == 0 { -h.x } else { h.x },
            if i & 2 == 0 { -h.y } else { h.y },
            if i & 4 == 0 { -h.z } else { h.z },
        ));
    }
    // quads listed counter-clockwise seen from outside
    let quads: [[u32; 4]; 6] = [
        [0, 4, 6, 2],
        [1, 3, 7, 5],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 2, 3, 1],
        [4, 5, 7, 6],
    ];
    let mut tris = Vec::new();
    for (q, keep) in quads.iter().zip(faces) {
        if keep {
            tris.push([q[0], q[1], q[2]]);
            tris.push([q[0], q[2], q[3]]);
        }
    }
    TriangleMesh::new(verts, tris).expect("valid box")
}

/// Box subdivided into an `n x n` grid per face; closed and wound outward.
pub fn subdivided_box(size: Vec3, n: u32) -> TriangleMesh {
    let h = size * 0.5;
    let mut verts: Vec<Vec3> = Vec::new();
    let mut index: HashMap<[i64; 3], u32> = HashMap::new();
    let mut vid = |p: Vec3, verts: &mut Vec<Vec3>| -> u32 {
        let key = [0, 1, 2].map(|i| (p[i] * 1e9).round() as i64);
        *index.entry(key).or_insert_with(|| {
            verts.push(p);
            (verts.len() - 1) as u32
        })
    };
    let mut tris = Vec::new();
    // each face: (normal axis, sign)
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let u_axis = (axis + 1) % 3;
            let v_axis = (axis + 2) % 3;
            let point = |i: u32, j: u32| {
                let mut p = Vec3::zeros();
                p[axis] = sign * h[axis];
                p[u_axis] = -h[u_axis] + size[u_axis] * i as f64 / n as f64;
                p[v_axis] = -h[v_axis] + size[v_axis] * j as f64 / n as f64;
                p
            };
            for i in 0..n {
                for j in 0..n {
                    let a = vid(point(i, j), &mut verts);
                    let b = vid(point(i + 1, j), &mut verts);
                    let c = vid(point(i + 1, j + 1), &mut verts);
                    let d = vid(point(i, j + 1), &mut verts);
                    // (u, v, axis) is right-handed, so ccw in (u, v) faces +axis
                    if sign > 0.0 {
                        tris.push([a, b, c]);
                        tris.push([a, c, d]);
                    } else {
                        tris.push([a, c, b]);
                        tris.push([a, d, c]);
                    }
                }
            }
        }
    }
    TriangleMesh::new(verts, tris).expect("valid box")
}

/// Single-sided square in the plane `z = 0`, normal +z, subdivided `n x n`.
pub fn square(side: f64, n: u32) -> TriangleMesh {
    let mut verts = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            verts.push(Vec3::new(
                -side / 2.0 + side * i as f64 / n as f64,
                -side / 2.0 + side * j as f64 / n as f64,
                0.0,
            ));
        }
    }
    let id = |i: u32, j: u32| j * (n + 1) + i;
    let mut tris = Vec::new();
    for j in 0..n {
        for i in 0..n {
            tris.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            tris.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriangleMesh::new(verts, tris).expect("valid square")
}

/// Sphere resting on a thin square slab whose downward face holds
/// `base_fraction` of the total surface area (approximately; exact
/// fraction is recoverable from the mesh itself).
pub fn sphere_on_pedestal(radius: f64, base_fraction: f64) -> TriangleMesh {
    let sphere = icosphere(radius, 3);
    let sphere_area = sphere.surface_area();
    let thickness = 0.02;
    // bottom = s^2, top = s^2, sides = 4 s t; choose s so that s^2 / total = f
    // s^2 = f (2 s^2 + 4 s t + A)  ->  (1 - 2f) s^2 - 4 f t s - f A = 0
    let a = 1.0 - 2.0 * base_fraction;
    let b = -4.0 * base_fraction * thickness;
    let c = -base_fraction * sphere_area;
    let side = (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
    let slab = cuboid(Vec3::new(side, side, thickness))
        .transformed(1.0, &Vec3::new(0.0, 0.0, -radius - thickness / 2.0))
        .expect("finite");
    TriangleMesh::merge(&[sphere, slab]).expect("valid merge")
}

/// Two equal spheres side by side along x.
pub fn two_spheres(radius: f64, gap: f64) -> TriangleMesh {
    let off = radius + gap / 2.0;
    let a = icosphere(radius, 3).transformed(1.0, &Vec3::new(-off, 0.0, 0.0)).unwrap();
    let b = icosphere(radius, 3).transformed(1.0, &Vec3::new(off, 0.0, 0.0)).unwrap();
    TriangleMesh::merge(&[a, b]).unwrap()
}

/// Concentric spheres; the inner one is fully enclosed.
pub fn nested_spheres(outer: f64, inner: f64) -> TriangleMesh {
    TriangleMesh::merge(&[icosphere(outer, 3), icosphere(inner, 3)]).unwrap()
}
