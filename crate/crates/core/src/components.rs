//! Edge-connected components of a triangle mesh.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::mesh::{Aabb, TriangleMesh};

/// Partition of the faces into edge-connected components. Component ids are
/// assigned in order of each component's lowest face index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentLabeling {
    pub component_of: Vec<usize>,
    pub areas: Vec<f64>,
    pub bounds: Vec<Aabb>,
}

impl ComponentLabeling {
    pub fn count(&self) -> usize {
        self.areas.len()
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Faces of component `c`, ascending.
    pub fn faces_of(&self, c: usize) -> Vec<usize> {
        self.component_of
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == c)
            .map(|(i, _)| i)
            .collect()
    }

    /// Index of the component with the largest area (lowest id on ties).
    pub fn largest(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &a) in self.areas.iter().enumerate() {
            if best.is_none_or(|b| a > self.areas[b]) {
                best = Some(i);
            }
        }
        best
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller root so labels are order-stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Faces sharing an edge (same vertex pair) end up in the same component.
pub fn connected_components(mesh: &TriangleMesh) -> ComponentLabeling {
    let n = mesh.triangle_count();
    let mut uf = UnionFind::new(n);
    let mut first_face: HashMap<(u32, u32), usize> = HashMap::with_capacity(n * 3 / 2);
    for (f, t) in mesh.triangles().iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            match first_face.get(&key) {
                Some(&g) => uf.union(f, g),
                None => {
                    first_face.insert(key, f);
                }
            }
        }
    }
    let mut label_of_root: HashMap<usize, usize> = HashMap::new();
    let mut component_of = Vec::with_capacity(n);
    let mut areas = Vec::new();
    let mut bounds = Vec::new();
    for f in 0..n {
        let root = uf.find(f);
        let next = label_of_root.len();
        let c = *label_of_root.entry(root).or_insert(next);
        if c == areas.len() {
            areas.push(0.0);
            bounds.push(Aabb::empty());
        }
        component_of.push(c);
        areas[c] += mesh.triangle_area(f);
        for v in mesh.corners(f) {
            bounds[c].grow(&v);
        }
    }
    ComponentLabeling {
        component_of,
        areas,
        bounds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{shapes, Vec3};

    #[test]
    fn single_and_double_sphere() {
        let s = shapes::icosphere(0.5, 3);
        let c = connected_components(&s);
        assert_eq!(c.count(), 1);
        let two = TriangleMesh::merge(&[
            shapes::icosphere(0.5, 3),
            shapes::icosphere(0.25, 3).transformed(1.0, &Vec3::new(2.0, 0.0, 0.0)).unwrap(),
        ])
        .unwrap();
        let c = connected_components(&two);
        assert_eq!(c.count(), 2);
        assert!((c.areas[1] / c.areas[0] - 0.25).abs() < 1e-12);
        assert!((c.total_area() - two.surface_area()).abs() < 1e-9 * two.surface_area());
    }

    #[test]
    fn sphere_area() {
        let c = connected_components(&shapes::icosphere(0.5, 3));
        let pi = std::f64::consts::PI;
        assert!((c.areas[0] - pi).abs() / pi < 0.02);
    }

    proptest::proptest! {
        #[test]
        fn invariant_under_face_permutation(seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let m = shapes::nested_spheres(0.8, 0.3);
            let mut order: Vec<usize> = (0..m.triangle_count()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let p = m.reordered(&order).unwrap();
            let a = connected_components(&m);
            let b = connected_components(&p);
            proptest::prop_assert_eq!(a.count(), b.count());
            // same partition: faces i, j together in one iff together in the other
            let mut map = HashMap::new();
            for (new_pos, &old) in order.iter().enumerate() {
                let la = a.component_of[old];
                let lb = b.component_of[new_pos];
                let e = map.entry(la).or_insert(lb);
                proptest::prop_assert_eq!(*e, lb);
            }
        }
    }
}
