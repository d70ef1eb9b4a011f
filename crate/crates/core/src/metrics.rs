//! Point-set reconstruction metrics: Chamfer distance, F-score and normal
//! consistency.

use crate::{GeomError, Result, Vec3};

/// Static kd-tree for exact nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct KdIndex {
    points: Vec<Vec3>,
    /// Permutation of point indices; node `lo..hi` splits at `(lo + hi) / 2`.
    perm: Vec<u32>,
    axes: Vec<u8>,
}

impl KdIndex {
    pub fn new(points: &[Vec3]) -> Self {
        let mut perm: Vec<u32> = (0..points.len() as u32).collect();
        let mut axes = vec![0u8; points.len()];
        build(points, &mut perm, &mut axes, 0, points.len());
        Self {
            points: points.to_vec(),
            perm,
            axes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of and distance to the nearest point; ties go to the lowest index.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.points.len(), &mut best);
        Some((best.0, best.1.sqrt()))
    }

    fn search(&self, q: &Vec3, lo: usize, hi: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let pi = self.perm[mid] as usize;
        let p = &self.points[pi];
        let d2 = (p - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && pi < best.0) {
            *best = (pi, d2);
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, near.0, near.1, best);
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, best);
        }
    }
}

fn build(points: &[Vec3], perm: &mut [u32], axes: &mut [u8], lo: usize, hi: usize) {
    if hi - lo <= 1 {
        return;
    }
    let mut min = Vec3::repeat(f64::INFINITY);
    let mut max = Vec3::repeat(f64::NEG_INFINITY);
    for &i in &perm[lo..hi] {
        min = min.inf(&points[i as usize]);
        max = max.sup(&points[i as usize]);
    }
    let ext = max - min;
    let axis = ext.imax();
    let mid = (lo + hi) / 2;
    perm[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    axes[mid] = axis as u8;
    build(points, perm, axes, lo, mid);
    build(points, perm, axes, mid + 1, hi);
}

fn nn_distances(from: &[Vec3], to: &KdIndex) -> Vec<f64> {
    from.iter().map(|p| to.nearest(p).expect("non-empty").1).collect()
}

fn non_empty(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        Err(GeomError::EmptySet)
    } else {
        Ok(())
    }
}

/// Symmetric Chamfer distance: `(mean_a d(a, B) + mean_b d(b, A)) / 2`.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    non_empty(a, b)?;
    let ia = KdIndex::new(a);
    let ib = KdIndex::new(b);
    let ab = nn_distances(a, &ib);
    let ba = nn_distances(b, &ia);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(0.5 * (mean(&ab) + mean(&ba)))
}

/// Harmonic mean of precision (fraction of `a` within `threshold` of `b`)
/// and recall (fraction of `b` within `threshold` of `a`).
pub fn f_score(a: &[Vec3], b: &[Vec3], threshold: f64) -> Result<f64> {
    non_empty(a, b)?;
    let ia = KdIndex::new(a);
    let ib = KdIndex::new(b);
    let frac = |d: Vec<f64>| d.iter().filter(|&&x| x <= threshold).count() as f64 / d.len() as f64;
    let precision = frac(nn_distances(a, &ib));
    let recall = frac(nn_distances(b, &ia));
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Mean absolute cosine between each point's normal and the normal of its
/// nearest neighbour in the other set, averaged over both directions.
pub fn normal_consistency(a: &[Vec3], na: &[Vec3], b: &[Vec3], nb: &[Vec3]) -> Result<f64> {
    non_empty(a, b)?;
    if a.len() != na.len() || b.len() != nb.len() {
        return Err(GeomError::ShapeMismatch("points and normals differ in length".into()));
    }
    if na.iter().chain(nb).any(|n| (n.norm() - 1.0).abs() > 1e-6) {
        return Err(GeomError::NonUnitNormal);
    }
    let one_way = |p: &[Vec3], np: &[Vec3], idx: &KdIndex, nq: &[Vec3]| -> f64 {
        p.iter()
            .zip(np)
            .map(|(x, n)| {
                let (j, _) = idx.nearest(x).expect("non-empty");
                n.dot(&nq[j]).abs()
            })
            .sum::<f64>()
            / p.len() as f64
    };
    let ia = KdIndex::new(a);
    let ib = KdIndex::new(b);
    Ok(0.5 * (one_way(a, na, &ib, nb) + one_way(b, nb, &ia, na)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random::<f64>() * 0.0))
            .collect()
    }

    #[test]
    fn kd_matches_brute_force_on_planar_set() {
        // all points share z, which trips naive bucketed trees
        let pts = cloud(3000, 1);
        let idx = KdIndex::new(&pts);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..300 {
            let q = Vec3::new(rng.random(), rng.random(), rng.random());
            let (i, d) = idx.nearest(&q).unwrap();
            let (bi, bd) = pts
                .iter()
                .enumerate()
                .map(|(k, p)| (k, (p - q).norm()))
                .fold((usize::MAX, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            assert_eq!(i, bi);
            assert!((d - bd).abs() < 1e-15);
        }
    }

    #[test]
    fn chamfer_examples() {
        let a = cloud(100, 3);
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        let z = [Vec3::zeros()];
        let o = [Vec3::new(1.0, 0.0, 0.0)];
        assert!((chamfer_distance(&z, &o).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(chamfer_distance(&[], &o), Err(GeomError::EmptySet)));
    }

    #[test]
    fn f_score_examples() {
        let a = cloud(50, 4);
        assert_eq!(f_score(&a, &a, 0.02).unwrap(), 1.0);
        let far: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(5.0, 0.0, 0.0)).collect();
        assert_eq!(f_score(&a, &far, 0.02).unwrap(), 0.0);
        // half of `a` near `b`, all of `b` near `a`
        let a = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
        let b = vec![Vec3::new(0.01, 0.0, 0.0)];
        let f = f_score(&a, &b, 0.02).unwrap();
        assert!((f - 2.0 * 0.5 * 1.0 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn normal_consistency_examples() {
        let p = cloud(64, 5);
        let n = vec![Vec3::new(0.0, 0.0, 1.0); 64];
        let flipped = vec![Vec3::new(0.0, 0.0, -1.0); 64];
        let rotated = vec![Vec3::new(1.0, 0.0, 0.0); 64];
        assert!((normal_consistency(&p, &n, &p, &n).unwrap() - 1.0).abs() < 1e-15);
        assert!((normal_consistency(&p, &n, &p, &flipped).unwrap() - 1.0).abs() < 1e-15);
        assert!(normal_consistency(&p, &n, &p, &rotated).unwrap().abs() < 1e-15);
        let bad = vec![Vec3::new(0.0, 0.0, 2.0); 64];
        assert!(matches!(normal_consistency(&p, &bad, &p, &n), Err(GeomError::NonUnitNormal)));
    }

    proptest::proptest! {
        #[test]
        fn metrics_symmetric(seed_a in 0u64..500, seed_b in 500u64..1000) {
            let a = cloud(40, seed_a);
            let b = cloud(55, seed_b);
            let c1 = chamfer_distance(&a, &b).unwrap();
            let c2 = chamfer_distance(&b, &a).unwrap();
            proptest::prop_assert!((c1 - c2).abs() < 1e-15);
            let f1 = f_score(&a, &b, 0.05).unwrap();
            let f2 = f_score(&b, &a, 0.05).unwrap();
            proptest::prop_assert!((f1 - f2).abs() < 1e-15);
        }
    }
}
