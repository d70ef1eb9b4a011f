//! Reference values for the loss kernels on closed-form fields. Each check
//! reports its name, the observed deviation and the tolerance it must stay
//! under.

use meshflow_core::Vec3;
use super::*;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub deviation: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn pass(&self) -> bool {
        self.deviation < self.tolerance
    }
}

fn check(name: &'static str, got: f64, want: f64, tolerance: f64) -> Check {
    Check {
        name,
        deviation: (got - want).abs(),
        tolerance,
    }
}

pub fn unit_sphere() -> FieldOracle {
    FieldOracle::Sphere {
        center: Vec3::new(0.1, -0.05, 0.2),
        radius: 0.6,
    }
}

pub fn slanted_plane() -> FieldOracle {
    FieldOracle::Plane {
        normal: Vec3::new(1.0, 2.0, -2.0) / 3.0,
        offset: 0.1,
    }
}

pub fn test_box() -> FieldOracle {
    FieldOracle::Box {
        center: Vec3::new(0.05, 0.0, -0.1),
        half: Vec3::new(0.5, 0.4, 0.3),
    }
}

pub fn cube_points(n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

/// Points on the sphere oracle with their outward normals.
pub fn sphere_surface(n: usize, seed: u64) -> (Vec<Vec3>, Vec<Vec3>) {
    let FieldOracle::Sphere { center, radius } = unit_sphere() else { unreachable!() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normals: Vec<Vec3> = (0..n)
        .map(|_| loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() > 0.1 && v.norm() <= 1.0 {
                break v.normalize();
            }
        })
        .collect();
    let points = normals.iter().map(|n| center + n * radius).collect();
    (points, normals)
}

/// Distance from `p` to the set where the box field is not differentiable.
pub fn box_kink_distance(p: &Vec3) -> f64 {
    let FieldOracle::Box { center, half } = test_box() else { unreachable!() };
    let q = (p - center).abs() - half;
    if q.max() > 0.0 {
        return f64::INFINITY;
    }
    let mut sorted = [q.x, q.y, q.z];
    sorted.sort_by(f64::total_cmp);
    let a = q.imax();
    // ties between face distances, and the mid-plane of the nearest face pair
    ((sorted[2] - sorted[1]) / 2f64.sqrt()).min((p - center)[a].abs())
}

pub fn loss_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let analytic = GradientMode::Analytic;
    let fd = GradientMode::Central { h: DEFAULT_FD_STEP };

    out.push(check("sdf: equal", sdf_loss(&[0.2, -0.4], &[0.2, -0.4]).unwrap(), 0.0, 1e-15));
    out.push(check("sdf: unit gap", sdf_loss(&[1.5, 0.0], &[0.5, -1.0]).unwrap(), 2.0, 1e-15));
    out.push(check("sdf: half gap", sdf_loss(&[0.5, 0.25], &[0.0, -0.25]).unwrap(), 0.75, 1e-15));

    let (pts, normals) = sphere_surface(500, 1);
    let flipped: Vec<Vec3> = normals.iter().map(|n| -n).collect();
    let ortho: Vec<Vec3> = normals.iter().map(|n| n.cross(&Vec3::new(0.3, 0.5, 0.81)).normalize()).collect();
    let sphere = unit_sphere();
    out.push(check("normal: true, analytic", normal_loss(&sphere, &pts, &normals, analytic).unwrap(), 0.0, 1e-6));
    out.push(check("normal: true, fd", normal_loss(&sphere, &pts, &normals, fd).unwrap(), 0.0, 1e-4));
    out.push(check("normal: flipped", normal_loss(&sphere, &pts, &flipped, analytic).unwrap(), 2.0, 1e-12));
    out.push(check("normal: orthogonal", normal_loss(&sphere, &pts, &ortho, analytic).unwrap(), 1.0, 1e-12));

    let cube = cube_points(1000, 2);
    let plane = slanted_plane();
    out.push(check("eikonal: plane", eikonal_loss(&plane, &cube, analytic).unwrap(), 0.0, 1e-12));
    out.push(check("eikonal: doubled plane", eikonal_loss(&plane.clone().scaled(2.0), &cube, analytic).unwrap(), 1.0, 1e-12));
    out.push(check("eikonal: sphere, analytic", eikonal_loss(&sphere, &cube, analytic).unwrap(), 0.0, 1e-6));
    out.push(check("eikonal: sphere, fd", eikonal_loss(&sphere, &cube, fd).unwrap(), 0.0, 1e-4));

    let z = Array2::zeros((4, 8));
    let ln2 = Array2::from_elem((4, 8), 2f64.ln());
    out.push(check("kl: standard", kl_loss(&LatentGaussian::new(z.clone(), z.clone()).unwrap()), 0.0, 1e-15));
    out.push(check("kl: unit mean", kl_loss(&LatentGaussian::new(Array2::ones((4, 8)), z.clone()).unwrap()), 0.5, 1e-15));
    out.push(check("kl: doubled variance", kl_loss(&LatentGaussian::new(z, ln2).unwrap()), 0.153_426_409_720_027_3, 1e-12));

    out.push(check("bce: exact", occupancy_bce(&[1e-9, 1.0 - 1e-9], &[0.0, 1.0]).unwrap(), 0.0, 1e-6));
    out.push(check("bce: coin", occupancy_bce(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.693_147_180_559_945_3, 1e-12));
    out.push(check("bce: 0.9 vs 1", occupancy_bce(&[0.9], &[1.0]).unwrap(), 0.105_360_515_657_826_3, 1e-12));

    let w = VaeLossWeights::default();
    let total = |sdf, normal, eikonal, kl| total_vae_loss(&VaeLossParts { sdf, normal, eikonal, kl }, &w).unwrap();
    out.push(check("total: sdf only", total(1.0, 0.0, 0.0, 0.0), 1.0, 1e-15));
    out.push(check("total: normal coefficient", total(0.0, 1.0, 0.0, 0.0), 10.0, 1e-15));
    out.push(check("total: eikonal coefficient", total(0.0, 0.0, 1.0, 0.0), 0.1, 1e-15));
    out.push(check("total: kl coefficient", total(0.0, 0.0, 0.0, 1.0), 0.001, 1e-15));
    out.push(check("total: all ones", total(1.0, 1.0, 1.0, 1.0), 11.101, 1e-12));
    out
}

/// Worst relative error between central differences and the closed-form
/// gradient over random points, skipping points within `margin` of a kink.
pub fn gradient_fidelity(field: &FieldOracle, n: usize, seed: u64, kink: impl Fn(&Vec3) -> f64) -> (f64, usize) {
    let margin = 10.0 * DEFAULT_FD_STEP;
    let mut worst = 0.0f64;
    let mut used = 0;
    for p in cube_points(n, seed) {
        if kink(&p) < margin {
            continue;
        }
        let Some(g) = field.analytic_gradient(&p) else { continue };
        let d = field.fd_gradient(&p, DEFAULT_FD_STEP);
        worst = worst.max((d - g).norm() / g.norm());
        used += 1;
    }
    (worst, used)
}
