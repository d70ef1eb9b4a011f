//! Self-check suites run by `meshflow verify`. Every check compares the
//! library against a closed form or an independent computation.

use std::f64::consts::PI;

use meshflow_core::fieldgen::{compute_udf, make_watertight, FieldGenParams};
use meshflow_core::mc::marching_cubes;
use meshflow_core::render::{canonical_views, filter_decision, Decision, FilterThresholds, RejectReason};
use meshflow_core::sample::{sample_surface, tsdf_label};
use meshflow_core::{connected_components, shapes, DistanceAccelerator, TriangleMesh, Vec3};
use meshflow_flow::schedule::{DdpmSchedule, EdmSchedule};
use meshflow_flow::{euler_sample, logit_normal_density, rf_interpolate, LogitNormalSampler};
use meshflow_nn::probe;
use meshflow_nn::vae::reference::loss_checks;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Field,
    Sched,
    Arch,
    Vae,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub suite: &'static str,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn outcome(suite: &'static str, name: impl Into<String>, pass: bool, detail: impl Into<String>) -> CheckOutcome {
    CheckOutcome {
        suite,
        name: name.into(),
        pass,
        detail: detail.into(),
    }
}

/// `got` within `tol` of `want`.
fn close(suite: &'static str, name: &str, got: f64, want: f64, tol: f64) -> CheckOutcome {
    let dev = (got - want).abs();
    outcome(suite, name, dev <= tol, format!("got {got:.12e}, want {want:.12e}, |Δ| {dev:.3e} (tol {tol:.0e})"))
}

pub fn run_suite(suite: Suite) -> Vec<CheckOutcome> {
    match suite {
        Suite::Field => field_checks(64),
        Suite::Sched => sched_checks(|t, n, m| meshflow_flow::shift_timestep(t, n, m).unwrap_or(f64::NAN)),
        Suite::Arch => arch_checks(),
        Suite::Vae => vae_checks(),
        Suite::All => [Suite::Field, Suite::Sched, Suite::Arch, Suite::Vae]
            .into_iter()
            .flat_map(run_suite)
            .collect(),
    }
}

/// Area-weighted mesh samples against an analytic sphere: mean of the
/// mesh→sphere distance and of the sphere→mesh distance, halved.
pub fn chamfer_to_sphere(mesh: &TriangleMesh, radius: f64, samples: usize, seed: u64) -> f64 {
    let (pts, _) = sample_surface(mesh, samples, seed).expect("non-empty mesh");
    let to_sphere = pts.iter().map(|p| (p.norm() - radius).abs()).sum::<f64>() / pts.len() as f64;
    let accel = DistanceAccelerator::new(mesh).expect("non-empty mesh");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let to_mesh = (0..samples)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..2.0 * PI);
            let s = (1.0 - z * z).sqrt();
            let q = Vec3::new(s * phi.cos(), s * phi.sin(), z) * radius;
            accel.unsigned_distance(&q).0
        })
        .sum::<f64>()
        / samples as f64;
    0.5 * (to_sphere + to_mesh)
}

/// Output of the watertight chain on an icosphere of radius `r` at
/// resolution `res`: (mesh, Chamfer to the r + tau sphere, spacing).
pub fn sphere_fieldgen(r: f64, res: usize) -> (TriangleMesh, f64, f64) {
    let params = FieldGenParams::for_resolution(res);
    let out = make_watertight(&shapes::icosphere(r, 5), &params).expect("fieldgen on a sphere");
    let cd = chamfer_to_sphere(&out.mesh, r + params.tau, 20_000, 11);
    (out.mesh, cd, params.spacing())
}

fn edge_manifold(mesh: &TriangleMesh) -> (bool, usize) {
    let mut edges = std::collections::HashMap::new();
    for t in mesh.triangles() {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            *edges.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
        }
    }
    let bad = edges.values().filter(|&&c| c != 2).count();
    (!mesh.is_empty() && bad == 0, bad)
}

pub fn field_checks(res: usize) -> Vec<CheckOutcome> {
    const S: &str = "field";
    let mut out = Vec::new();

    let (mesh, cd, h) = sphere_fieldgen(0.5, res);
    let (closed, bad) = edge_manifold(&mesh);
    out.push(outcome(S, "sphere output is closed", closed, format!("{bad} edges not on exactly 2 faces")));
    out.push(outcome(S, "sphere Chamfer to offset surface", cd < 2.0 * h, format!("{cd:.3e} vs 2·spacing {:.3e}", 2.0 * h)));

    let params = FieldGenParams::for_resolution(res);
    let nested = shapes::nested_spheres(0.8, 0.3);
    let kept = make_watertight(&nested, &params).map(|o| connected_components(&o.mesh).count());
    out.push(outcome(S, "nested spheres keep one shell", matches!(kept, Ok(1)), format!("{kept:?} components")));
    let raw = compute_udf(&nested, &params)
        .and_then(|g| marching_cubes(&g, params.tau))
        .map(|m| connected_components(&m).count());
    out.push(outcome(
        S,
        "cavity surfaces appear without visibility reset",
        matches!(raw, Ok(n) if n >= 2),
        format!("{raw:?} components"),
    ));

    let (sphere, box_) = (shapes::icosphere(0.5, 6), shapes::cube(0.4));
    let t_max = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<Vec3> = (0..10_000)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let sd_sphere = |p: &Vec3| p.norm() - 0.5;
    let sd_box = |p: &Vec3| {
        let q = p.abs() - Vec3::repeat(0.4);
        q.map(|c| c.max(0.0)).norm() + q.max().min(0.0)
    };
    for (name, mesh, sd) in [
        ("sphere", &sphere, &sd_sphere as &dyn Fn(&Vec3) -> f64),
        ("box", &box_, &sd_box),
    ] {
        let accel = DistanceAccelerator::new(mesh).expect("fixture");
        let (mut wrong, mut over) = (0, 0);
        for p in &pts {
            let label = tsdf_label(&accel, p, t_max);
            let d = sd(p);
            if d.abs() > 1e-4 && (label < 0.0) != (d < 0.0) {
                wrong += 1;
            }
            if label.abs() > t_max {
                over += 1;
            }
        }
        out.push(outcome(S, format!("tsdf sign, {name}"), wrong == 0, format!("{wrong} sign errors")));
        out.push(outcome(S, format!("tsdf bound, {name}"), over == 0, format!("{over} labels above t_max")));
    }

    let th = FilterThresholds {
        resolution: 128,
        ..Default::default()
    };
    let views = canonical_views(th.resolution).expect("views");
    let norm = |m: TriangleMesh| m.normalize_to_unit_cube(0.05).expect("fixture");
    let two = norm(shapes::two_spheres(0.4, 0.3));
    let r2 = filter_decision(&two, &views, &th);
    let ratio = r2.multi_object.largest_component_ratio;
    out.push(outcome(
        S,
        "two spheres rejected near ratio 0.5",
        !r2.keep() && (ratio - 0.5).abs() <= 0.02,
        format!("ratio {ratio:.4}, {:?}", r2.decision),
    ));
    let ped = norm(shapes::sphere_on_pedestal(0.4, 0.3));
    let rp = filter_decision(&ped, &views, &th);
    out.push(outcome(
        S,
        "pedestal rejected as planar base",
        matches!(&rp.decision, Decision::Reject { reasons } if reasons.contains(&RejectReason::PlanarBase)),
        format!("{:?}", rp.decision),
    ));
    let rs = filter_decision(&norm(shapes::icosphere(0.5, 3)), &views, &th);
    out.push(outcome(S, "sphere kept", rs.keep(), format!("{:?}", rs.decision)));
    let n = two.triangle_count();
    let order: Vec<usize> = (0..n).rev().collect();
    let rr = filter_decision(&two.reordered(&order).expect("permutation"), &views, &th);
    out.push(outcome(
        S,
        "filter ignores triangle order",
        rr == r2,
        format!("ratio {:.4} vs {ratio:.4}", rr.multi_object.largest_component_ratio),
    ));
    out
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let whole = (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
    let left = (m - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + m)) + f(m));
    let right = (b - m) / 6.0 * (f(m) + 4.0 * f(0.5 * (m + b)) + f(b));
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        left + right + diff / 15.0
    } else {
        simpson(f, a, m, tol / 2.0, depth - 1) + simpson(f, m, b, tol / 2.0, depth - 1)
    }
}

/// Integral of the logit-normal density over (0, 1), after substituting
/// `t = sigmoid(u)` on a wide window of `u`.
fn density_mass(m: f64, s: f64) -> f64 {
    let f = |u: f64| {
        let t = 1.0 / (1.0 + (-u).exp());
        logit_normal_density(t, m, s).unwrap_or(0.0) * t * (1.0 - t)
    };
    let half = 40.0 * s;
    simpson(&f, m - half, m + half, 1e-12, 40)
}

/// χ² p-value of `draws` against the density over `bins` equal-width bins.
pub fn chi_square_p(draws: &[f64], m: f64, s: f64, bins: usize) -> f64 {
    let mut counts = vec![0usize; bins];
    for &t in draws {
        counts[((t * bins as f64) as usize).min(bins - 1)] += 1;
    }
    // bin masses from the normal CDF of the logit
    let normal = statrs::distribution::Normal::new(m, s).expect("s > 0");
    let cdf = |t: f64| match t {
        t if t <= 0.0 => 0.0,
        t if t >= 1.0 => 1.0,
        t => normal.cdf((t / (1.0 - t)).ln()),
    };
    let stat: f64 = (0..bins)
        .map(|b| {
            let p = cdf((b + 1) as f64 / bins as f64) - cdf(b as f64 / bins as f64);
            let expected = p * draws.len() as f64;
            let d = counts[b] as f64 - expected;
            d * d / expected
        })
        .sum();
    1.0 - ChiSquared::new((bins - 1) as f64).expect("dof ≥ 1").cdf(stat)
}

/// Scheduler checks. `shift(t, n, m)` is the timestep shift under test.
pub fn sched_checks(shift: impl Fn(f64, u64, u64) -> f64) -> Vec<CheckOutcome> {
    const S: &str = "sched";
    let mut out = Vec::new();

    let pairs = [(1u64, 1u64), (256, 4096), (4096, 256), (512, 4096), (3, 1000)];
    let mut worst = 0.0f64;
    let mut monotone = true;
    let mut in_range = true;
    for &(n, m) in &pairs {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            let s = shift(t, n, m);
            worst = worst.max((shift(s, m, n) - t).abs());
            monotone &= s > prev;
            in_range &= (0.0..=1.0).contains(&s);
            prev = s;
        }
        in_range &= shift(0.0, n, m) == 0.0 && (shift(1.0, n, m) - 1.0).abs() <= 1e-12;
    }
    let bijection = in_range && monotone && worst <= 1e-12;
    out.push(outcome(
        S,
        "shift bijection of [0, 1] with inverse",
        bijection,
        format!("endpoints and range {in_range}, increasing {monotone}, max |shift⁻¹(shift(t)) − t| = {worst:.3e}"),
    ));
    let a = 8f64.sqrt();
    out.push(close(S, "shift(0.5, 512 → 4096)", shift(0.5, 512, 4096), a / (1.0 + a), 1e-9));
    out.push(close(S, "shift identity at n = m", shift(0.3, 77, 77), 0.3, 1e-15));

    let x0 = [0.3, -1.2, 2.5];
    let eps = [1.0, 0.5, -0.7];
    let v: Vec<f64> = x0.iter().zip(&eps).map(|(a, b)| a - b).collect();
    let one_step = euler_sample(|_, _| v.clone(), &eps, 1, None).unwrap_or_default();
    let err = one_step.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(f64::NAN, f64::max);
    out.push(outcome(S, "one Euler step with exact velocity", err <= 1e-12, format!("max error {err:.3e}")));
    let mid = rf_interpolate(&x0, &eps, 0.25).unwrap_or_default();
    let err = mid
        .iter()
        .zip(x0.iter().zip(&eps))
        .map(|(x, (a, b))| (x - (0.25 * a + 0.75 * b)).abs())
        .fold(f64::NAN, f64::max);
    out.push(outcome(S, "rectified-flow path at t = 0.25", err <= 1e-15, format!("max error {err:.3e}")));

    for (m, s) in [(0.0, 1.0), (0.5, 0.7), (-1.0, 1.5)] {
        out.push(close(S, &format!("density mass (m={m}, s={s})"), density_mass(m, s), 1.0, 1e-6));
    }
    let mut sampler = LogitNormalSampler::new(0.0, 1.0, 7).expect("valid");
    let draws: Vec<f64> = (0..200_000).map(|_| sampler.sample()).collect();
    let p = chi_square_p(&draws, 0.0, 1.0, 50);
    out.push(outcome(S, "sampler histogram fits density", p > 0.01, format!("p = {p:.4}")));

    let ddpm = DdpmSchedule::linear(1e-4, 0.02, 1000);
    let ok = ddpm.as_ref().is_ok_and(|d| {
        let ab = d.alpha_bar();
        ab.windows(2).all(|w| w[1] < w[0]) && (ab[0] - (1.0 - 1e-4)).abs() < 1e-15
    });
    out.push(outcome(S, "DDPM alpha-bar decreasing from 1 − beta₁", ok, ""));
    let edm = EdmSchedule::new(0.002, 80.0, 7.0);
    let ends = edm.as_ref().map(|e| (e.sigma(0.0).unwrap_or(f64::NAN), e.sigma(1.0).unwrap_or(f64::NAN)));
    let ok = matches!(ends, Ok((a, b)) if (a - 0.002).abs() < 1e-15 && (b - 80.0).abs() < 1e-12);
    out.push(outcome(S, "EDM sigma endpoints", ok, format!("{ends:?}")));
    out
}

pub fn arch_checks() -> Vec<CheckOutcome> {
    const S: &str = "arch";
    let mut out = Vec::new();
    let skip = probe::skip_probe(1);
    out.push(outcome(
        S,
        "skip wiring (decoder j reads encoder N − j)",
        skip.identity_error < 1e-12 && skip.target_change > 1e-6 && skip.upstream_change < 1e-12,
        format!("{skip:?}"),
    ));
    let e = probe::moe_dense_equivalence_error(2);
    out.push(outcome(S, "MoE equals dense FFN after upcycling", e < 1e-6, format!("{e:.3e}")));
    let e = probe::backbone_permutation_error(3, 64);
    out.push(outcome(S, "token permutation equivariance", e < 1e-6, format!("{e:.3e}")));
    let runs = probe::length_extrapolation(4, &[512, 2048, 4096]);
    out.push(outcome(
        S,
        "same weights at L = 512, 2048, 4096",
        runs.iter().all(|&(_, finite, shape)| finite && shape),
        format!("{runs:?}"),
    ));
    let (uniform, path) = probe::aux_loss_path(8, 2);
    out.push(close(S, "aux loss at uniform routing (E=8, k=2)", uniform, 2.0, 1e-12));
    let rising = path.windows(2).all(|w| w[1] > w[0]);
    let last = path.last().copied().unwrap_or(f64::NAN);
    out.push(outcome(
        S,
        "aux loss rises toward 16 under collapse",
        rising && (last - 16.0).abs() < 1e-9,
        format!("{} steps, final {last}", path.len()),
    ));
    out
}

pub fn vae_checks() -> Vec<CheckOutcome> {
    loss_checks()
        .into_iter()
        .map(|c| {
            let detail = format!("|Δ| {:.3e} (tol {:.0e})", c.deviation, c.tolerance);
            outcome("vae", c.name, c.pass(), detail)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sched_suite_passes() {
        let failed: Vec<_> = run_suite(Suite::Sched).into_iter().filter(|c| !c.pass).collect();
        assert!(failed.is_empty(), "{failed:#?}");
    }

    #[test]
    fn sign_flipped_shift_is_caught() {
        let flipped = |t: f64, n: u64, m: u64| {
            let a = (m as f64 / n as f64).sqrt();
            a * t / (1.0 - (a - 1.0) * t)
        };
        let report = sched_checks(flipped);
        let inverse = report.iter().find(|c| c.name == "shift bijection of [0, 1] with inverse").unwrap();
        assert!(!inverse.pass, "{inverse:?}");
    }
}
