use meshflow_nn::vae::reference::*;
use meshflow_core::grid::ScalarGrid;
use meshflow_core::Vec3;
use meshflow_nn::vae::*;
use meshflow_nn::NnError;
use ndarray::Axis;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn reference_values() {
    let checks = loss_checks();
    let failed: Vec<_> = checks
        .iter()
        .filter(|c| !c.pass())
        .map(|c| format!("{}: {:e} ≥ {:e}", c.name, c.deviation, c.tolerance))
        .collect();
    assert!(failed.is_empty(), "{failed:#?}");
}

#[test]
fn finite_differences_match_closed_form_gradients() {
    let sphere = unit_sphere();
    let FieldOracle::Sphere { center, .. } = sphere else { unreachable!() };
    let (err, used) = gradient_fidelity(&sphere, 1000, 3, |p| (p - center).norm());
    assert!(err < 1e-3 && used > 990, "{err} over {used}");
    let (err, used) = gradient_fidelity(&slanted_plane(), 1000, 4, |_| f64::INFINITY);
    assert!(err < 1e-3 && used == 1000, "{err}");
    let (err, used) = gradient_fidelity(&test_box(), 1000, 5, box_kink_distance);
    assert!(err < 1e-3 && used > 950, "{err} over {used}");
}

#[test]
fn analytic_and_fd_losses_agree() {
    let fd = GradientMode::Central { h: DEFAULT_FD_STEP };
    let pts: Vec<Vec3> = cube_points(1000, 6)
        .into_iter()
        .filter(|p| box_kink_distance(p) > 1e-3)
        .collect();
    for field in [unit_sphere(), test_box(), slanted_plane().scaled(0.5)] {
        let a = eikonal_loss(&field, &pts, GradientMode::Analytic).unwrap();
        let b = eikonal_loss(&field, &pts, fd).unwrap();
        assert!((a - b).abs() < 1e-3, "{field:?}: {a} vs {b}");
    }
    let (pts, normals) = sphere_surface(300, 7);
    let a = normal_loss(&unit_sphere(), &pts, &normals, GradientMode::Analytic).unwrap();
    let b = normal_loss(&unit_sphere(), &pts, &normals, fd).unwrap();
    assert!((a - b).abs() < 1e-3);
}

#[test]
fn flat_field_has_no_normal() {
    let flat = slanted_plane().scaled(0.0);
    let err = normal_loss(&flat, &[Vec3::zeros()], &[Vec3::x()], GradientMode::Analytic).unwrap_err();
    assert!(matches!(err, NnError::ZeroGradient { index: 0 }));
}

#[test]
fn grid_oracle_from_file() {
    let grid = ScalarGrid::unit_cube(24, |p| p.norm() - 0.5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("field.sfgd");
    grid.save(&path).unwrap();
    let field = FieldOracle::load_grid(&path).unwrap();
    let (pts, normals): (Vec<Vec3>, Vec<Vec3>) = cube_points(200, 8)
        .into_iter()
        .filter(|p| p.norm() > 0.2)
        .map(|p| (p.normalize() * 0.5, p.normalize()))
        .unzip();
    // trilinear interpolation of a cone-like field: normals close, not exact
    let loss = normal_loss(&field, &pts, &normals, GradientMode::Analytic).unwrap();
    assert!(loss < 0.01, "{loss}");
    assert!((field.value(&Vec3::new(0.5, 0.0, 0.0))).abs() < 0.01);
}

proptest! {
    #[test]
    fn sdf_loss_grows_with_the_gap(a in -2.0f64..2.0, g1 in 0.0f64..3.0, extra in 1e-6f64..1.0) {
        let near = sdf_loss(&[a + g1], &[a]).unwrap();
        let far = sdf_loss(&[a + g1 + extra], &[a]).unwrap();
        prop_assert!(far > near);
    }

    #[test]
    fn bce_is_smallest_at_the_label(label in 0u8..=1, o in 0.0f64..1.0) {
        let y = f64::from(label);
        let at_label = occupancy_bce(&[y], &[y]).unwrap();
        prop_assume!((o - y).abs() > 1e-6);
        prop_assert!(occupancy_bce(&[o], &[y]).unwrap() > at_label);
    }

    #[test]
    fn total_loss_is_linear_in_each_part(p in prop::array::uniform4(0.0f64..5.0), d in 0.0f64..5.0, which in 0usize..4) {
        let w = VaeLossWeights::default();
        let coef = [1.0, 10.0, 0.1, 0.001][which];
        let parts = |v: [f64; 4]| VaeLossParts { sdf: v[0], normal: v[1], eikonal: v[2], kl: v[3] };
        let mut q = p;
        q[which] += d;
        let diff = total_vae_loss(&parts(q), &w).unwrap() - total_vae_loss(&parts(p), &w).unwrap();
        prop_assert!((diff - coef * d).abs() < 1e-12);
    }
}

#[test]
fn encoder_shapes_across_token_counts() {
    let cfg = VaeArchConfig::toy();
    let enc = VecSetEncoder::random(&cfg, 1).unwrap();
    let (pts, normals) = sphere_surface(8192, 9);
    for m in [512, 2048, 4096] {
        let out = encode_pointcloud(&pts, &normals, m, 0, 3, &enc).unwrap();
        assert_eq!(out.latent.dim(), (m, cfg.channels));
        assert!(out.latent.iter().all(|v| v.is_finite()));
        assert_eq!(out.indices[0], 0);
    }
    assert!(matches!(
        encode_pointcloud(&pts[..100], &normals[..100], 128, 0, 3, &enc),
        Err(NnError::TooFewPoints { have: 100, need: 128 })
    ));
}

#[test]
fn encoder_ignores_input_order_and_sees_translation() {
    let cfg = VaeArchConfig::toy();
    let enc = VecSetEncoder::random(&cfg, 2).unwrap();
    let (pts, normals) = sphere_surface(1500, 10);
    let base = encode_pointcloud(&pts, &normals, 96, 0, 7, &enc).unwrap();

    let mut perm: Vec<usize> = (0..pts.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(11));
    let ppts: Vec<Vec3> = perm.iter().map(|&i| pts[i]).collect();
    let pnormals: Vec<Vec3> = perm.iter().map(|&i| normals[i]).collect();
    let start = perm.iter().position(|&i| i == 0).unwrap();
    let shuffled = encode_pointcloud(&ppts, &pnormals, 96, start, 7, &enc).unwrap();
    let err = (&shuffled.latent - &base.latent).iter().fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(err < 1e-6, "{err}");

    let moved: Vec<Vec3> = pts.iter().map(|p| p + Vec3::new(0.1, 0.0, 0.0)).collect();
    let translated = encode_pointcloud(&moved, &normals, 96, 0, 7, &enc).unwrap();
    assert_eq!(translated.indices, base.indices);
    let diff = (&translated.posterior.mu - &base.posterior.mu).iter().fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(diff > 1e-3);
}

#[test]
fn decoder_queries_are_independent() {
    let cfg = VaeArchConfig::toy();
    let dec = VecSetDecoder::random(&cfg, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let latent = ndarray::Array2::from_shape_simple_fn((64, cfg.channels), || rand::Rng::sample(&mut rng, rand_distr::StandardNormal));
    let queries = cube_points(10_000, 13);
    let batch = decode_sdf(latent.view(), &queries, &dec).unwrap();
    assert_eq!(batch.len(), 10_000);
    assert!(batch.iter().all(|v| v.is_finite()));
    let tokens = dec.prepare(latent.view()).unwrap();
    for i in (0..10_000).step_by(397) {
        let single = dec.query(tokens.view(), &queries[i..=i]).unwrap()[0];
        assert!((single - batch[i]).abs() < 1e-9);
    }
    let mut perm: Vec<usize> = (0..64).collect();
    perm.shuffle(&mut rng);
    let shuffled = decode_sdf(latent.select(Axis(0), &perm).view(), &queries[..500], &dec).unwrap();
    let err = shuffled.iter().zip(&batch).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err < 1e-6, "{err}");
    assert!(decode_sdf(latent.view().slice(ndarray::s![.., ..3]), &queries[..2], &dec).is_err());
}
