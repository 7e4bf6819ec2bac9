use elastreg_core::synth::texture_frame;
use elastreg_core::*;
use proptest::prelude::*;
use std::f64::consts::PI;

fn point() -> impl Strategy<Value = Point> {
    (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b)| [a, b])
}

fn rigid() -> impl Strategy<Value = RigidLikeParams> {
    (0.2..4.0f64, -PI + 1e-3..PI - 1e-3, -1.0..1.0f64, -1.0..1.0f64)
        .prop_map(|(s, a, tx, ty)| RigidLikeParams::new(s, a, tx, ty))
}

fn field(n: usize) -> impl Strategy<Value = DisplacementField> {
    proptest::collection::vec(-0.2..0.2f64, 2 * n * n).prop_map(move |v| {
        let grid = cell_centered_grid(n, n, Domain::default());
        DisplacementField::new(grid, v[..n * n].to_vec(), v[n * n..].to_vec()).unwrap()
    })
}

fn dot(a: &DisplacementField, b: &DisplacementField) -> f64 {
    a.u1().iter().chain(a.u2()).zip(b.u1().iter().chain(b.u2())).map(|(x, y)| x * y).sum()
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

proptest! {
    #[test]
    fn identity_map_fixes_points(pts in proptest::collection::vec(point(), 1..20)) {
        prop_assert_eq!(apply_rigid(&RigidLikeParams::IDENTITY, &pts), pts);
    }

    #[test]
    fn inverse_undoes_the_map(w in rigid(), p in point()) {
        let back = w.inverse().apply(w.apply(p));
        prop_assert!((back[0] - p[0]).abs() <= 1e-12 && (back[1] - p[1]).abs() <= 1e-12);
    }

    #[test]
    fn closest_fit_is_exact_on_rigid_fields(w in rigid()) {
        let grid = cell_centered_grid(12, 12, Domain::default());
        let fit = closest_rigid_like(&rigid_to_displacement(&w, &grid)).unwrap();
        prop_assert!((fit.scale - w.scale).abs() <= 1e-10);
        prop_assert!(angle_gap(fit.rotation, w.rotation) <= 1e-10);
        prop_assert!((fit.tx - w.tx).abs() <= 1e-10 && (fit.ty - w.ty).abs() <= 1e-10);
    }

    #[test]
    fn constant_shift_moves_only_the_translation(u in field(6), c1 in -0.5..0.5f64, c2 in -0.5..0.5f64) {
        let base = closest_rigid_like(&u).unwrap();
        let shifted: (Vec<f64>, Vec<f64>) = (u.u1().iter().map(|v| v + c1).collect(), u.u2().iter().map(|v| v + c2).collect());
        let shifted = DisplacementField::new(u.grid().clone(), shifted.0, shifted.1).unwrap();
        let fit = closest_rigid_like(&shifted).unwrap();
        prop_assert!((fit.scale - base.scale).abs() <= 1e-10);
        prop_assert!(angle_gap(fit.rotation, base.rotation) <= 1e-10);
        prop_assert!((fit.tx - (base.tx - c1)).abs() <= 1e-10);
        prop_assert!((fit.ty - (base.ty - c2)).abs() <= 1e-10);
    }

    #[test]
    fn ssd_is_nonnegative_and_vanishes_only_on_equality(
        a in proptest::collection::vec(-1.0..1.0f64, 1..30),
        noise in proptest::collection::vec(-1.0..1.0f64, 30),
    ) {
        let b: Vec<f64> = a.iter().zip(&noise).map(|(x, y)| x + y).collect();
        let d = ssd(&a, &b, 0.1).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d == 0.0, a == b);
        prop_assert_eq!(ssd(&a, &a, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn ndm_of_scaled_copy_is_the_factor(c in -1.0..3.0f64, seed in 0u64..1000) {
        let r = texture_frame(8, seed);
        let scaled = ScalarImage::from_samples(8, r.samples().iter().map(|v| v + c * v).collect()).unwrap();
        let d = ndm(&r, &scaled).unwrap();
        prop_assert!((d - c.abs()).abs() <= 1e-12 * (1.0 + c.abs()));
    }

    #[test]
    fn energy_is_nonnegative_and_blind_to_constants(u in field(6), k1 in -1.0..1.0f64, k2 in -1.0..1.0f64, lambda in 0.0..3.0f64, mu in 0.0..3.0f64) {
        let cfg = ElasticConfig { alpha: 1.0, lambda, mu };
        prop_assert!(elastic_energy(&u, &cfg) >= 0.0);
        let grid = u.grid().clone();
        let constant = DisplacementField::from_fn(&grid, |_| [k1, k2]);
        prop_assert!(elastic_energy(&constant, &cfg).abs() <= 1e-24);
    }

    #[test]
    fn operator_is_linear_symmetric_and_semidefinite(u in field(6), v in field(6), s in -2.0..2.0f64) {
        let cfg = ElasticConfig { alpha: 1.0, lambda: 0.7, mu: 1.3 };
        let au = elastic_operator_apply(&u, &cfg);
        let av = elastic_operator_apply(&v, &cfg);
        let combo = DisplacementField::new(
            u.grid().clone(),
            u.u1().iter().zip(v.u1()).map(|(a, b)| a + s * b).collect(),
            u.u2().iter().zip(v.u2()).map(|(a, b)| a + s * b).collect(),
        ).unwrap();
        let ac = elastic_operator_apply(&combo, &cfg);
        let scale = au.max_magnitude().max(av.max_magnitude()).max(1.0);
        for j in 0..combo.grid().len() {
            prop_assert!((ac.u1()[j] - au.u1()[j] - s * av.u1()[j]).abs() <= 1e-9 * scale);
            prop_assert!((ac.u2()[j] - au.u2()[j] - s * av.u2()[j]).abs() <= 1e-9 * scale);
        }
        let (uav, vau) = (dot(&u, &av), dot(&v, &au));
        prop_assert!((uav - vau).abs() <= 1e-10 * (uav.abs() + 1.0));
        prop_assert!(dot(&u, &au) >= -1e-12);
    }

    #[test]
    fn linear_fields_carry_their_continuum_energy(a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64, d in -1.0..1.0f64, lambda in 0.0..2.0f64) {
        let cfg = ElasticConfig { alpha: 1.0, lambda, mu: 1.0 };
        let grid = cell_centered_grid(10, 10, Domain::default());
        let u = DisplacementField::from_fn(&grid, |x| [a * x[0] + b * x[1], c * x[0] + d * x[1]]);
        let continuum = 0.5 * (lambda + 1.0) * (a + d).powi(2) + 0.5 * (a * a + b * b + c * c + d * d);
        prop_assert!((elastic_energy(&u, &cfg) - continuum).abs() <= 1e-12 * (1.0 + continuum));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constant_images_stay_constant(value in 0.0..1.0f64, theta in prop_oneof![Just(0.0), Just(1.0), Just(10.0), Just(100.0)], p in (0.0..1.0f64, 0.0..1.0f64)) {
        let img = ScalarImage::constant(12, 12, value);
        let itp = build_interpolant(&img, theta).unwrap();
        prop_assert!((itp.eval([p.0, p.1]) - value).abs() <= 1e-12);
    }

    #[test]
    fn outside_the_domain_is_zero(seed in 0u64..100, p in point()) {
        prop_assume!(!(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]));
        let itp = build_interpolant(&texture_frame(8, seed), 1.0).unwrap();
        prop_assert_eq!(itp.eval_with_gradient(p), (0.0, [0.0, 0.0]));
    }

    #[test]
    fn spline_gradient_matches_central_differences(seed in 0u64..100, p in (0.05..0.95f64, 0.05..0.95f64)) {
        let itp = build_interpolant(&texture_frame(12, seed), 1.0).unwrap();
        let (_, g) = itp.eval_with_gradient([p.0, p.1]);
        let h = 1e-5;
        let fd = [
            (itp.eval([p.0 + h, p.1]) - itp.eval([p.0 - h, p.1])) / (2.0 * h),
            (itp.eval([p.0, p.1 + h]) - itp.eval([p.0, p.1 - h])) / (2.0 * h),
        ];
        let norm = g[0].hypot(g[1]).max(1e-3);
        prop_assert!((fd[0] - g[0]).abs() <= 1e-4 * norm && (fd[1] - g[1]).abs() <= 1e-4 * norm);
    }

    #[test]
    fn synthesis_is_determined_by_the_seed(seed in 0u64..1000, e in 0.5..6.0f64) {
        let img = texture_frame(32, 3);
        let spec = SynthSpec { kind: SynthKind::RigidElastic, rotation_degrees: 7.0, elastic_intensity: e, seed, ..SynthSpec::default() };
        let a = synthesize(&img, &spec).unwrap();
        let b = synthesize(&img, &spec).unwrap();
        prop_assert_eq!(a.template, b.template);
    }

    #[test]
    fn zero_intensity_elastic_synthesis_is_identity(seed in 0u64..1000, n in 4usize..40) {
        let img = texture_frame(n, seed);
        let spec = SynthSpec { kind: SynthKind::Elastic, seed, ..SynthSpec::default() };
        prop_assert_eq!(make_elastic_synthetic(&img, &spec).unwrap().0, img);
    }
}
