use proptest::prelude::*;
use psfs::grid::{CameraRig, Domain, ScalarField};
use psfs::io::{decode_pgm, encode_pgm, format_grid, parse_grid};
use psfs::model::{hamiltonian_eff, on_coefficients, w_term, ReflectanceModel};
use psfs::scene::{incidence_cosine, light_direction, render, surface_point, AnalyticSurface, SurfaceParams};
use psfs::solver::{
    numerical_hamiltonian, solve, state_constraint_constant, BoundaryCondition, SolverConfig, Stencil,
};
use psfs::RenderedImage;

fn model_strategy() -> impl Strategy<Value = ReflectanceModel> {
    prop_oneof![
        Just(ReflectanceModel::lambertian()),
        (0.0..0.9f64).prop_map(|s| ReflectanceModel::oren_nayar(s).unwrap()),
        (0.0..0.3f64, 0.1..1.0f64, 1u32..6).prop_map(|(ka, frac, alpha)| {
            let kd = (1.0 - ka) * frac;
            ReflectanceModel::phong(ka, kd, 1.0 - ka - kd, alpha).unwrap()
        }),
        (0.0..0.3f64, 0.1..1.0f64, 1.0..20.0f64).prop_map(|(ka, frac, c)| {
            let kd = (1.0 - ka) * frac;
            ReflectanceModel::blinn_phong(ka, kd, 1.0 - ka - kd, c).unwrap()
        }),
    ]
}

fn point() -> impl Strategy<Value = [f64; 2]> {
    [-0.5..=0.5f64, -0.5..=0.5f64]
}

fn gradient() -> impl Strategy<Value = [f64; 2]> {
    [-50.0..50.0f64, -50.0..50.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rig_spacing_is_positive(f in 0.1..10.0f64, x0 in -2.0..2.0f64, w in 0.01..3.0f64, nx in 3usize..50, ny in 3usize..50) {
        let rig = CameraRig::new(f, Domain::new(x0, x0 + w, -w, w), nx, ny).unwrap();
        prop_assert!(rig.hx() > 0.0 && rig.hy() > 0.0);
        let last = rig.node(nx - 1, ny - 1);
        prop_assert!((last[0] - (x0 + w)).abs() < 1e-12 && (last[1] - w).abs() < 1e-12);
    }

    #[test]
    fn oren_nayar_monotone_flag(sigma in 0.0..=psfs::model::MAX_ROUGHNESS) {
        let (a, b) = on_coefficients(sigma).unwrap();
        let m = ReflectanceModel::oren_nayar(sigma).unwrap();
        prop_assert_eq!(m.is_monotone(), a / 2.0 > b);
        prop_assert!(a > 0.0 && a <= 1.0 && b >= 0.0);
    }

    #[test]
    fn surface_point_distance_is_f_u(x in point(), u in 0.01..10.0f64, f in 0.1..5.0f64) {
        let s = surface_point(x, u, f);
        let d = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
        prop_assert!((d - f * u).abs() <= 1e-12 * f * u);
        let w = light_direction(x, f);
        prop_assert!(((w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn incidence_cosine_is_in_unit_interval(x in point(), u in 0.01..10.0f64, g in gradient(), f in 0.1..5.0f64) {
        let c = incidence_cosine(x, u, g, f);
        prop_assert!(c > 0.0 && c <= 1.0);
        // cos = 1 / sqrt(W + 1) with p = grad ln u.
        let w = w_term(x, [g[0] / u, g[1] / u], f);
        prop_assert!((c - 1.0 / (w + 1.0).sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn w_is_bracketed(x in point(), p in gradient(), f in 0.2..3.0f64) {
        let rig = CameraRig::square(f, 0.5, 5).unwrap();
        let w = w_term(x, p, f);
        let p2 = p[0] * p[0] + p[1] * p[1];
        prop_assert!(f * f * p2 <= w * (1.0 + 1e-12));
        prop_assert!(w <= rig.w_upper_constant() * p2 * (1.0 + 1e-12));
    }

    #[test]
    fn profile_is_increasing_and_bounded_slope(m in model_strategy(), r in 0.0..1e4f64, dr in 1e-6..10.0f64) {
        prop_assume!(m.is_monotone());
        prop_assert!(m.f_value(r + dr) > m.f_value(r));
        let d = m.f_derivative(r);
        prop_assert!(d > 0.0);
        prop_assert!(d * (r + 1.0).sqrt() <= m.derivative_bound() * (1.0 + 1e-12));
    }

    #[test]
    fn profile_inverse(m in model_strategy(), r in 0.0..100.0f64) {
        prop_assume!(m.is_monotone());
        if let Some(back) = m.f_inverse(m.f_value(r)) {
            prop_assert!((back - r).abs() <= 1e-9 * (1.0 + r));
        }
    }

    #[test]
    fn hamiltonian_strictly_increasing_in_r(m in model_strategy(), x in point(), p in gradient(), a in -3.0..3.0f64, d in 1e-3..3.0f64, eff in 0.01..2.0f64) {
        let lo = hamiltonian_eff(&m, 1.0, x, a, p, eff);
        let hi = hamiltonian_eff(&m, 1.0, x, a + d, p, eff);
        prop_assert!(hi - lo >= 2.0 * (-2.0 * (a + d)).exp() * d * (1.0 - 1e-9));
    }

    #[test]
    fn scheme_is_monotone(m in model_strategy(), x in point(), v in prop::array::uniform5(-1.0..1.0f64), k in 1usize..5, bump in 0.0..0.5f64, eff in 0.01..1.5f64) {
        prop_assume!(m.is_monotone());
        let rig = CameraRig::square(1.0, 0.5, 33).unwrap();
        let h = [rig.hx(), rig.hy()];
        let sigma = psfs::solver::auto_sigma(&m, &rig, 1.5);
        let eval = |v: [f64; 5]| {
            let s = Stencil { center: v[0], west: v[1], east: v[2], south: v[3], north: v[4] };
            let (pm, pp) = s.one_sided(h);
            numerical_hamiltonian(&m, 1.0, x, eff, v[0], pm, pp, sigma)
        };
        let mut raised = v;
        raised[k] += bump;
        prop_assert!(eval(raised) <= eval(v) + 1e-12 * (1.0 + eval(v).abs()));
        // The explicit update is nondecreasing in the centre value.
        let tau = psfs::solver::stable_time_step(1.0, sigma, h, -1.5);
        let mut up = v;
        up[0] += bump;
        prop_assert!(up[0] - tau * eval(up) >= v[0] - tau * eval(v) - 1e-12);
    }

    #[test]
    fn constant_is_a_supersolution(x in point(), xi in gradient(), delta in 1e-4..1.0f64, extra in 0.0..1.0f64, ka in 0.0..0.3f64, alpha in 1u32..5) {
        let ph = ReflectanceModel::phong(ka, 0.5 * (1.0 - ka), 0.5 * (1.0 - ka), alpha).unwrap();
        for m in [ReflectanceModel::lambertian(), ph] {
            let level = state_constraint_constant(&m, delta, 1.0).unwrap();
            prop_assert!(hamiltonian_eff(&m, 1.0, x, level, xi, delta + extra) >= -1e-12);
        }
    }

    #[test]
    fn rendered_dome_satisfies_the_equation(m in model_strategy(), u0 in 0.5..3.0f64, a in -0.3..0.3f64, w in 0.2..1.0f64) {
        prop_assume!(u0 - a.abs() > 0.1);
        let rig = CameraRig::square(1.0, 0.5, 9).unwrap();
        let s = AnalyticSurface::from_name("dome", SurfaceParams { u0, amplitude: a, width: w }).unwrap();
        let hf = s.height_field(&rig).unwrap();
        let img = render(&m, &hf, None).unwrap();
        let eff = img.effective_intensity(&m);
        for j in 0..9 {
            for i in 0..9 {
                let x = rig.node(i, j);
                let u = s.height(x);
                let g = s.gradient(x);
                let h = hamiltonian_eff(&m, 1.0, x, u.ln(), [g[0] / u, g[1] / u], eff.at(i, j));
                prop_assert!(h.abs() <= 1e-10 * (1.0 + 1.0 / (u * u)));
            }
        }
    }

    #[test]
    fn grid_text_round_trip_is_exact(values in prop::collection::vec(-1e6..1e6f64, 12)) {
        let rig = CameraRig::new(1.0, Domain::new(-1.0, 2.0, 0.0, 0.5), 4, 3).unwrap();
        let field = ScalarField::from_vec(4, 3, values).unwrap();
        let (_, back) = parse_grid(&format_grid(&rig, &field).unwrap(), 1.0).unwrap();
        prop_assert_eq!(back, field);
    }

    #[test]
    fn pgm_round_trip_within_half_a_level(values in prop::collection::vec(0.0..=1.0f64, 20)) {
        let field = ScalarField::from_vec(5, 4, values).unwrap();
        let back = decode_pgm(&encode_pgm(&field)).unwrap();
        prop_assert!(back.max_abs_diff(&field) <= 0.5 / 65535.0 + 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn constant_images_are_recovered(v0 in -0.5..0.8f64, start in -1.0..1.0f64) {
        let rig = CameraRig::square(1.0, 0.5, 9).unwrap();
        let m = ReflectanceModel::lambertian();
        let img = RenderedImage {
            rig,
            intensity: ScalarField::constant(&rig, (-2.0 * v0).exp()),
            model: m,
            ambient: None,
            normalization: 1.0,
        };
        let cfg = SolverConfig { init: Some(psfs::solver::Initialization::Constant(start)), ..Default::default() };
        let sol = solve(&m, &img, &BoundaryCondition::DirichletStrong(ScalarField::constant(&rig, v0)), &cfg).unwrap();
        prop_assert!(sol.report.converged);
        prop_assert!(sol.v.values().iter().all(|v| (v - v0).abs() <= 1e-8));
    }

    #[test]
    fn ordered_data_give_ordered_solutions(m in model_strategy(), shift in 0.01..0.3f64) {
        prop_assume!(m.is_monotone());
        let rig = CameraRig::square(1.0, 0.5, 13).unwrap();
        let hf = AnalyticSurface::from_name("ridge", SurfaceParams::default()).unwrap().height_field(&rig).unwrap();
        let img = render(&m, &hf, None).unwrap();
        let g = hf.log_heights();
        let a = solve(&m, &img, &BoundaryCondition::DirichletStrong(g.clone()), &SolverConfig::default()).unwrap();
        let b = solve(&m, &img, &BoundaryCondition::DirichletStrong(g.map(|v| v + shift)), &SolverConfig::default()).unwrap();
        for (x, y) in a.v.values().iter().zip(b.v.values()) {
            prop_assert!(x <= &(y + 1e-9));
        }
    }
}
