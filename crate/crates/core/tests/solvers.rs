use hydrolim::lattice::{delta_distance, total_variation};
use hydrolim::scl::{cauchy_solve, riemann_current, riemann_solve, CauchyScheme};
use hydrolim::{FluxFunction, PiecewiseConstantProfile};
use proptest::prelude::*;

fn steps(values: &[f64]) -> PiecewiseConstantProfile {
    let n = values.len();
    let breaks: Vec<f64> = (0..=n).map(|i| -0.5 + i as f64 / n as f64).collect();
    let mut v = vec![0.0];
    v.extend_from_slice(values);
    v.push(0.0);
    PiecewiseConstantProfile::from_steps(&breaks, &v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Entropy solutions are L¹-contractive in the Δ sense, up to the
    /// projection onto the solver's density levels.
    #[test]
    fn delta_is_almost_nonincreasing(a in prop::collection::vec(0.0f64..1.0, 1..5), b in prop::collection::vec(0.0f64..1.0, 1..5)) {
        let g = FluxFunction::two_step();
        let (u0, v0) = (steps(&a), steps(&b));
        let dx = 0.01;
        let scheme = CauchyScheme::new(&g, dx, 0.9 / (2.0 * g.lipschitz())).unwrap();
        let u = scheme.solve(&u0, 0.6).unwrap();
        let v = scheme.solve(&v0, 0.6).unwrap();
        let d0 = delta_distance(&u.initial, &v.initial).unwrap();
        for (x, y) in u.profiles.iter().zip(&v.profiles) {
            prop_assert!(delta_distance(x, y).unwrap() <= d0 + 1e-9);
        }
        prop_assert!(u.approximation_error <= dx);
    }

    /// Mass is conserved and total variation does not grow.
    #[test]
    fn mass_and_variation(a in prop::collection::vec(0.0f64..1.0, 1..6)) {
        let g = FluxFunction::simple_exclusion(1.0);
        let tr = cauchy_solve(&g, &steps(&a), 1.0, 0.02, 0.45).unwrap();
        let m0 = tr.initial.mass().unwrap();
        for w in tr.profiles.windows(2) {
            prop_assert!((w[1].mass().unwrap() - m0).abs() < 1e-9);
            prop_assert!(total_variation(&w[1]) <= total_variation(&w[0]) + 1e-12);
        }
    }

    /// The fan's current at speed v is the envelope value G_c(h_c(v)) − v h_c(v).
    #[test]
    fn fan_current_matches_variational_formula(l in 0.0f64..1.0, r in 0.0f64..1.0, v in -2.0f64..2.0) {
        let g = FluxFunction::two_step();
        let fan = riemann_solve(&g, l, r);
        let h = fan.density(v);
        prop_assert!((riemann_current(&g, l, r, v) - (g.eval(h) - v * h)).abs() < 1e-6);
    }
}

#[test]
fn burgers_shock_and_fan() {
    let g = FluxFunction::simple_exclusion(1.0);
    // λ < ρ: shock at speed 1 − λ − ρ
    let shock = riemann_solve(&g, 0.2, 0.6);
    let d = shock.discontinuities();
    assert_eq!(d.len(), 1);
    assert!((d[0].0 - 0.2).abs() < 1e-12);
    // λ > ρ: rarefaction with h(v) = (1 − v)/2 inside the fan
    let fan = riemann_solve(&g, 1.0, 0.0);
    assert!(fan.discontinuities().is_empty());
    for v in [-0.8, -0.2, 0.0, 0.3, 0.9] {
        assert!((fan.density(v) - (1.0 - v) / 2.0).abs() < 1e-6);
    }
}
