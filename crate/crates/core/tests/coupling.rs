use hydrolim::graphical::{apply_event, couple, generate_events, CurrentTracker, Evolution, Observer};
use hydrolim::harness::sample_initial_state;
use hydrolim::lattice::leq;
use hydrolim::models::JumpKernel;
use hydrolim::{Environment, Model, PiecewiseConstantProfile};
use proptest::prelude::*;

fn models() -> Vec<Model> {
    vec![
        Model::tasep(),
        Model::kstep_exclusion(2, JumpKernel::table(&[(1, 0.7), (-1, 0.3)]).unwrap()).unwrap(),
        Model::misanthrope(
            JumpKernel::table(&[(1, 0.5), (2, 0.2), (-1, 0.3)]).unwrap(),
            hydrolim::models::RateTable::linear(2, 1.0),
        )
        .unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Initial states sampled at ordered densities from one seed stay ordered
    /// under the shared stream, at every recorded time.
    #[test]
    fn ordered_densities_give_ordered_trajectories(
        which in 0usize..3,
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
        c in 0.0f64..1.0,
        seed in 0u64..1000,
    ) {
        let models = models();
        let model = &models[which];
        let k = model.cap() as f64;
        let (lo_d, hi_d) = (a.min(b) * k, a.max(b) * k);
        let (n, lo, len) = (40u64, -60i64, 120usize);
        let r = model.locality_radius();
        let u = PiecewiseConstantProfile::from_steps(&[-0.5, 0.5], &[lo_d, c * lo_d, lo_d]).unwrap();
        let v = PiecewiseConstantProfile::from_steps(&[-0.5, 0.5], &[hi_d, c * hi_d + (1.0 - c) * hi_d, hi_d]).unwrap();
        let eta = sample_initial_state(&u, n, lo, len, model.cap(), seed).unwrap();
        let xi = sample_initial_state(&v, n, lo, len, model.cap(), seed).unwrap();
        prop_assert!(eta.occupancies().iter().zip(xi.occupancies()).all(|(p, q)| p <= q));
        let env = Environment::homogeneous(lo - r, len + 2 * r as usize);
        let fam = model.bind(&env).unwrap();
        let stream = generate_events(fam, lo - r, len + 2 * r as usize, 20.0, seed).unwrap();
        let (mut x, mut y) = (eta, xi);
        let mut it = stream.iter().peekable();
        for step in 1..=4 {
            let t = 5.0 * step as f64;
            while let Some(ev) = it.next_if(|e| e.t <= t) {
                apply_event(&fam, &mut x, &ev);
                apply_event(&fam, &mut y, &ev);
            }
            prop_assert!(x.occupancies().iter().zip(y.occupancies()).all(|(p, q)| p <= q), "unordered at t={}", t);
        }
    }

    /// φ^w − φ^v equals the number of particles strictly between the observers.
    #[test]
    fn bookkeeping_identity(v in -1.5f64..1.5, w in -1.5f64..1.5, seed in 0u64..1000) {
        let (v, w) = (v.min(w), v.max(w));
        let model = Model::kstep_exclusion(2, JumpKernel::table(&[(1, 0.8), (-1, 0.2)]).unwrap()).unwrap();
        let (lo, len) = (-150i64, 300usize);
        let env = Environment::homogeneous(lo - 2, len + 4);
        let fam = model.bind(&env).unwrap();
        let u0 = PiecewiseConstantProfile::riemann(0.7, 0.2, 0.0);
        let eta = sample_initial_state(&u0, 1, lo, len, 1, seed).unwrap();
        let stream = generate_events(fam, lo - 2, len + 4, 40.0, seed).unwrap();
        let mut evo = Evolution::new(eta, &stream);
        let mut tv = CurrentTracker::new(Observer::Speed(v), None);
        let mut tw = CurrentTracker::new(Observer::Speed(w), None);
        // the identity compares with the initial occupation between the observers, both at the origin
        while let Some(te) = evo.peek_time() {
            tv.move_to(te, evo.config());
            tw.move_to(te, evo.config());
            if let Some((_, Some(j))) = evo.step() {
                tv.jump(j);
                tw.jump(j);
            }
        }
        tv.move_to(40.0, evo.config());
        tw.move_to(40.0, evo.config());
        let (a, b) = (tv.record(), tw.record());
        let between: i64 = ((a.position + 1)..=b.position).map(|y| evo.config().get(y).unwrap() as i64).sum();
        prop_assert_eq!(a.net() - b.net(), between);
    }
}

#[test]
fn coupled_torus_runs_keep_order_and_mass() {
    for model in models() {
        let env = Environment::homogeneous(0, 50);
        let fam = model.bind(&env).unwrap();
        let k = model.cap();
        let hi = hydrolim::Configuration::new(0, (0..50).map(|i| (i % (k as usize + 1)) as u32).collect(), k, hydrolim::Boundary::Periodic).unwrap();
        let lo = hydrolim::Configuration::new(0, hi.occupancies().iter().map(|&n| n / 2).collect(), k, hydrolim::Boundary::Periodic).unwrap();
        let stream = generate_events(fam, 0, 50, 30.0, 8).unwrap();
        let c = couple(&[lo.clone(), hi.clone()], &stream, 30.0).unwrap();
        assert_eq!(c.order_violations, 0);
        assert!(leq(&c.configs[0], &c.configs[1]).unwrap());
        assert_eq!(c.configs[0].total(), lo.total());
        assert_eq!(c.configs[1].total(), hi.total());
    }
}
