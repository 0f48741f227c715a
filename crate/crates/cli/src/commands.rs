use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use hydrolim::flux_id::{analytic_flux, flux_table, write_estimates, FluxPoint};
use hydrolim::graphical::{
    couple, generate_events, write_currents, write_snapshots, CurrentRecord, CurrentTracker, Evolution,
};
use hydrolim::harness::{cauchy_experiment, riemann_experiment, sample_initial_state, ConvergenceReport, ExperimentPlan};
use hydrolim::lattice::leq;
use hydrolim::models::{check_monotone, MonotoneReport};
use hydrolim::scl::{oleinik_check, rh_speed, riemann_solve, CauchyScheme};
use hydrolim::{Boundary, Configuration, FluxFunction, PiecewiseConstantProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{load_zoo, CellFilter, FluxConfig, SimulateConfig, VerifyConfig};

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    let p = out.join(name);
    Ok(BufWriter::new(
        File::create(&p).with_context(|| format!("creating {}", p.display()))?,
    ))
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let p = out.join(name);
    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
}

pub fn simulate(cfg: &SimulateConfig, out: &Path) -> Result<bool> {
    let model = cfg.model.build()?;
    let r = model.locality_radius();
    let (lo, len) = (cfg.lattice.lo, cfg.lattice.len);
    // open windows need ghost sites for the transformations near the edges
    let (slo, slen) = if cfg.lattice.periodic {
        (lo, len)
    } else {
        (lo - r, len + 2 * r as usize)
    };
    let env = cfg.model.environment(&model, slo, slen, cfg.env_seed)?;
    let family = model.bind(&env)?;
    let u0 = cfg.initial.profile()?;
    let mut eta0 = sample_initial_state(&u0, cfg.scale, lo, len, model.cap(), cfg.seed)?;
    if cfg.lattice.periodic {
        eta0 = Configuration::new(lo, eta0.occupancies().to_vec(), model.cap(), Boundary::Periodic)?;
    }
    if !(cfg.snapshot_every > 0.0) {
        anyhow::bail!(crate::config::ConfigError("snapshot_every must be positive".into()));
    }
    let stream = generate_events(family, slo, slen, cfg.time, cfg.seed)?;
    let period = cfg.lattice.periodic.then_some(len as i64);
    let mut trackers: Vec<CurrentTracker> = cfg.observers.iter().map(|&o| CurrentTracker::new(o, period)).collect();
    let initial_total = eta0.total();
    let mut evo = Evolution::new(eta0.clone(), &stream);
    let mut snapshots = vec![(0.0, eta0)];
    let mut currents: Vec<(f64, CurrentRecord)> = trackers.iter().map(|tr| (0.0, tr.record())).collect();
    let mut jumps = 0u64;
    let steps = (cfg.time / cfg.snapshot_every + 1e-9).floor() as u64;
    let mut marks: Vec<f64> = (1..=steps).map(|k| k as f64 * cfg.snapshot_every).collect();
    if marks.last().is_none_or(|&t| t < cfg.time) {
        marks.push(cfg.time);
    }
    for t in marks {
        while let Some(te) = evo.peek_time().filter(|&te| te <= t) {
            for tr in trackers.iter_mut() {
                tr.move_to(te, evo.config());
            }
            if let Some((_, Some(j))) = evo.step() {
                jumps += 1;
                for tr in trackers.iter_mut() {
                    tr.jump(j);
                }
            }
        }
        for tr in trackers.iter_mut() {
            tr.move_to(t, evo.config());
            currents.push((t, tr.record()));
        }
        snapshots.push((t, evo.config().clone()));
    }
    write_snapshots(create(out, "snapshots.csv")?, &snapshots)?;
    write_currents(create(out, "currents.csv")?, &currents)?;
    let final_total = evo.config().total();
    let conserved = !cfg.lattice.periodic || final_total == initial_total;
    let summary = json!({
        "command": "simulate",
        "model": model.name(),
        "sites": len,
        "periodic": cfg.lattice.periodic,
        "time": cfg.time,
        "seed": cfg.seed,
        "events": evo.events_applied(),
        "jumps": jumps,
        "initial_particles": initial_total,
        "final_particles": final_total,
        "snapshots": snapshots.len(),
        "status": if conserved { "ok" } else { "fail" },
    });
    write_json(out, "summary.json", &summary)?;
    println!(
        "simulate: {} on {} sites, {} events, {} jumps, particles {} -> {}",
        model.name(),
        len,
        evo.events_applied(),
        jumps,
        initial_total,
        final_total
    );
    Ok(conserved)
}

/// Restricts a plan to the filtered cells and applies a seed override.
pub fn adjust_plan(plan: &mut ExperimentPlan, filter: &CellFilter, seed: Option<u64>) -> Result<()> {
    if let Some(s) = seed {
        let n = plan.seeds.len() as u64;
        plan.seeds = (s..s + n).collect();
    }
    if let Some(keep) = &filter.scales {
        plan.scales.retain(|n| keep.contains(n));
    }
    if let Some(keep) = &filter.seeds {
        plan.seeds.retain(|n| keep.contains(n));
    }
    if plan.scales.is_empty() || plan.seeds.is_empty() {
        anyhow::bail!(crate::config::ConfigError("cell filter selects no cells".into()));
    }
    Ok(())
}

pub fn experiment(plan: &ExperimentPlan, cauchy: bool, out: &Path) -> Result<bool> {
    let report: ConvergenceReport = if cauchy {
        cauchy_experiment(plan)?
    } else {
        riemann_experiment(plan)?
    };
    report.write_csv(create(out, "cells.csv")?)?;
    if !plan.speeds.is_empty() {
        report.write_currents_csv(create(out, "currents.csv")?)?;
    }
    let passed = report.passed(plan.threshold);
    let summary = json!({
        "command": report.experiment,
        "threshold": plan.threshold,
        "strictly_decreasing": report.strictly_decreasing(),
        "summary": report.summary,
        "status": if passed { "pass" } else { "fail" },
    });
    write_json(out, "summary.json", &summary)?;
    for s in &report.summary {
        println!(
            "{}: N={} t={} median Δ={:.5} mean={:.5} max={:.5} ({} seeds)",
            report.experiment, s.scale, s.time, s.median, s.mean, s.max, s.cells
        );
    }
    println!("{}: {}", report.experiment, if passed { "pass" } else { "fail" });
    Ok(passed)
}

#[derive(Serialize)]
struct PointCheck<'a> {
    #[serde(flatten)]
    point: &'a FluxPoint,
    analytic: Option<f64>,
    within_tolerance: Option<bool>,
    j1_j2_agree: bool,
}

pub fn flux(cfg: &FluxConfig, out: &Path) -> Result<bool> {
    let model = cfg.model.build()?;
    let env = cfg.model.environment(&model, 0, cfg.mc.sites, cfg.env_seed)?;
    let table = flux_table(&model, &env, &cfg.grid, &cfg.mc, cfg.rel_threshold)?;
    let exact: Option<FluxFunction> = analytic_flux(&model, &env).ok();
    write_estimates(create(out, "estimates.csv")?, &table.points)?;
    let mut w = csv::Writer::from_writer(create(out, "points.csv")?);
    w.write_record([
        "rho", "rho_effective", "G_hat", "stderr", "j1", "j1_stderr", "j2", "j2_stderr", "analytic", "events",
        "conservation_violations",
    ])?;
    let mut checks = Vec::new();
    let mut passed = true;
    for p in &table.points {
        let g = exact.as_ref().map(|f| f.eval(p.rho_effective));
        let within = g.map(|g| (p.g - g).abs() <= (3.0 * p.stderr).max(cfg.tolerance));
        let agree = (p.j1 - p.j2).abs() <= 3.0 * (p.j1_stderr.powi(2) + p.j2_stderr.powi(2)).sqrt();
        passed &= within.unwrap_or(true) && agree && p.conservation_violations == 0;
        w.write_record([
            format!("{:?}", p.rho),
            format!("{:?}", p.rho_effective),
            format!("{:?}", p.g),
            format!("{:?}", p.stderr),
            format!("{:?}", p.j1),
            format!("{:?}", p.j1_stderr),
            format!("{:?}", p.j2),
            format!("{:?}", p.j2_stderr),
            g.map(|g| format!("{g:?}")).unwrap_or_default(),
            p.events.to_string(),
            p.conservation_violations.to_string(),
        ])?;
        println!(
            "flux: rho={:.3} G={:.5} ± {:.5}{}",
            p.rho_effective,
            p.g,
            p.stderr,
            g.map(|g| format!(" (closed form {g:.5})")).unwrap_or_default()
        );
        checks.push(PointCheck {
            point: p,
            analytic: g,
            within_tolerance: within,
            j1_j2_agree: agree,
        });
    }
    w.flush()?;
    let summary = json!({
        "command": "flux",
        "model": model.name(),
        "closed_form": exact.is_some(),
        "flagged": table.flagged,
        "lipschitz_bound": table.lipschitz_bound,
        "points": checks,
        "table": table.flux.to_spec(),
        "status": if passed { "pass" } else { "fail" },
    });
    write_json(out, "summary.json", &summary)?;
    println!("flux: {}", if passed { "pass" } else { "fail" });
    Ok(passed)
}

#[derive(Debug, Serialize)]
struct Check {
    check: String,
    subject: String,
    passed: bool,
    detail: String,
}

fn random_ordered_pair(cap: u32, sites: usize, rng: &mut ChaCha8Rng) -> Result<(Configuration, Configuration)> {
    let xi: Vec<u32> = (0..sites).map(|_| rng.random_range(0..=cap)).collect();
    let eta: Vec<u32> = xi.iter().map(|&n| rng.random_range(0..=n)).collect();
    Ok((
        Configuration::new(0, eta, cap, Boundary::Periodic)?,
        Configuration::new(0, xi, cap, Boundary::Periodic)?,
    ))
}

/// Random flux u(1−u)(a + bu + cu²) with c possibly zero (cubic).
pub fn random_polynomial_flux(rng: &mut ChaCha8Rng) -> FluxFunction {
    let a = rng.random_range(-1.0..1.0);
    let b = rng.random_range(-3.0..3.0);
    let c = if rng.random::<bool>() { 0.0 } else { rng.random_range(-3.0..3.0) };
    // u(1-u)(a + b u + c u^2) expanded
    let coeffs = vec![0.0, a, b - a, c - b, -c];
    FluxFunction::polynomial(coeffs, 1.0).expect("valid polynomial flux")
}

fn admissibility_sweep(fluxes: usize, seed: u64) -> Result<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xad31);
    let (mut checked, mut bad) = (0, 0);
    for _ in 0..fluxes {
        let g = random_polynomial_flux(&mut rng);
        for _ in 0..10 {
            let (l, r) = (rng.random::<f64>(), rng.random::<f64>());
            for (s, a, b) in riemann_solve(&g, l, r).discontinuities() {
                checked += 1;
                let rh = rh_speed(&g, a, b)?;
                if !oleinik_check(&g, a, b, 1e-9) || (rh - s).abs() > 1e-9 {
                    bad += 1;
                }
            }
        }
        let v = g.lipschitz().max(1e-6);
        let scheme = CauchyScheme::new(&g, 0.05, 0.9 / (2.0 * v))?;
        let breaks = [-0.5, 0.0, 0.5];
        let values: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
        let u0 = PiecewiseConstantProfile::from_steps(&breaks, &values)?;
        let tr = scheme.solve(&u0, 0.5)?;
        let gr = scheme.interpolated_flux();
        for f in &tr.fronts {
            checked += 1;
            let rh = rh_speed(&gr, f.left, f.right)?;
            if !oleinik_check(&gr, f.left, f.right, 1e-9) || (rh - f.speed).abs() > 1e-9 {
                bad += 1;
            }
        }
    }
    Ok((checked, bad))
}

pub fn verify(cfg: &VerifyConfig, config_path: &Path, out: &Path) -> Result<bool> {
    let zoo = load_zoo(config_path, &cfg.models)?;
    let broken = load_zoo(config_path, &cfg.counterexamples)?;
    let models = zoo
        .iter()
        .map(|e| e.spec.build().with_context(|| e.path.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut checks = Vec::new();
    for (e, model) in zoo.iter().zip(&models) {
        let env = e.spec.environment(model, 0, cfg.window, cfg.seed)?;
        let fam = model.bind(&env)?;
        let rep = check_monotone(&fam, cfg.window, cfg.aux_samples, cfg.seed, cfg.budget)?;
        checks.push(Check {
            check: "monotone".into(),
            subject: e.path.clone(),
            passed: rep.is_certificate() && rep.coverage() >= 1.0,
            detail: match rep {
                MonotoneReport::Certificate { pairs, coverage, .. } => {
                    format!("{pairs} ordered pairs, coverage {coverage}")
                }
                MonotoneReport::Counterexample { x, eta, xi, .. } => {
                    format!("counterexample at x={x}: {eta:?} <= {xi:?}")
                }
            },
        });

        let env = e.spec.environment(model, 0, cfg.sites, cfg.seed)?;
        let fam = model.bind(&env)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0de);
        let (mut violations, mut final_disorder, mut events) = (0u64, 0usize, 0u64);
        for i in 0..cfg.pairs {
            let (eta, xi) = random_ordered_pair(model.cap(), cfg.sites, &mut rng)?;
            let stream = generate_events(fam, 0, cfg.sites, cfg.time, cfg.seed.wrapping_add(i as u64))?;
            let c = couple(&[eta, xi], &stream, cfg.time)?;
            violations += c.order_violations;
            events += c.events;
            if !leq(&c.configs[0], &c.configs[1])? {
                final_disorder += 1;
            }
        }
        checks.push(Check {
            check: "coupling".into(),
            subject: e.path.clone(),
            passed: violations == 0 && final_disorder == 0,
            detail: format!(
                "{} pairs, {events} events, {violations} order violations, {final_disorder} unordered at the end",
                cfg.pairs
            ),
        });

        let (eta, _) = random_ordered_pair(model.cap(), cfg.sites, &mut rng)?;
        let total = eta.total();
        let stream = generate_events(fam, 0, cfg.sites, cfg.time, cfg.seed ^ 0xfeed)?;
        let mut evo = Evolution::new(eta, &stream);
        let mut broken_events = 0u64;
        while evo.step().is_some() {
            if evo.config().total() != total {
                broken_events += 1;
            }
        }
        checks.push(Check {
            check: "conservation".into(),
            subject: e.path.clone(),
            passed: broken_events == 0,
            detail: format!("{} events, {broken_events} changed the particle count", evo.events_applied()),
        });
    }
    for e in &broken {
        let model = e.spec.build_unchecked().with_context(|| e.path.clone())?;
        let env = e.spec.environment(&model, 0, cfg.window, cfg.seed)?;
        let fam = model.bind(&env)?;
        let rep = check_monotone(&fam, cfg.window, cfg.aux_samples, cfg.seed, cfg.budget)?;
        checks.push(Check {
            check: "counterexample".into(),
            subject: e.path.clone(),
            passed: !rep.is_certificate(),
            detail: match rep {
                MonotoneReport::Counterexample {
                    x,
                    eta,
                    xi,
                    eta_after,
                    xi_after,
                    ..
                } => format!("x={x}: {eta:?} <= {xi:?} but {eta_after:?} vs {xi_after:?}"),
                MonotoneReport::Certificate { .. } => "no counterexample found".into(),
            },
        });
    }
    let (checked, bad) = admissibility_sweep(cfg.fluxes, cfg.seed)?;
    checks.push(Check {
        check: "admissibility".into(),
        subject: format!("{} random fluxes", cfg.fluxes),
        passed: bad == 0,
        detail: format!("{checked} discontinuities, {bad} failed Oleinik or Rankine-Hugoniot"),
    });

    let mut w = csv::Writer::from_writer(create(out, "checks.csv")?);
    w.write_record(["check", "subject", "status", "detail"])?;
    for c in &checks {
        w.write_record([c.check.as_str(), c.subject.as_str(), if c.passed { "pass" } else { "fail" }, c.detail.as_str()])?;
        println!(
            "verify: {:<14} {:<40} {}  {}",
            c.check,
            c.subject,
            if c.passed { "pass" } else { "FAIL" },
            c.detail
        );
    }
    w.flush()?;
    let passed = checks.iter().all(|c| c.passed);
    write_json(
        out,
        "summary.json",
        &json!({ "command": "verify", "checks": checks, "status": if passed { "pass" } else { "fail" } }),
    )?;
    Ok(passed)
}
