//! Microscopic flux observables, equilibrium Monte-Carlo flux estimation and
//! closed-form macroscopic fluxes.

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphical::{generate_events, Evolution};
use crate::lattice::{fmt_f64, Boundary, Configuration, Environment, EnvironmentKind};
use crate::models::{Dynamics, Family, Model};
use crate::scl::{FluxFunction, Polynomial};

/// j₂(η): expected displacement rate of jumps out of site `x0`
/// (the generator at `x0` applied to Σ y·η(y)).
pub fn micro_flux_j2(family: &Family<'_>, x0: i64, occ: impl Fn(i64) -> u32) -> f64 {
    family
        .jump_rates(x0, &occ)
        .into_iter()
        .map(|(y, r)| (y - x0) as f64 * r)
        .sum()
}

/// j₁(η): net rate of particle crossings of the bond between `x0` and `x0 + 1`.
pub fn micro_flux_j1(family: &Family<'_>, x0: i64, occ: impl Fn(i64) -> u32) -> f64 {
    let r = family.locality_radius();
    let mut total = 0.0;
    for s in (x0 - r + 1)..=(x0 + r) {
        for (t, rate) in family.jump_rates(s, &occ) {
            if s <= x0 && x0 < t {
                total += rate;
            } else if t <= x0 && x0 < s {
                total -= rate;
            }
        }
    }
    total
}

/// j₁ − τ_x j₁: the generator applied to Σ_{y=1}^{x} η(y).
pub fn micro_flux_j1_increment(family: &Family<'_>, x: i64, occ: impl Fn(i64) -> u32) -> f64 {
    let r = family.locality_radius();
    let inside = |y: i64| (1..=x).contains(&y);
    let mut total = 0.0;
    for s in (1 - r)..=(x + r) {
        for (t, rate) in family.jump_rates(s, &occ) {
            total += rate * (inside(t) as i32 - inside(s) as i32) as f64;
        }
    }
    total
}

/// How a flux value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Analytic,
    /// Started from a uniformly random configuration at fixed particle
    /// number (conditioned product measure).
    EquilibriumMc,
    /// Started from an evenly spread deterministic configuration.
    BurninMc,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Analytic => "analytic",
            Method::EquilibriumMc => "equilibrium_mc",
            Method::BurninMc => "burnin_mc",
        }
    }
}

/// Monte-Carlo run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McParams {
    /// Torus length L.
    pub sites: usize,
    /// Measurement time T.
    pub time: f64,
    /// Burn-in time; defaults to max(10, T/10).
    #[serde(default)]
    pub burn_in: Option<f64>,
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Number of evenly spaced sites at which j₁/j₂ are time-averaged.
    #[serde(default = "default_origins")]
    pub origins: usize,
}

fn default_batches() -> usize {
    20
}

fn default_origins() -> usize {
    16
}

impl McParams {
    pub fn new(sites: usize, time: f64, seeds: usize) -> Self {
        Self {
            sites,
            time,
            burn_in: None,
            seeds,
            base_seed: 0,
            batches: default_batches(),
            origins: default_origins(),
        }
    }

    pub fn burn_in(&self) -> f64 {
        self.burn_in.unwrap_or((self.time / 10.0).max(10.0))
    }
}

/// One estimated point of the flux.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxPoint {
    /// Requested density.
    pub rho: f64,
    /// Density actually simulated, ⌊ρL⌉/L.
    pub rho_effective: f64,
    pub particles: u64,
    pub g: f64,
    pub stderr: f64,
    /// Paired time averages of j₁ and j₂ at fixed origins.
    pub j1: f64,
    pub j1_stderr: f64,
    pub j2: f64,
    pub j2_stderr: f64,
    pub method: Method,
    pub sites: usize,
    pub time: f64,
    pub seeds: usize,
    /// Events after which the particle count differed from its initial value.
    pub conservation_violations: u64,
    pub events: u64,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

struct SeedRun {
    flux: Vec<f64>,
    j1: Vec<f64>,
    j2: Vec<f64>,
    violations: u64,
    events: u64,
}

fn initial_torus(cap: u32, sites: usize, particles: u64, seed: u64) -> Configuration {
    let mut occ = vec![0u32; sites];
    if cap == 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1417);
        for i in sample(&mut rng, sites, particles as usize) {
            occ[i] = 1;
        }
    } else {
        let (n, l) = (particles as u128, sites as u128);
        for (i, o) in occ.iter_mut().enumerate() {
            let i = i as u128;
            *o = (((i + 1) * n) / l - (i * n) / l) as u32;
        }
    }
    Configuration::new(0, occ, cap, Boundary::Periodic).expect("valid torus")
}

fn run_seed(family: &Family<'_>, params: &McParams, particles: u64, seed: u64) -> Result<SeedRun> {
    let l = params.sites;
    let li = l as i64;
    let burn = params.burn_in();
    let horizon = burn + params.time;
    let stream = generate_events(*family, 0, l, horizon, seed)?;
    let eta0 = initial_torus(family.cap(), l, particles, seed);
    let mut evo = Evolution::new(eta0, &stream);
    evo.advance(burn);

    let origins: Vec<i64> = (0..params.origins.max(1))
        .map(|i| (i * l / params.origins.max(1)) as i64)
        .collect();
    let reach = 2 * family.locality_radius() + 1;
    let eval = |eta: &Configuration, o: i64| {
        let occ = |y: i64| eta.get(y).expect("torus");
        (micro_flux_j1(family, o, occ), micro_flux_j2(family, o, occ))
    };
    let mut js: Vec<(f64, f64)> = origins.iter().map(|&o| eval(evo.config(), o)).collect();
    let batches = params.batches.max(1);
    let dt = params.time / batches as f64;
    let mut out = SeedRun {
        flux: Vec::with_capacity(batches),
        j1: Vec::with_capacity(batches),
        j2: Vec::with_capacity(batches),
        violations: 0,
        events: 0,
    };
    let near = |a: i64, b: i64| {
        let d = (a - b).rem_euclid(li);
        d.min(li - d) <= reach
    };
    for b in 0..batches {
        let start = burn + b as f64 * dt;
        let end = if b + 1 == batches { horizon } else { burn + (b + 1) as f64 * dt };
        let mut t_last = start;
        let mut disp = 0i64;
        let (mut a1, mut a2) = (0.0, 0.0);
        while let Some(te) = evo.peek_time().filter(|&te| te <= end) {
            let w = te - t_last;
            for &(v1, v2) in &js {
                a1 += v1 * w;
                a2 += v2 * w;
            }
            t_last = te;
            // snapshot the neighbourhood of the event site: every target lies
            // within the locality radius
            let x = evo.peek().expect("peeked").x;
            let radius = family.locality_radius();
            let before: Vec<u32> = ((x - radius)..=(x + radius))
                .map(|y| evo.config().get(y).expect("torus"))
                .collect();
            let (_, jump) = evo.step().expect("peeked");
            out.events += 1;
            if let Some(j) = jump {
                disp += j.to - j.from;
                let eta = evo.config();
                // exact per-event conservation over the touched neighbourhood
                // (sites are distinct unless the torus is shorter than 2R+1)
                if 2 * radius < li {
                    let after: i64 = ((x - radius)..=(x + radius)).map(|y| eta.get(y).unwrap() as i64).sum();
                    let prior: i64 = before.iter().map(|&n| n as i64).sum();
                    if after != prior {
                        out.violations += 1;
                    }
                }
                for (k, &o) in origins.iter().enumerate() {
                    if near(j.from, o) || near(j.to, o) {
                        js[k] = eval(eta, o);
                    }
                }
            }
        }
        let w = end - t_last;
        for &(v1, v2) in &js {
            a1 += v1 * w;
            a2 += v2 * w;
        }
        let span = end - start;
        out.flux.push(disp as f64 / (l as f64 * span));
        out.j1.push(a1 / (origins.len() as f64 * span));
        out.j2.push(a2 / (origins.len() as f64 * span));
        if evo.config().total() != particles {
            out.violations += 1;
        }
    }
    Ok(out)
}

/// Time-averaged flux at density ρ on a torus of `params.sites` sites.
pub fn equilibrium_flux_estimate(model: &Model, env: &Environment, rho: f64, params: &McParams) -> Result<FluxPoint> {
    let cap = model.cap();
    if !(0.0..=cap as f64).contains(&rho) {
        return Err(Error::InvalidArgument(format!("density {rho} outside [0, {cap}]")));
    }
    if params.sites == 0 || !(params.time > 0.0) || params.seeds == 0 {
        return Err(Error::InvalidArgument("flux estimation needs L > 0, T > 0 and a seed".into()));
    }
    if env.len() != params.sites || env.lo() != 0 {
        return Err(Error::InvalidEnvironment(format!(
            "environment must cover the torus [0, {})",
            params.sites
        )));
    }
    let family = model.bind(env)?;
    let particles = (rho * params.sites as f64).round() as u64;
    let method = if cap == 1 { Method::EquilibriumMc } else { Method::BurninMc };
    let mut point = FluxPoint {
        rho,
        rho_effective: particles as f64 / params.sites as f64,
        particles,
        g: 0.0,
        stderr: 0.0,
        j1: 0.0,
        j1_stderr: 0.0,
        j2: 0.0,
        j2_stderr: 0.0,
        method,
        sites: params.sites,
        time: params.time,
        seeds: params.seeds,
        conservation_violations: 0,
        events: 0,
    };
    if particles == 0 || particles == cap as u64 * params.sites as u64 {
        return Ok(point);
    }
    let runs: Vec<Result<SeedRun>> = (0..params.seeds as u64)
        .into_par_iter()
        .map(|s| run_seed(&family, params, particles, params.base_seed.wrapping_add(s)))
        .collect();
    let mut flux = Vec::new();
    let mut j1 = Vec::new();
    let mut j2 = Vec::new();
    for r in runs {
        let r = r?;
        flux.extend(r.flux);
        j1.extend(r.j1);
        j2.extend(r.j2);
        point.conservation_violations += r.violations;
        point.events += r.events;
    }
    (point.g, point.stderr) = mean_se(&flux);
    (point.j1, point.j1_stderr) = mean_se(&j1);
    (point.j2, point.j2_stderr) = mean_se(&j2);
    Ok(point)
}

/// Closed-form macroscopic flux for disorder-free models with explicit
/// product invariant measures.
pub fn analytic_flux(model: &Model, env: &Environment) -> Result<FluxFunction> {
    if !matches!(env.kind(), EnvironmentKind::None) {
        return Err(Error::FluxUnavailable(
            "disordered models have no closed-form flux; estimate it".into(),
        ));
    }
    match model.dynamics() {
        Dynamics::Misanthrope { kernel, rates } if model.cap() == 1 => {
            // Bernoulli product measures: G(u) = b(1,0)·Σ z p(z)·u(1−u)
            let gamma = rates.get(1, 0) * kernel.mean();
            Ok(FluxFunction::simple_exclusion(gamma))
        }
        Dynamics::KStepExclusion { k, .. } => {
            // u·Σ_paths p Σ_j z_j·u^{d_j}(1−u), d_j distinct sites before step j
            let mut g = Polynomial::new(vec![0.0]);
            let one_minus = Polynomial::new(vec![1.0, -1.0]);
            for &(steps, p) in model.walks() {
                let mut seen: Vec<i64> = Vec::new();
                for &z in &steps[..*k] {
                    if z == 0 {
                        break;
                    }
                    if !seen.contains(&z) {
                        let mut mono = vec![0.0; seen.len() + 2];
                        mono[seen.len() + 1] = p * z as f64;
                        g = g.add(&Polynomial::new(mono).mul(&one_minus));
                        seen.push(z);
                    }
                    // the walk only continues past occupied sites
                }
            }
            FluxFunction::polynomial(g.coeffs().to_vec(), 1.0)
        }
        Dynamics::Overtaking { beta, .. } => Ok(FluxFunction::overtaking(&beta.right, &beta.left)),
        _ => Err(Error::FluxUnavailable(format!(
            "{} model with K = {} has no explicit invariant measures",
            model.name(),
            model.cap()
        ))),
    }
}

/// Interpolated flux assembled from estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxTable {
    pub flux: FluxFunction,
    pub points: Vec<FluxPoint>,
    /// Grid densities whose relative error exceeded the threshold; the
    /// interpolation spans them.
    pub flagged: Vec<f64>,
    /// Max finite-difference slope plus the statistical margin.
    pub lipschitz_bound: f64,
}

/// Estimates G on `grid` and interpolates linearly. The endpoints 0 and K
/// are pinned to zero.
pub fn flux_table(
    model: &Model,
    env: &Environment,
    grid: &[f64],
    params: &McParams,
    rel_threshold: f64,
) -> Result<FluxTable> {
    let cap = model.cap() as f64;
    if grid.iter().any(|&r| !(0.0..=cap).contains(&r)) {
        return Err(Error::InvalidArgument(format!("grid must lie in [0, {cap}]")));
    }
    let mut g: Vec<f64> = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    let mut points = Vec::with_capacity(g.len());
    for &rho in &g {
        points.push(equilibrium_flux_estimate(model, env, rho, params)?);
    }
    let mut flagged = Vec::new();
    let mut table: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    for p in &points {
        if p.rho <= 0.0 || p.rho >= cap {
            continue;
        }
        if p.stderr > rel_threshold * p.g.abs() {
            flagged.push(p.rho);
        } else {
            table.push((p.rho, p.g));
        }
    }
    table.push((cap, 0.0));
    let flux = FluxFunction::table(&table)?;
    let min_gap = table.windows(2).map(|w| w[1].0 - w[0].0).fold(f64::INFINITY, f64::min);
    let max_se = points.iter().map(|p| p.stderr).fold(0.0, f64::max);
    let lipschitz_bound = flux.lipschitz() + 2.0 * max_se / min_gap;
    Ok(FluxTable {
        flux,
        points,
        flagged,
        lipschitz_bound,
    })
}

/// Writes `rho,G_hat,stderr,method` rows.
pub fn write_estimates<W: Write>(out: W, points: &[FluxPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rho", "G_hat", "stderr", "method"])?;
    for p in points {
        w.write_record([fmt_f64(p.rho), fmt_f64(p.g), fmt_f64(p.stderr), p.method.as_str().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads estimates written by [`write_estimates`] back as a flux table.
pub fn read_estimates<R: Read>(input: R) -> Result<FluxFunction> {
    let mut r = csv::Reader::from_reader(input);
    let mut pts = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| Error::Parse("short flux row".into()))?
                .parse::<f64>()
                .map_err(|e| Error::Parse(e.to_string()))
        };
        pts.push((parse(0)?, parse(1)?));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    FluxFunction::table(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::OvertakingRates;
    use crate::models::{JumpKernel, RateTable};

    fn occ_of(v: &[(i64, u32)]) -> impl Fn(i64) -> u32 + '_ {
        move |y| v.iter().find(|e| e.0 == y).map_or(0, |e| e.1)
    }

    #[test]
    fn j2_vanishes_on_empty_and_full() {
        let m = Model::tasep();
        let env = Environment::homogeneous(0, 1);
        let f = m.bind(&env).unwrap();
        assert_eq!(micro_flux_j2(&f, 0, |_| 0), 0.0);
        assert_eq!(micro_flux_j2(&f, 0, |_| 1), 0.0);
        assert_eq!(micro_flux_j1(&f, 0, |_| 1), 0.0);
        assert_eq!(micro_flux_j1_increment(&f, 3, |_| 0), 0.0);
    }

    #[test]
    fn overtaking_single_term() {
        let m = Model::overtaking(1, OvertakingRates { right: vec![1.0], left: vec![0.0] }).unwrap();
        let env = Environment::homogeneous(0, 1);
        let f = m.bind(&env).unwrap();
        let eta = [(0, 1)];
        assert_eq!(micro_flux_j2(&f, 0, occ_of(&eta)), 1.0);
    }

    #[test]
    fn j1_increment_nearest_neighbour() {
        let kernel = JumpKernel::table(&[(1, 0.7), (-1, 0.3)]).unwrap();
        let m = Model::simple_exclusion(kernel);
        let env = Environment::homogeneous(0, 1);
        let f = m.bind(&env).unwrap();
        // η = 1 at 0 and 2, empty at 1: in from 0 (0.7) and 2 (0.3), nothing out
        let eta = [(0, 1), (2, 1)];
        assert!((micro_flux_j1_increment(&f, 1, occ_of(&eta)) - 1.0).abs() < 1e-15);
        // particle at 1 only: out at total rate 1
        let eta = [(1, 1)];
        assert!((micro_flux_j1_increment(&f, 1, occ_of(&eta)) + 1.0).abs() < 1e-15);
        // telescoping: j1 − τ_x j1
        let eta = [(-1, 1), (0, 1), (2, 1), (3, 1), (5, 1)];
        let o = occ_of(&eta);
        for x in 1..6 {
            let d = micro_flux_j1(&f, 0, &o) - micro_flux_j1(&f, x, &o);
            assert!((d - micro_flux_j1_increment(&f, x, &o)).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_examples() {
        let env = Environment::homogeneous(0, 1);
        let ov = Model::overtaking(2, OvertakingRates { right: vec![1.0, 1.0], left: vec![0.0, 0.0] }).unwrap();
        let g = analytic_flux(&ov, &env).unwrap();
        for i in 0..=10 {
            let u = i as f64 / 10.0;
            assert!((g.eval(u) - (u + u * u - 2.0 * u * u * u)).abs() < 1e-12);
        }
        let two_step = Model::kstep_exclusion(2, JumpKernel::table(&[(1, 1.0)]).unwrap()).unwrap();
        let g = analytic_flux(&two_step, &env).unwrap();
        for i in 0..=10 {
            let u = i as f64 / 10.0;
            assert!((g.eval(u) - (u + u * u - 2.0 * u * u * u)).abs() < 1e-12);
        }
        let ase = Model::simple_exclusion(JumpKernel::table(&[(1, 0.8), (-1, 0.2)]).unwrap());
        let g = analytic_flux(&ase, &env).unwrap();
        assert!((g.eval(0.5) - 0.6 * 0.25).abs() < 1e-12);
        let kex = Model::misanthrope(JumpKernel::table(&[(1, 1.0)]).unwrap(), RateTable::k_exclusion(2, 1.0)).unwrap();
        assert!(matches!(analytic_flux(&kex, &env), Err(Error::FluxUnavailable(_))));
    }

    #[test]
    fn zero_density_is_exact() {
        let m = Model::tasep();
        let env = Environment::homogeneous(0, 64);
        let p = equilibrium_flux_estimate(&m, &env, 0.0, &McParams::new(64, 10.0, 2)).unwrap();
        assert_eq!(p.g, 0.0);
        assert_eq!(p.particles, 0);
    }

    #[test]
    fn tasep_half_density_quick() {
        let m = Model::tasep();
        let env = Environment::homogeneous(0, 128);
        let p = equilibrium_flux_estimate(&m, &env, 0.5, &McParams::new(128, 200.0, 2)).unwrap();
        assert!((p.g - 0.25).abs() < 5.0 * p.stderr + 0.01, "{p:?}");
        assert_eq!(p.conservation_violations, 0);
        assert!((p.j1 - p.j2).abs() <= 3.0 * (p.j1_stderr.powi(2) + p.j2_stderr.powi(2)).sqrt() + 1e-12);
    }

    #[test]
    fn estimates_round_trip_through_csv() {
        let pts = vec![
            FluxPoint {
                rho: 0.0,
                rho_effective: 0.0,
                particles: 0,
                g: 0.0,
                stderr: 0.0,
                j1: 0.0,
                j1_stderr: 0.0,
                j2: 0.0,
                j2_stderr: 0.0,
                method: Method::EquilibriumMc,
                sites: 8,
                time: 1.0,
                seeds: 1,
                conservation_violations: 0,
                events: 0,
            };
            2
        ];
        let mut pts = pts;
        pts[1].rho = 1.0;
        pts[1].g = 0.1;
        let mut buf = Vec::new();
        write_estimates(&mut buf, &pts).unwrap();
        let f = read_estimates(&buf[..]).unwrap();
        assert!((f.eval(0.5) - 0.05).abs() < 1e-15);
    }
}
