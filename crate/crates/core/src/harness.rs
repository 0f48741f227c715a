//! Hydrodynamic-limit experiments: sampling of initial states, Riemann and
//! Cauchy convergence runs, current laws of large numbers, macroscopic
//! stability and finite propagation.

use std::io::Write;

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux_id::analytic_flux;
use crate::graphical::{apply_event, generate_events, ghost_occupancy, CurrentTracker, Evolution, Observer};
use crate::lattice::{
    delta_distance, delta_on_window, empirical_measure, fmt_f64, Boundary, Configuration, Environment,
    PiecewiseConstantProfile,
};
use crate::models::{Model, ModelSpec};
use crate::scl::{riemann_solve, CauchyScheme, FluxFunction};

/// η(x) = Σ_{i<K} 1{U_{x,i} < u0(x/N)/K} with uniforms hashed from
/// (seed, x, i): the sample is nondecreasing in u0 for a fixed seed.
/// The window gets the tails of `u0` as reservoirs.
pub fn sample_initial_state(
    u0: &PiecewiseConstantProfile,
    scale: u64,
    lo: i64,
    len: usize,
    cap: u32,
    seed: u64,
) -> Result<Configuration> {
    let k = cap as f64;
    if u0.values().iter().any(|v| !(0.0..=k).contains(v)) {
        return Err(Error::InvalidProfile(format!("profile values must lie in [0, {cap}]")));
    }
    let n = scale.max(1) as f64;
    let key = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x1417_5eed;
    let occ = (0..len as i64)
        .map(|i| {
            let x = lo + i;
            ghost_occupancy(key, x, u0.value(x as f64 / n), cap)
        })
        .collect();
    Configuration::new(
        lo,
        occ,
        cap,
        Boundary::ConstantTails {
            left: u0.left_tail(),
            right: u0.right_tail(),
        },
    )
}

/// Initial macroscopic profile of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialProfile {
    Riemann { lambda: f64, rho: f64 },
    /// Values on `(-∞, b_0), [b_0, b_1), …, [b_last, ∞)`.
    Steps { breaks: Vec<f64>, values: Vec<f64> },
}

impl InitialProfile {
    pub fn profile(&self) -> Result<PiecewiseConstantProfile> {
        match self {
            InitialProfile::Riemann { lambda, rho } => Ok(PiecewiseConstantProfile::riemann(*lambda, *rho, 0.0)),
            InitialProfile::Steps { breaks, values } => PiecewiseConstantProfile::from_steps(breaks, values),
        }
    }
}

/// Reference solver resolution for Cauchy experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverParams {
    pub dx: f64,
    /// Δt/Δx; defaults to 0.9/(2V).
    #[serde(default)]
    pub ratio: Option<f64>,
}

/// A hydrodynamic experiment read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub model: ModelSpec,
    #[serde(default)]
    pub env_seed: u64,
    pub initial: InitialProfile,
    /// Scaling parameters N.
    pub scales: Vec<u64>,
    /// Macroscopic observation times.
    pub times: Vec<f64>,
    /// Poisson seeds (replicas).
    pub seeds: Vec<u64>,
    /// Extra macroscopic distance added around the light cone, ≥ 1.
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Requested simulation half-width in macroscopic units; rejected when
    /// narrower than the fencing requirement.
    #[serde(default)]
    pub half_width: Option<f64>,
    /// Observer speeds for current measurements.
    #[serde(default)]
    pub speeds: Vec<f64>,
    #[serde(default)]
    pub solver: Option<SolverParams>,
    /// Acceptance bound on the median Δ at the largest scale.
    #[serde(default)]
    pub threshold: Option<f64>,
}

fn default_margin() -> f64 {
    1.0
}

impl ExperimentPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.build()?;
        self.initial.profile()?;
        if self.scales.is_empty() || self.scales.contains(&0) {
            return Err(Error::InvalidArgument("plan needs positive scales".into()));
        }
        if self.times.is_empty() || self.times.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidArgument("plan needs positive observation times".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("plan needs at least one seed".into()));
        }
        if !(self.margin >= 1.0) {
            return Err(Error::Fencing(format!("margin {} below one macroscopic unit", self.margin)));
        }
        Ok(())
    }

    fn t_max(&self) -> f64 {
        self.times.iter().copied().fold(0.0, f64::max)
    }
}

/// Flux of a model: closed form when available, otherwise the one carried
/// by its specification.
pub fn model_flux(spec: &ModelSpec, model: &Model, env: &Environment) -> Result<FluxFunction> {
    match analytic_flux(model, env) {
        Ok(f) => Ok(f),
        Err(Error::FluxUnavailable(why)) => match &spec.flux {
            Some(f) => FluxFunction::from_spec(f, model.cap() as f64),
            None => Err(Error::FluxUnavailable(format!(
                "{why}; add an estimated `flux` table to the model file"
            ))),
        },
        Err(e) => Err(e),
    }
}

/// Max |G'| over the densities between the extreme values of the data.
fn speed_bound(flux: &FluxFunction, u0: &PiecewiseConstantProfile) -> f64 {
    let vals = u0.values();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if flux.is_piecewise_linear() {
        return flux.lipschitz();
    }
    let n = 4096;
    (0..=n)
        .map(|i| flux.deriv(lo + (hi - lo) * i as f64 / n as f64).abs())
        .fold(0.0, f64::max)
}

/// Simulation and comparison windows of one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fence {
    /// Macroscopic comparison window.
    pub compare: (f64, f64),
    /// First simulated site and number of sites.
    pub lo: i64,
    pub len: usize,
    /// Macroscopic half-width used.
    pub half_width: f64,
}

fn fence(
    support: (f64, f64),
    compare: (f64, f64),
    speed: f64,
    t_max: f64,
    margin: f64,
    requested: Option<f64>,
    scale: u64,
) -> Result<Fence> {
    let radius = support.0.abs().max(support.1.abs());
    let needed = radius + speed * t_max + margin;
    let half_width = match requested {
        Some(h) if h < needed => {
            return Err(Error::Fencing(format!(
                "half-width {h} below required {needed} (support {radius}, speed {speed}, time {t_max}, margin {margin})"
            )))
        }
        Some(h) => h,
        None => needed,
    };
    let n = scale as f64;
    let lo = (-half_width * n).floor() as i64;
    let hi = (half_width * n).ceil() as i64;
    Ok(Fence {
        compare,
        lo,
        len: (hi - lo) as usize,
        half_width,
    })
}

/// Current measured by one moving observer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentSample {
    pub speed: f64,
    /// (Nt)⁻¹ φ^v_{Nt}.
    pub measured: f64,
    /// 𝒢_v(λ, ρ).
    pub expected: f64,
}

/// One (N, t, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub scale: u64,
    pub time: f64,
    pub seed: u64,
    pub delta: f64,
    pub currents: Vec<CurrentSample>,
    /// Whether φ^w − φ^v equals the particle count between the observers
    /// for every pair of speeds (exact integer identity).
    pub bookkeeping: bool,
    pub events: u64,
}

/// Aggregate of the seeds of one (N, t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scale: u64,
    pub time: f64,
    pub cells: usize,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

/// Per-cell results and summaries of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub experiment: String,
    pub cells: Vec<CellResult>,
    pub summary: Vec<Summary>,
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl CellResult {
    pub fn status(&self) -> &'static str {
        if self.delta.is_finite() && self.bookkeeping {
            "ok"
        } else {
            "fail"
        }
    }
}

impl ConvergenceReport {
    /// Every cell ok, medians strictly decreasing in N when several scales
    /// were run, and the median at the largest N within `threshold`.
    pub fn passed(&self, threshold: Option<f64>) -> bool {
        let cells_ok = self.cells.iter().all(|c| c.status() == "ok");
        let nmax = self.summary.iter().map(|s| s.scale).max();
        let terminal = match threshold {
            Some(th) => self
                .summary
                .iter()
                .filter(|s| Some(s.scale) == nmax)
                .all(|s| s.median <= th),
            None => true,
        };
        cells_ok && self.strictly_decreasing() && terminal
    }

    fn new(experiment: &str, cells: Vec<CellResult>) -> Self {
        let mut keys: Vec<(u64, f64)> = cells.iter().map(|c| (c.scale, c.time)).collect();
        keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        keys.dedup();
        let summary = keys
            .into_iter()
            .map(|(scale, time)| {
                let d: Vec<f64> = cells
                    .iter()
                    .filter(|c| c.scale == scale && c.time == time)
                    .map(|c| c.delta)
                    .collect();
                Summary {
                    scale,
                    time,
                    cells: d.len(),
                    median: median(&d),
                    mean: d.iter().sum::<f64>() / d.len() as f64,
                    max: d.iter().copied().fold(0.0, f64::max),
                }
            })
            .collect();
        Self {
            experiment: experiment.into(),
            cells,
            summary,
        }
    }

    /// (N, median Δ) at time `t`, in increasing N.
    pub fn medians(&self, t: f64) -> Vec<(u64, f64)> {
        self.summary
            .iter()
            .filter(|s| s.time == t)
            .map(|s| (s.scale, s.median))
            .collect()
    }

    /// Whether the median Δ strictly decreases with N at every time.
    pub fn strictly_decreasing(&self) -> bool {
        let mut times: Vec<f64> = self.summary.iter().map(|s| s.time).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
            .iter()
            .all(|&t| self.medians(t).windows(2).all(|w| w[1].1 < w[0].1))
    }

    /// `scale,time,seed,delta,events,status` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scale", "time", "seed", "delta", "events", "status"])?;
        for c in &self.cells {
            w.write_record([
                c.scale.to_string(),
                fmt_f64(c.time),
                c.seed.to_string(),
                fmt_f64(c.delta),
                c.events.to_string(),
                c.status().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `scale,time,seed,speed,measured,expected` rows.
    pub fn write_currents_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scale", "time", "seed", "speed", "measured", "expected"])?;
        for c in &self.cells {
            for s in &c.currents {
                w.write_record([
                    c.scale.to_string(),
                    fmt_f64(c.time),
                    c.seed.to_string(),
                    fmt_f64(s.speed),
                    fmt_f64(s.measured),
                    fmt_f64(s.expected),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Macroscopic reference solution compared against the particle system.
enum Reference {
    Riemann(crate::scl::RiemannFan),
    Cauchy { times: Vec<f64>, profiles: Vec<PiecewiseConstantProfile> },
}

impl Reference {
    fn delta(&self, emp: &PiecewiseConstantProfile, t: f64, window: (f64, f64)) -> f64 {
        match self {
            Reference::Riemann(fan) => delta_on_window(emp, &fan.at_time(t), window.0, window.1),
            Reference::Cauchy { times, profiles } => {
                let i = times
                    .iter()
                    .position(|&s| s == t)
                    .expect("reference sampled at every observation time");
                delta_on_window(emp, &profiles[i], window.0, window.1)
            }
        }
    }
}

struct Setup {
    model: Model,
    u0: PiecewiseConstantProfile,
    flux: FluxFunction,
    speed: f64,
}

fn setup(plan: &ExperimentPlan) -> Result<Setup> {
    plan.validate()?;
    let model = plan.model.build()?;
    let u0 = plan.initial.profile()?;
    // the flux of a disordered model does not depend on the environment draw
    let probe = plan.model.environment(&model, 0, 1, plan.env_seed)?;
    let flux = model_flux(&plan.model, &model, &probe)?;
    let speed = speed_bound(&flux, &u0);
    Ok(Setup { model, u0, flux, speed })
}

fn run_cells(
    plan: &ExperimentPlan,
    s: &Setup,
    fences: &[Fence],
    reference: &Reference,
    expected_current: impl Fn(f64) -> f64 + Sync,
) -> Result<Vec<CellResult>> {
    let mut times = plan.times.clone();
    times.sort_by(f64::total_cmp);
    let mut speeds = plan.speeds.clone();
    speeds.sort_by(f64::total_cmp);
    let jobs: Vec<(usize, u64)> = (0..plan.scales.len())
        .flat_map(|i| plan.seeds.iter().map(move |&seed| (i, seed)))
        .collect();
    let r = s.model.locality_radius();
    let results: Vec<Result<Vec<CellResult>>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let n = plan.scales[i];
            let f = fences[i];
            let env = plan.model.environment(&s.model, f.lo - r, f.len + 2 * r as usize, plan.env_seed)?;
            let family = s.model.bind(&env)?;
            let horizon = n as f64 * times[times.len() - 1];
            let stream = generate_events(family, f.lo - r, f.len + 2 * r as usize, horizon, seed)?;
            let eta0 = sample_initial_state(&s.u0, n, f.lo, f.len, s.model.cap(), seed)?;
            let mut evo = Evolution::new(eta0, &stream);
            let mut trackers: Vec<CurrentTracker> = speeds
                .iter()
                .map(|&v| CurrentTracker::new(Observer::Speed(v), None))
                .collect();
            let mut out = Vec::with_capacity(times.len());
            for &t in &times {
                let micro = n as f64 * t;
                while let Some(te) = evo.peek_time().filter(|&te| te <= micro) {
                    for tr in trackers.iter_mut() {
                        tr.move_to(te, evo.config());
                    }
                    if let Some((_, Some(j))) = evo.step() {
                        for tr in trackers.iter_mut() {
                            tr.jump(j);
                        }
                    }
                }
                for tr in trackers.iter_mut() {
                    tr.move_to(micro, evo.config());
                }
                let eta = evo.config();
                let emp = empirical_measure(eta, n);
                let delta = reference.delta(&emp, t, f.compare);
                let currents = speeds
                    .iter()
                    .zip(&trackers)
                    .map(|(&v, tr)| CurrentSample {
                        speed: v,
                        measured: tr.record().net() as f64 / micro,
                        expected: expected_current(v),
                    })
                    .collect();
                let bookkeeping = trackers.windows(2).all(|w| {
                    let (a, b) = (w[0].record(), w[1].record());
                    let between: i64 = ((a.position + 1)..=b.position)
                        .map(|y| eta.get(y).map_or(0, |n| n as i64))
                        .sum();
                    a.net() - b.net() == between
                });
                out.push(CellResult {
                    scale: n,
                    time: t,
                    seed,
                    delta,
                    currents,
                    bookkeeping,
                    events: evo.events_applied(),
                });
            }
            Ok(out)
        })
        .collect();
    let mut cells = Vec::new();
    for r in results {
        cells.extend(r?);
    }
    Ok(cells)
}

/// Riemann initial data: Δ between π^N(η_{Nt}) and h_c(·/t) on the fenced
/// window, and currents seen by observers at the plan's speeds.
pub fn riemann_experiment(plan: &ExperimentPlan) -> Result<ConvergenceReport> {
    let s = setup(plan)?;
    let (lambda, rho) = match plan.initial {
        InitialProfile::Riemann { lambda, rho } => (lambda, rho),
        _ => return Err(Error::InvalidArgument("Riemann experiment needs Riemann initial data".into())),
    };
    let fan = riemann_solve(&s.flux, lambda, rho);
    let (vlo, vhi) = fan.speed_range().unwrap_or((0.0, 0.0));
    let t_max = plan.t_max();
    let compare = (vlo.min(0.0) * t_max - 0.5, vhi.max(0.0) * t_max + 0.5);
    let fences: Vec<Fence> = plan
        .scales
        .iter()
        .map(|&n| fence((0.0, 0.0), compare, s.speed, t_max, plan.margin, plan.half_width, n))
        .collect::<Result<_>>()?;
    if let Some(sp) = plan.speeds.iter().find(|v| v.abs() > fences[0].half_width - plan.margin / 2.0 + s.speed) {
        return Err(Error::Fencing(format!("observer speed {sp} leaves the simulated window")));
    }
    let fan2 = fan.clone();
    let cells = run_cells(plan, &s, &fences, &Reference::Riemann(fan), move |v| fan2.current(v))?;
    Ok(ConvergenceReport::new("riemann", cells))
}

/// General step initial data compared with the front-tracking solution.
pub fn cauchy_experiment(plan: &ExperimentPlan) -> Result<ConvergenceReport> {
    let s = setup(plan)?;
    let (a, b) = s.u0.support().unwrap_or((0.0, 0.0));
    let t_max = plan.t_max();
    let compare = (a - s.speed * t_max - 0.5, b + s.speed * t_max + 0.5);
    let fences: Vec<Fence> = plan
        .scales
        .iter()
        .map(|&n| fence((a, b), compare, s.speed, t_max, plan.margin, plan.half_width, n))
        .collect::<Result<_>>()?;
    let solver = plan.solver.unwrap_or(SolverParams { dx: 0.002, ratio: None });
    let v = s.flux.lipschitz().max(1e-12);
    let scheme = CauchyScheme::new(&s.flux, solver.dx, solver.ratio.unwrap_or(0.9 / (2.0 * v)))?;
    let mut times = plan.times.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let tr = scheme.solve_at(&s.u0, &times)?;
    let reference = Reference::Cauchy {
        times: tr.times,
        profiles: tr.profiles,
    };
    let cells = run_cells(plan, &s, &fences, &reference, |_| f64::NAN)?;
    Ok(ConvergenceReport::new("cauchy", cells))
}

/// Parameters of the macroscopic stability test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityParams {
    pub scales: Vec<u64>,
    pub trials: usize,
    /// Particles in each configuration of a pair.
    pub particles: usize,
    pub gamma: f64,
    pub t_max: f64,
    /// Observation grid spacing (macroscopic time).
    pub grid: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub scale: u64,
    pub trials: usize,
    pub violations: usize,
    pub frequency: f64,
    /// Largest observed Δ_t − Δ_0.
    pub worst_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    /// (C, c) in 1 − C(|η0|+|ξ0|)e^{−cNγ}, fitted when at least two scales
    /// show violations.
    pub fit: Option<(f64, f64)>,
}

impl StabilityReport {
    pub fn nonincreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].frequency <= w[0].frequency)
    }
}

fn random_finite(scale: u64, particles: usize, cap: u32, lo: i64, len: usize, rng: &mut ChaCha8Rng) -> Result<Configuration> {
    let slots = scale as usize * cap as usize;
    if particles > slots {
        return Err(Error::InvalidArgument("more particles than slots in [0, N)".into()));
    }
    let mut eta = Configuration::empty(lo, len, cap, Boundary::ConstantTails { left: 0.0, right: 0.0 })?;
    let occ = eta.occupancies_mut();
    for s in sample(rng, slots, particles) {
        occ[(s / cap as usize) as usize + (-lo) as usize] += 1;
    }
    Ok(eta)
}

/// Frequency of {Δ(π^N η_t, π^N ξ_t) > Δ(π^N η_0, π^N ξ_0) + γ for some
/// grid time t} over random pairs with finite support in `[0, N)`.
pub fn macro_stability_test(model: &Model, env_spec: &ModelSpec, params: &StabilityParams) -> Result<StabilityReport> {
    if !(params.grid > 0.0) || !(params.t_max > 0.0) || params.trials == 0 {
        return Err(Error::InvalidArgument("stability test needs a positive grid, horizon and trials".into()));
    }
    let steps = (params.t_max / params.grid + 1e-9).floor() as usize;
    let cap = model.cap();
    let r = model.locality_radius();
    let mut rows = Vec::new();
    for &n in &params.scales {
        let probe = env_spec.environment(model, 0, 1, 0)?;
        let m = model.bind(&probe)?.total_rate();
        let pad = (n as f64 * (m * r as f64 * params.t_max + 0.25)).ceil() as i64;
        let lo = -pad;
        let len = (n as i64 + 2 * pad) as usize;
        let trials: Vec<Result<f64>> = (0..params.trials)
            .into_par_iter()
            .map(|i| {
                let seed = params
                    .seed
                    .wrapping_add(n.wrapping_mul(0x9E37_79B9))
                    .wrapping_add(i as u64 * 7919);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let env = env_spec.environment(model, lo - r, len + 2 * r as usize, seed)?;
                let family = model.bind(&env)?;
                let mut eta = random_finite(n, params.particles, cap, lo, len, &mut rng)?;
                let mut xi = random_finite(n, params.particles, cap, lo, len, &mut rng)?;
                let d0 = delta_distance(&empirical_measure(&eta, n), &empirical_measure(&xi, n))?;
                let horizon = n as f64 * params.t_max;
                let stream = generate_events(family, lo - r, len + 2 * r as usize, horizon, seed)?;
                let mut it = stream.iter().peekable();
                let mut worst = f64::NEG_INFINITY;
                for k in 1..=steps {
                    let until = n as f64 * params.grid * k as f64;
                    while let Some(ev) = it.next_if(|e| e.t <= until) {
                        apply_event(&family, &mut eta, &ev);
                        apply_event(&family, &mut xi, &ev);
                    }
                    let d = delta_distance(&empirical_measure(&eta, n), &empirical_measure(&xi, n))?;
                    worst = worst.max(d - d0);
                }
                Ok(worst)
            })
            .collect();
        let excess: Vec<f64> = trials.into_iter().collect::<Result<_>>()?;
        let violations = excess.iter().filter(|&&e| e > params.gamma).count();
        rows.push(StabilityRow {
            scale: n,
            trials: params.trials,
            violations,
            frequency: violations as f64 / params.trials as f64,
            worst_excess: excess.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    // least squares on log f = log(C·P) − cγN
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.frequency > 0.0)
        .map(|r| (r.scale as f64 * params.gamma, r.frequency.ln()))
        .collect();
    let fit = (pts.len() >= 2).then(|| {
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let c_big = (my - slope * mx).exp() / (2 * params.particles) as f64;
        (c_big, -slope)
    });
    Ok(StabilityReport { rows, fit })
}

/// Parameters of the finite-propagation test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationParams {
    /// The pair coincides on `[-half, half]`.
    pub half: i64,
    /// Microscopic time.
    pub time: f64,
    pub trials: usize,
    /// Front speed; defaults to 4·m(𝒱)·R.
    #[serde(default)]
    pub speed: Option<f64>,
    /// Density of the random configurations.
    pub density: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    pub trials: usize,
    pub violations: usize,
    pub speed: f64,
    /// Checked interval `[-half + vt, half − vt]`.
    pub interval: (i64, i64),
}

/// How often two coupled trajectories that coincide on `[-half, half]` at
/// time 0 differ inside `[-half + vt, half − vt]` at time t.
pub fn finite_propagation_test(model: &Model, params: &PropagationParams) -> Result<PropagationReport> {
    let env0 = Environment::homogeneous(0, 1);
    let m = model.bind(&env0)?.total_rate();
    let r = model.locality_radius();
    let v = params.speed.unwrap_or(4.0 * m * r as f64);
    let reach = (v * params.time).ceil() as i64;
    if 2 * reach >= 2 * params.half {
        return Err(Error::InvalidArgument(format!(
            "time {} too long: needs t < (y − x)/(2v) = {}",
            params.time,
            params.half as f64 / v
        )));
    }
    let pad = params.half + r;
    let lo = -params.half - pad;
    let len = (2 * (params.half + pad) + 1) as usize;
    let env = Environment::homogeneous(lo - r, len + 2 * r as usize);
    let family = model.bind(&env)?;
    let cap = model.cap();
    let bern = PiecewiseConstantProfile::constant(params.density);
    let violations: Vec<Result<bool>> = (0..params.trials as u64)
        .into_par_iter()
        .map(|i| {
            let seed = params.seed.wrapping_add(i.wrapping_mul(0x2545_F491));
            let eta = sample_initial_state(&bern, 1, lo, len, cap, seed)?;
            let other = sample_initial_state(&bern, 1, lo, len, cap, seed ^ 0xdead_beef)?;
            let mut xi = eta.clone();
            for x in lo..lo + len as i64 {
                if x < -params.half || x > params.half {
                    xi.set(x, other.get(x).unwrap());
                }
            }
            let stream = generate_events(family, lo - r, len + 2 * r as usize, params.time, seed)?;
            let (mut a, mut b) = (eta, xi);
            for ev in stream.iter() {
                apply_event(&family, &mut a, &ev);
                apply_event(&family, &mut b, &ev);
            }
            Ok(((-params.half + reach)..=(params.half - reach)).any(|x| a.get(x) != b.get(x)))
        })
        .collect();
    let violations = violations.into_iter().collect::<Result<Vec<bool>>>()?;
    Ok(PropagationReport {
        trials: params.trials,
        violations: violations.iter().filter(|&&b| b).count(),
        speed: v,
        interval: (-params.half + reach, params.half - reach),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{JumpKernel, ModelKind, KernelSpec, RateTableSpec, NamedRates};

    fn tasep_spec() -> ModelSpec {
        ModelSpec {
            model: ModelKind::Misanthrope,
            cap: 1,
            k: None,
            kernel: Some(KernelSpec::Table(vec![(1, 1.0)])),
            rate_table: Some(RateTableSpec::Named(NamedRates::KExclusion(1.0))),
            beta: None,
            descriptors: None,
            disorder: None,
            flux: None,
        }
    }

    #[test]
    fn deterministic_initial_states() {
        let z = sample_initial_state(&PiecewiseConstantProfile::constant(0.0), 10, -5, 10, 2, 1).unwrap();
        assert_eq!(z.total(), 0);
        let full = sample_initial_state(&PiecewiseConstantProfile::constant(2.0), 10, -5, 10, 2, 1).unwrap();
        assert!(full.occupancies().iter().all(|&n| n == 2));
        let r = sample_initial_state(&PiecewiseConstantProfile::riemann(1.0, 0.0, 0.0), 10, -20, 40, 1, 3).unwrap();
        for x in -20..20 {
            assert_eq!(r.get(x).unwrap(), (x < 0) as u32);
        }
    }

    #[test]
    fn initial_states_are_coupled_in_density() {
        for seed in 0..20 {
            let lo = sample_initial_state(&PiecewiseConstantProfile::constant(0.3), 50, 0, 200, 2, seed).unwrap();
            let hi = sample_initial_state(&PiecewiseConstantProfile::constant(0.9), 50, 0, 200, 2, seed).unwrap();
            assert!(lo.occupancies().iter().zip(hi.occupancies()).all(|(a, b)| a <= b));
        }
        let big = sample_initial_state(&PiecewiseConstantProfile::constant(0.4), 1, 0, 100_000, 1, 5).unwrap();
        assert!((big.total() as f64 / 1e5 - 0.4).abs() < 0.01);
    }

    #[test]
    fn narrow_window_is_rejected() {
        let plan = ExperimentPlan {
            model: tasep_spec(),
            env_seed: 0,
            initial: InitialProfile::Riemann { lambda: 1.0, rho: 0.0 },
            scales: vec![50],
            times: vec![1.0],
            seeds: vec![1],
            margin: 1.0,
            half_width: Some(1.2),
            speeds: vec![],
            solver: None,
            threshold: None,
        };
        assert!(matches!(riemann_experiment(&plan), Err(Error::Fencing(_))));
        let mut p2 = plan.clone();
        p2.half_width = None;
        p2.margin = 0.5;
        assert!(p2.validate().is_err());
    }

    #[test]
    fn equilibrium_riemann_is_small() {
        let plan = ExperimentPlan {
            model: tasep_spec(),
            env_seed: 0,
            initial: InitialProfile::Riemann { lambda: 0.5, rho: 0.5 },
            scales: vec![100],
            times: vec![1.0],
            seeds: vec![1, 2],
            margin: 1.0,
            half_width: None,
            speeds: vec![0.0],
            solver: None,
            threshold: None,
        };
        let rep = riemann_experiment(&plan).unwrap();
        assert_eq!(rep.cells.len(), 2);
        for c in &rep.cells {
            assert!(c.delta < 0.1, "{}", c.delta);
            assert!(c.bookkeeping);
        }
    }

    #[test]
    fn identical_pairs_never_separate() {
        let m = Model::simple_exclusion(JumpKernel::table(&[(1, 0.6), (-1, 0.4)]).unwrap());
        let rep = finite_propagation_test(
            &m,
            &PropagationParams {
                half: 60,
                time: 5.0,
                trials: 50,
                speed: None,
                density: 0.5,
                seed: 2,
            },
        )
        .unwrap();
        assert_eq!(rep.violations, 0);
    }
}
