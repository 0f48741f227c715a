//! Monotone conservative transformations and the concrete particle models.
//!
//! Every model is a family of local maps `T^{α,x,v}` indexed by an auxiliary
//! value `v` drawn from a finite measure of total mass `m(𝒱)` per site. A map
//! moves at most one particle, from `x` to a target site, so conservation and
//! locality hold by construction; the models only decide the target.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Boundary, Configuration, Environment, EnvironmentKind, OvertakingRates};
use crate::scl::FluxSpec;

/// Longest path supported by the path-following models.
pub const MAX_K: usize = 8;

/// Largest number of enumerated walk paths kept for exact rate computations.
const MAX_ENUMERATED_PATHS: usize = 1 << 16;

/// Single-site jump kernel p(.) with finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpKernel {
    support: Vec<i64>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl JumpKernel {
    /// Normalizes the given weights; zero displacements are rejected.
    pub fn table(entries: &[(i64, f64)]) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidSpec("empty jump kernel".into()));
        }
        let mut e: Vec<(i64, f64)> = entries.to_vec();
        e.sort_by_key(|p| p.0);
        if e.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidSpec("duplicate kernel displacement".into()));
        }
        if e.iter().any(|&(z, p)| z == 0 || !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidSpec(
                "kernel displacements must be nonzero with nonnegative weights".into(),
            ));
        }
        e.retain(|&(_, p)| p > 0.0);
        let total: f64 = e.iter().map(|p| p.1).sum();
        if total <= 0.0 {
            return Err(Error::InvalidSpec("kernel has zero mass".into()));
        }
        let support: Vec<i64> = e.iter().map(|p| p.0).collect();
        let probs: Vec<f64> = e.iter().map(|p| p.1 / total).collect();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { support, probs, cdf })
    }

    /// p(z) ∝ w_±·|z|^{-exponent}, truncated at the radius beyond which the
    /// discarded mass is below `tail_mass`, then renormalized.
    pub fn power_law(exponent: f64, right_weight: f64, tail_mass: f64, max_radius: i64) -> Result<Self> {
        if !(exponent > 1.0) {
            return Err(Error::InvalidSpec("power-law exponent must exceed 1".into()));
        }
        if !(0.0..=1.0).contains(&right_weight) {
            return Err(Error::InvalidSpec("right weight must lie in [0, 1]".into()));
        }
        let norm: f64 = (1..=100_000).map(|z| (z as f64).powf(-exponent)).sum();
        // Σ_{z > R} z^{-a} ≤ R^{1-a}/(a-1)
        let mut r = 1i64;
        while r < max_radius && (r as f64).powf(1.0 - exponent) / (exponent - 1.0) / norm >= tail_mass {
            r += 1;
        }
        let mut entries = Vec::new();
        for z in 1..=r {
            let w = (z as f64).powf(-exponent);
            entries.push((z, right_weight * w));
            entries.push((-z, (1.0 - right_weight) * w));
        }
        Self::table(&entries)
    }

    pub fn support(&self) -> &[i64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn entries(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.support.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn radius(&self) -> i64 {
        self.support.iter().map(|z| z.abs()).max().unwrap_or(0)
    }

    /// Inverse-transform sample from a uniform in [0, 1).
    #[inline]
    pub fn pick(&self, u: f64) -> i64 {
        let i = self.cdf.partition_point(|&c| c <= u).min(self.support.len() - 1);
        self.support[i]
    }

    pub fn mean(&self) -> f64 {
        self.entries().map(|(z, p)| z as f64 * p).sum()
    }
}

/// Dense rate table b(n, m) on {0..K}².
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    cap: u32,
    values: Vec<f64>,
}

impl RateTable {
    /// Validates b(0,·) = 0, b(·,K) = 0, monotonicity and boundedness.
    pub fn new(cap: u32, rows: Vec<Vec<f64>>) -> Result<Self> {
        let t = Self::new_unchecked(cap, rows)?;
        t.validate()?;
        Ok(t)
    }

    /// Builds the table checking only its shape; used to exhibit
    /// non-monotone rates.
    pub fn new_unchecked(cap: u32, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = cap as usize + 1;
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidSpec(format!("rate table must be {n}x{n}")));
        }
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidSpec("rates must be finite and nonnegative".into()));
        }
        Ok(Self { cap, values })
    }

    /// b(n, m) = s·1{n>0}·1{m<K}.
    pub fn k_exclusion(cap: u32, scale: f64) -> Self {
        Self::from_fn(cap, |n, m| if n > 0 && m < cap { scale } else { 0.0 })
    }

    /// b(n, m) = s·n·(K − m).
    pub fn linear(cap: u32, scale: f64) -> Self {
        Self::from_fn(cap, |n, m| scale * n as f64 * (cap - m) as f64)
    }

    pub fn from_fn(cap: u32, f: impl Fn(u32, u32) -> f64) -> Self {
        let mut values = Vec::with_capacity(((cap + 1) * (cap + 1)) as usize);
        for n in 0..=cap {
            for m in 0..=cap {
                values.push(f(n, m));
            }
        }
        Self { cap, values }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.cap;
        for m in 0..=k {
            if self.get(0, m) != 0.0 {
                return Err(Error::InvalidSpec(format!("b(0,{m}) must vanish")));
            }
        }
        for n in 0..=k {
            if self.get(n, k) != 0.0 {
                return Err(Error::InvalidSpec(format!("b({n},K) must vanish")));
            }
        }
        for n in 0..=k {
            for m in 0..=k {
                if n < k && self.get(n + 1, m) < self.get(n, m) {
                    return Err(Error::InvalidSpec(format!(
                        "b must be nondecreasing in its first argument: b({},{m}) < b({n},{m})",
                        n + 1
                    )));
                }
                if m < k && self.get(n, m + 1) > self.get(n, m) {
                    return Err(Error::InvalidSpec(format!(
                        "b must be nonincreasing in its second argument: b({n},{}) > b({n},{m})",
                        m + 1
                    )));
                }
            }
        }
        if self.max() <= 0.0 {
            return Err(Error::InvalidSpec("rate table is identically zero".into()));
        }
        Ok(())
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    #[inline]
    pub fn get(&self, n: u32, m: u32) -> f64 {
        self.values[(n * (self.cap + 1) + m) as usize]
    }

    /// ‖b‖_∞.
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values
            .chunks(self.cap as usize + 1)
            .map(|r| r.to_vec())
            .collect()
    }
}

/// One k-path of a k-step misanthrope descriptor together with the rate
/// tables b^1..b^k used when the particle settles after j steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEntry {
    pub steps: Vec<i64>,
    pub weight: f64,
    pub rates: Vec<RateTable>,
}

/// A path law q together with its rates; inverse-transform sampled over the
/// lexicographically sorted path table.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDescriptor {
    paths: Vec<PathEntry>,
    cdf: Vec<f64>,
}

impl PathDescriptor {
    pub fn new(k: usize, cap: u32, paths: Vec<PathEntry>) -> Result<Self> {
        let d = Self::new_unchecked(k, cap, paths)?;
        for p in &d.paths {
            for t in &p.rates {
                t.validate()?;
            }
            for j in 1..k {
                let longer = p.rates[j].get(cap, 0);
                let shorter = p.rates[j - 1].get(1, cap - 1);
                if longer > shorter {
                    return Err(Error::InvalidSpec(format!(
                        "path {:?}: b^{}(K,0) = {longer} exceeds b^{}(1,K-1) = {shorter}",
                        p.steps,
                        j + 1,
                        j
                    )));
                }
            }
        }
        Ok(d)
    }

    /// Checks shapes only; used to exhibit rate families that break
    /// attractiveness.
    pub fn new_unchecked(k: usize, cap: u32, mut paths: Vec<PathEntry>) -> Result<Self> {
        if k == 0 || k > MAX_K {
            return Err(Error::InvalidSpec(format!("k must lie in 1..={MAX_K}")));
        }
        if paths.is_empty() {
            return Err(Error::InvalidSpec("empty path table".into()));
        }
        for p in &paths {
            if p.steps.len() != k || p.rates.len() != k {
                return Err(Error::InvalidSpec(format!(
                    "path {:?} needs {k} steps and {k} rate tables",
                    p.steps
                )));
            }
            if p.rates.iter().any(|t| t.cap() != cap) {
                return Err(Error::InvalidSpec("rate table cap mismatch".into()));
            }
            if !(p.weight >= 0.0) || !p.weight.is_finite() {
                return Err(Error::InvalidSpec("path weights must be nonnegative".into()));
            }
        }
        paths.sort_by(|a, b| a.steps.cmp(&b.steps));
        if paths.windows(2).any(|w| w[0].steps == w[1].steps) {
            return Err(Error::InvalidSpec("duplicate path".into()));
        }
        paths.retain(|p| p.weight > 0.0);
        let total: f64 = paths.iter().map(|p| p.weight).sum();
        if total <= 0.0 {
            return Err(Error::InvalidSpec("path weights sum to zero".into()));
        }
        let mut acc = 0.0;
        let mut cdf = Vec::with_capacity(paths.len());
        for p in &mut paths {
            p.weight /= total;
            acc += p.weight;
            cdf.push(acc);
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { paths, cdf })
    }

    pub fn paths(&self) -> &[PathEntry] {
        &self.paths
    }

    /// F_q(v1).
    #[inline]
    pub fn pick(&self, v1: f64) -> &PathEntry {
        let i = self.cdf.partition_point(|&c| c <= v1).min(self.paths.len() - 1);
        &self.paths[i]
    }

    /// Centre of the v1-interval mapped to path `i`.
    pub fn v1_for(&self, i: usize) -> f64 {
        let lo = if i == 0 { 0.0 } else { self.cdf[i - 1] };
        0.5 * (lo + self.cdf[i])
    }

    fn max_rate(&self) -> f64 {
        self.paths
            .iter()
            .flat_map(|p| p.rates.iter().map(|t| t.max()))
            .fold(0.0, f64::max)
    }

    fn radius(&self) -> i64 {
        self.paths
            .iter()
            .flat_map(|p| p.steps.iter().map(|z| z.abs()))
            .max()
            .unwrap_or(0)
    }
}

/// The dynamics of a model, before an environment is attached.
#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    Misanthrope { kernel: JumpKernel, rates: RateTable },
    KStepExclusion { k: usize, kernel: JumpKernel },
    Overtaking { k: usize, beta: OvertakingRates },
    KStepMisanthrope { k: usize, descriptors: Vec<PathDescriptor> },
}

/// A model: cap K plus dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    cap: u32,
    dynamics: Dynamics,
    radius: i64,
    walks: Vec<([i64; MAX_K], f64)>,
}

impl Model {
    pub fn misanthrope(kernel: JumpKernel, rates: RateTable) -> Result<Self> {
        rates.validate()?;
        Ok(Self::misanthrope_unchecked(kernel, rates))
    }

    /// No (M1)–(M3) validation; for counterexample construction.
    pub fn misanthrope_unchecked(kernel: JumpKernel, rates: RateTable) -> Self {
        let radius = kernel.radius();
        Self {
            cap: rates.cap(),
            dynamics: Dynamics::Misanthrope { kernel, rates },
            radius,
            walks: Vec::new(),
        }
    }

    /// Simple exclusion with jump kernel `p` (γ = 1).
    pub fn simple_exclusion(kernel: JumpKernel) -> Self {
        Self::misanthrope_unchecked(kernel, RateTable::k_exclusion(1, 1.0))
    }

    /// Totally asymmetric simple exclusion, p(1) = 1.
    pub fn tasep() -> Self {
        Self::simple_exclusion(JumpKernel::table(&[(1, 1.0)]).unwrap())
    }

    pub fn kstep_exclusion(k: usize, kernel: JumpKernel) -> Result<Self> {
        if k == 0 || k > MAX_K {
            return Err(Error::InvalidSpec(format!("k must lie in 1..={MAX_K}")));
        }
        let walks = enumerate_walks(&kernel, k)?;
        let radius = kernel.radius() * k as i64;
        Ok(Self {
            cap: 1,
            dynamics: Dynamics::KStepExclusion { k, kernel },
            radius,
            walks,
        })
    }

    pub fn overtaking(k: usize, beta: OvertakingRates) -> Result<Self> {
        beta.validate()?;
        if beta.right.len() != k {
            return Err(Error::InvalidSpec(format!("overtaking needs {k} rates per side")));
        }
        if k > MAX_K {
            return Err(Error::InvalidSpec(format!("k must lie in 1..={MAX_K}")));
        }
        Ok(Self {
            cap: 1,
            dynamics: Dynamics::Overtaking { k, beta },
            radius: k as i64,
            walks: Vec::new(),
        })
    }

    pub fn kstep_misanthrope(k: usize, cap: u32, descriptors: Vec<PathDescriptor>) -> Result<Self> {
        if descriptors.is_empty() {
            return Err(Error::InvalidSpec("no path descriptors".into()));
        }
        if descriptors
            .iter()
            .any(|d| d.paths.iter().any(|p| p.steps.len() != k || p.rates[0].cap() != cap))
        {
            return Err(Error::InvalidSpec("descriptor shape does not match k/K".into()));
        }
        let radius = descriptors.iter().map(|d| d.radius()).max().unwrap_or(0);
        Ok(Self {
            cap,
            dynamics: Dynamics::KStepMisanthrope { k, descriptors },
            radius,
            walks: Vec::new(),
        })
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    /// Largest |displacement| a single transformation can produce.
    pub fn locality_radius(&self) -> i64 {
        self.radius
    }

    /// Enumerated k-step walks with their probabilities (k-step exclusion only).
    pub fn walks(&self) -> &[([i64; MAX_K], f64)] {
        &self.walks
    }

    /// Short name for reports.
    pub fn name(&self) -> &'static str {
        match self.dynamics {
            Dynamics::Misanthrope { .. } => "misanthrope",
            Dynamics::KStepExclusion { .. } => "kstep_exclusion",
            Dynamics::Overtaking { .. } => "overtaking",
            Dynamics::KStepMisanthrope { .. } => "kstep_misanthrope",
        }
    }

    /// Attaches an environment, checking that its kind fits the model.
    pub fn bind<'a>(&'a self, env: &'a Environment) -> Result<Family<'a>> {
        let c = env.c();
        let norm = match (&self.dynamics, env.kind()) {
            (Dynamics::Misanthrope { rates, .. }, EnvironmentKind::None)
            | (Dynamics::Misanthrope { rates, .. }, EnvironmentKind::SiteRates(_))
            | (Dynamics::Misanthrope { rates, .. }, EnvironmentKind::BondRates { .. }) => rates.max() / c,
            (Dynamics::KStepExclusion { .. }, EnvironmentKind::None)
            | (Dynamics::KStepExclusion { .. }, EnvironmentKind::SiteRates(_)) => 1.0 / c,
            (Dynamics::Overtaking { beta, .. }, EnvironmentKind::None) => beta.max(),
            (Dynamics::Overtaking { k, .. }, EnvironmentKind::Overtaking(b)) => {
                if b.iter().any(|t| t.right.len() != *k) {
                    return Err(Error::InvalidEnvironment("overtaking rate tuples must have k entries".into()));
                }
                b.iter().map(|t| t.max()).fold(0.0, f64::max)
            }
            (Dynamics::KStepMisanthrope { descriptors, .. }, EnvironmentKind::None) => {
                descriptors.iter().map(|d| d.max_rate()).fold(0.0, f64::max)
            }
            (Dynamics::KStepMisanthrope { descriptors, .. }, EnvironmentKind::KStepMisanthrope { descriptor, .. }) => {
                if descriptor.iter().any(|&d| d as usize >= descriptors.len()) {
                    return Err(Error::InvalidEnvironment("descriptor index out of range".into()));
                }
                descriptors.iter().map(|d| d.max_rate()).fold(0.0, f64::max) / c
            }
            (_, kind) => {
                return Err(Error::InvalidEnvironment(format!(
                    "{} model cannot run in a {} environment",
                    self.name(),
                    kind_name(kind)
                )))
            }
        };
        if !(norm > 0.0) {
            return Err(Error::InvalidSpec("model has zero total rate".into()));
        }
        Ok(Family { model: self, env, norm })
    }
}

fn kind_name(k: &EnvironmentKind) -> &'static str {
    match k {
        EnvironmentKind::None => "homogeneous",
        EnvironmentKind::SiteRates(_) => "site-rate",
        EnvironmentKind::BondRates { .. } => "bond-rate",
        EnvironmentKind::Overtaking(_) => "overtaking",
        EnvironmentKind::KStepMisanthrope { .. } => "k-step misanthrope",
    }
}

/// All k-step walk prefixes with their probabilities, absorbed at 0.
fn enumerate_walks(kernel: &JumpKernel, k: usize) -> Result<Vec<([i64; MAX_K], f64)>> {
    let count = kernel.support().len().checked_pow(k as u32).unwrap_or(usize::MAX);
    if count > MAX_ENUMERATED_PATHS {
        return Err(Error::InvalidSpec(format!(
            "{count} walk paths exceed the enumeration limit {MAX_ENUMERATED_PATHS}"
        )));
    }
    let mut out = vec![([0i64; MAX_K], 1.0)];
    for i in 0..k {
        let mut next = Vec::with_capacity(out.len() * kernel.support().len());
        for (path, p) in out {
            let prev = if i == 0 { 0 } else { path[i - 1] };
            if i > 0 && prev == 0 {
                next.push((path, p));
                continue;
            }
            for (z, q) in kernel.entries() {
                let mut np = path;
                np[i] = prev + z;
                next.push((np, p * q));
            }
        }
        out = next;
    }
    Ok(out)
}

/// Auxiliary value v of one event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aux {
    /// Displacement and thinning uniform.
    Jump { z: i64, u: f64 },
    /// Walk positions Z_1..Z_k relative to the start, absorbed at 0.
    Path { steps: [i32; MAX_K], u: f64 },
    /// Direction ±1 and thinning uniform.
    Overtake { dir: i8, u: f64 },
    /// Path selector v1 and thinning uniform v2.
    Uniform2 { v1: f64, v2: f64 },
}

/// A single particle move; `to` is unwrapped (may lie outside a torus window).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Jump {
    pub from: i64,
    pub to: i64,
}

/// A model bound to an environment: the transformation family T^{α,x,v}.
#[derive(Debug, Clone, Copy)]
pub struct Family<'a> {
    model: &'a Model,
    env: &'a Environment,
    norm: f64,
}

impl<'a> Family<'a> {
    pub fn model(&self) -> &'a Model {
        self.model
    }

    pub fn env(&self) -> &'a Environment {
        self.env
    }

    pub fn cap(&self) -> u32 {
        self.model.cap
    }

    pub fn locality_radius(&self) -> i64 {
        self.model.radius
    }

    /// m(𝒱): events per site per unit time.
    pub fn total_rate(&self) -> f64 {
        match self.model.dynamics {
            Dynamics::Overtaking { .. } => 2.0 * self.norm,
            _ => self.norm,
        }
    }

    /// Draws v ~ m / m(𝒱).
    pub fn sample_aux<R: Rng + ?Sized>(&self, rng: &mut R) -> Aux {
        match &self.model.dynamics {
            Dynamics::Misanthrope { kernel, .. } => Aux::Jump {
                z: kernel.pick(rng.random()),
                u: rng.random(),
            },
            Dynamics::KStepExclusion { k, kernel } => {
                let mut steps = [0i32; MAX_K];
                let mut pos = 0i64;
                for (i, s) in steps.iter_mut().enumerate().take(*k) {
                    if i == 0 || pos != 0 {
                        pos += kernel.pick(rng.random());
                    }
                    *s = pos as i32;
                }
                Aux::Path { steps, u: rng.random() }
            }
            Dynamics::Overtaking { .. } => Aux::Overtake {
                dir: if rng.random::<bool>() { 1 } else { -1 },
                u: rng.random(),
            },
            Dynamics::KStepMisanthrope { .. } => Aux::Uniform2 {
                v1: rng.random(),
                v2: rng.random(),
            },
        }
    }

    /// Target site of the particle at `x` under T^{α,x,v}, if it moves.
    #[inline]
    pub fn target(&self, x: i64, aux: &Aux, occ: impl Fn(i64) -> u32) -> Option<i64> {
        let n = occ(x);
        if n == 0 {
            return None;
        }
        let cap = self.model.cap;
        match (&self.model.dynamics, aux) {
            (Dynamics::Misanthrope { rates, .. }, &Aux::Jump { z, u }) => {
                let y = x + z;
                let b = rates.get(n, occ(y));
                (u * self.norm < self.env.bond_rate(x, z) * b).then_some(y)
            }
            (Dynamics::KStepExclusion { k, .. }, Aux::Path { steps, u }) => {
                if *u * self.norm >= self.env.site_rate(x) {
                    return None;
                }
                for &z in &steps[..*k] {
                    if z == 0 {
                        return None;
                    }
                    let y = x + z as i64;
                    if occ(y) == 0 {
                        return Some(y);
                    }
                }
                None
            }
            (Dynamics::Overtaking { k, beta }, &Aux::Overtake { dir, u }) => {
                let rates = self.env.overtaking(x).unwrap_or(beta);
                let dir = dir as i64;
                for j in 1..=*k as i64 {
                    let y = x + j * dir;
                    if occ(y) == 0 {
                        let b = rates.rate(j * dir);
                        return (b > 0.0 && u * self.norm <= b).then_some(y);
                    }
                }
                None
            }
            (Dynamics::KStepMisanthrope { descriptors, .. }, &Aux::Uniform2 { v1, v2 }) => {
                let path = descriptors[self.env.descriptor(x)].pick(v1);
                for (j, &z) in path.steps.iter().enumerate() {
                    let y = x + z;
                    let m = occ(y);
                    if m < cap {
                        if y == x {
                            return None;
                        }
                        let b = path.rates[j].get(n, m) * self.env.site_rate(x);
                        return (v2 * self.norm < b).then_some(y);
                    }
                }
                None
            }
            _ => panic!("auxiliary value {aux:?} does not belong to a {} model", self.model.name()),
        }
    }

    /// Exact generator rates c(x, y, η) of jumps out of `x`, merged per target.
    pub fn jump_rates(&self, x: i64, occ: impl Fn(i64) -> u32) -> Vec<(i64, f64)> {
        let n = occ(x);
        let mut out: Vec<(i64, f64)> = Vec::new();
        if n == 0 {
            return out;
        }
        let mut add = |y: i64, r: f64| {
            if r > 0.0 && y != x {
                match out.iter_mut().find(|e| e.0 == y) {
                    Some(e) => e.1 += r,
                    None => out.push((y, r)),
                }
            }
        };
        let cap = self.model.cap;
        match &self.model.dynamics {
            Dynamics::Misanthrope { kernel, rates } => {
                for (z, p) in kernel.entries() {
                    add(x + z, p * self.env.bond_rate(x, z) * rates.get(n, occ(x + z)));
                }
            }
            Dynamics::KStepExclusion { k, .. } => {
                let a = self.env.site_rate(x);
                for (steps, p) in &self.model.walks {
                    for &z in &steps[..*k] {
                        if z == 0 {
                            break;
                        }
                        if occ(x + z) == 0 {
                            add(x + z, a * p);
                            break;
                        }
                    }
                }
            }
            Dynamics::Overtaking { k, beta } => {
                let rates = self.env.overtaking(x).unwrap_or(beta);
                for dir in [1i64, -1] {
                    for j in 1..=*k as i64 {
                        if occ(x + j * dir) == 0 {
                            add(x + j * dir, rates.rate(j * dir));
                            break;
                        }
                    }
                }
            }
            Dynamics::KStepMisanthrope { descriptors, .. } => {
                let s = self.env.site_rate(x);
                for path in descriptors[self.env.descriptor(x)].paths() {
                    for (j, &z) in path.steps.iter().enumerate() {
                        let m = occ(x + z);
                        if m < cap {
                            add(x + z, path.weight * s * path.rates[j].get(n, m));
                            break;
                        }
                    }
                }
            }
        }
        out
    }

    /// T^{α,x,v}η for a configuration whose window covers the touched sites
    /// (or any torus). Off-window sites read as their tail density rounded
    /// down, which is only meaningful for deterministic tails.
    pub fn apply(&self, x: i64, aux: &Aux, eta: &Configuration) -> Configuration {
        let occ = |y: i64| eta.get(y).unwrap_or_else(|| eta.tail_density(y).floor() as u32);
        let mut out = eta.clone();
        if let Some(to) = self.target(x, aux, occ) {
            if eta.get(x).is_some() {
                let i = out.index(x).unwrap();
                out.occupancies_mut()[i] -= 1;
            }
            if let Some(j) = out.index(to) {
                out.occupancies_mut()[j] += 1;
            }
        }
        out
    }
}

/// Outcome of a brute-force monotonicity search.
#[derive(Debug, Clone, PartialEq)]
pub enum MonotoneReport {
    Certificate {
        /// Ordered pairs η ≤ ξ checked for every (x, v) sample.
        pairs: u64,
        sites: usize,
        aux_samples: usize,
        /// Fraction of the requested (pair, site, aux) triples covered.
        coverage: f64,
    },
    Counterexample {
        x: i64,
        aux: Aux,
        eta: Vec<u32>,
        xi: Vec<u32>,
        eta_after: Vec<u32>,
        xi_after: Vec<u32>,
    },
}

impl MonotoneReport {
    pub fn is_certificate(&self) -> bool {
        matches!(self, MonotoneReport::Certificate { .. })
    }

    pub fn coverage(&self) -> f64 {
        match self {
            MonotoneReport::Certificate { coverage, .. } => *coverage,
            MonotoneReport::Counterexample { .. } => 0.0,
        }
    }
}

/// Checks `T(η) ≤ T(ξ)` for every ordered pair on a torus of `window_size`
/// sites, every site and `aux_samples` seeded auxiliary values. At most
/// `budget` transformation pairs are evaluated; a truncated search returns a
/// certificate with coverage below one.
pub fn check_monotone(
    family: &Family<'_>,
    window_size: usize,
    aux_samples: usize,
    seed: u64,
    budget: u64,
) -> Result<MonotoneReport> {
    if window_size == 0 {
        return Err(Error::InvalidArgument("window must be nonempty".into()));
    }
    let k = family.cap();
    let base = k as u64 + 1;
    let states = base
        .checked_pow(window_size as u32)
        .filter(|s| *s <= 1 << 24)
        .ok_or_else(|| Error::InvalidArgument("window too large for exhaustive enumeration".into()))?;
    let decode = |mut code: u64| -> Vec<u32> {
        (0..window_size)
            .map(|_| {
                let d = (code % base) as u32;
                code /= base;
                d
            })
            .collect()
    };
    let configs: Vec<Vec<u32>> = (0..states).map(decode).collect();
    let mut pairs = Vec::new();
    for (i, a) in configs.iter().enumerate() {
        for (j, b) in configs.iter().enumerate() {
            if a.iter().zip(b).all(|(p, q)| p <= q) {
                pairs.push((i, j));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let auxes: Vec<Aux> = (0..aux_samples).map(|_| family.sample_aux(&mut rng)).collect();
    let w = window_size as i64;
    let wrap = |c: &[u32], y: i64| c[y.rem_euclid(w) as usize];
    let apply = |c: &[u32], x: i64, v: &Aux| -> Vec<u32> {
        let mut out = c.to_vec();
        if let Some(to) = family.target(x, v, |y| wrap(c, y)) {
            out[x.rem_euclid(w) as usize] -= 1;
            out[to.rem_euclid(w) as usize] += 1;
        }
        out
    };
    let requested = pairs.len() as u64 * window_size as u64 * aux_samples as u64;
    let mut done = 0u64;
    'outer: for v in &auxes {
        for x in 0..w {
            // images of every configuration under this (x, v)
            let images: Vec<Vec<u32>> = configs.iter().map(|c| apply(c, x, v)).collect();
            for &(i, j) in &pairs {
                if done >= budget {
                    break 'outer;
                }
                done += 1;
                if images[i].iter().zip(&images[j]).any(|(p, q)| p > q) {
                    return Ok(MonotoneReport::Counterexample {
                        x,
                        aux: *v,
                        eta: configs[i].clone(),
                        xi: configs[j].clone(),
                        eta_after: images[i].clone(),
                        xi_after: images[j].clone(),
                    });
                }
            }
        }
    }
    Ok(MonotoneReport::Certificate {
        pairs: pairs.len() as u64,
        sites: window_size,
        aux_samples,
        coverage: done as f64 / requested.max(1) as f64,
    })
}

/// One-dimensional law for i.i.d. disorder values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Law {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    TwoPoint { a: f64, b: f64, p: f64 },
}

impl Law {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Law::Constant(v) => v,
            Law::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Law::TwoPoint { a, b, p } => {
                if rng.random::<f64>() < p {
                    a
                } else {
                    b
                }
            }
        }
    }

    fn range(&self) -> (f64, f64) {
        match *self {
            Law::Constant(v) => (v, v),
            Law::Uniform { lo, hi } => (lo, hi),
            Law::TwoPoint { a, b, .. } => (a.min(b), a.max(b)),
        }
    }

    fn validate(&self, c: f64) -> Result<()> {
        let (lo, hi) = self.range();
        if let Law::TwoPoint { p, .. } = self {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::InvalidSpec(format!("two-point weight {p} outside [0, 1]")));
            }
        }
        if let Law::Uniform { lo, hi } = self {
            if lo > hi {
                return Err(Error::InvalidSpec("uniform law with lo > hi".into()));
            }
        }
        if !(lo >= c && hi <= 1.0 / c) {
            return Err(Error::InvalidSpec(format!(
                "disorder range [{lo}, {hi}] outside [{c}, {}]",
                1.0 / c
            )));
        }
        Ok(())
    }
}

/// I.i.d. disorder law for the environment fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DisorderSpec {
    None,
    SiteRates { law: Law, c: f64 },
    BondRates { law: Law, c: f64 },
    /// β^j_x = s_x·β^j with s_x i.i.d.
    Overtaking { scale: Law },
    /// Descriptor index drawn with the given weights, rate multiplier from `scale`.
    KstepMisanthrope { weights: Vec<f64>, scale: Law, c: f64 },
}

/// Draws an environment on `lo .. lo + len`, deterministic in `seed`.
pub fn sample_environment(
    spec: &DisorderSpec,
    model: &Model,
    lo: i64,
    len: usize,
    seed: u64,
) -> Result<Environment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = match spec {
        DisorderSpec::None => return Ok(Environment::homogeneous(lo, len)),
        DisorderSpec::SiteRates { law, c } => {
            law.validate(*c)?;
            let a = (0..len).map(|_| law.sample(&mut rng)).collect();
            return Environment::new(lo, len, *c, seed, EnvironmentKind::SiteRates(a));
        }
        DisorderSpec::BondRates { law, c } => {
            law.validate(*c)?;
            let offsets: Vec<i64> = match model.dynamics() {
                Dynamics::Misanthrope { kernel, .. } => kernel.support().to_vec(),
                _ => return Err(Error::InvalidSpec("bond disorder needs a misanthrope model".into())),
            };
            let rates = (0..len * offsets.len()).map(|_| law.sample(&mut rng)).collect();
            return Environment::new(lo, len, *c, seed, EnvironmentKind::BondRates { offsets, rates });
        }
        DisorderSpec::Overtaking { scale } => {
            let beta = match model.dynamics() {
                Dynamics::Overtaking { beta, .. } => beta,
                _ => return Err(Error::InvalidSpec("overtaking disorder needs an overtaking model".into())),
            };
            let (lo_s, _) = scale.range();
            if !(lo_s > 0.0) {
                return Err(Error::InvalidSpec("overtaking scale must be positive".into()));
            }
            let b = (0..len)
                .map(|_| {
                    let s = scale.sample(&mut rng);
                    OvertakingRates {
                        right: beta.right.iter().map(|v| v * s).collect(),
                        left: beta.left.iter().map(|v| v * s).collect(),
                    }
                })
                .collect();
            EnvironmentKind::Overtaking(b)
        }
        DisorderSpec::KstepMisanthrope { weights, scale, c } => {
            scale.validate(*c)?;
            let n = match model.dynamics() {
                Dynamics::KStepMisanthrope { descriptors, .. } => descriptors.len(),
                _ => return Err(Error::InvalidSpec("descriptor disorder needs a k-step misanthrope model".into())),
            };
            if weights.len() != n || weights.iter().any(|w| !(*w >= 0.0)) {
                return Err(Error::InvalidSpec(format!("need {n} nonnegative descriptor weights")));
            }
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                return Err(Error::InvalidSpec("descriptor weights sum to zero".into()));
            }
            let mut descriptor = Vec::with_capacity(len);
            let mut scales = Vec::with_capacity(len);
            for _ in 0..len {
                let u = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = n - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                descriptor.push(pick as u16);
                scales.push(scale.sample(&mut rng));
            }
            return Environment::new(
                lo,
                len,
                *c,
                seed,
                EnvironmentKind::KStepMisanthrope {
                    descriptor,
                    scale: scales,
                },
            );
        }
    };
    Environment::new(lo, len, 1.0, seed, kind)
}

// ---------------------------------------------------------------------------
// JSON model specification

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Misanthrope,
    KstepExclusion,
    Overtaking,
    KstepMisanthrope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `[[z, weight], ...]`
    Table(Vec<(i64, f64)>),
    PowerLaw {
        exponent: f64,
        right_weight: f64,
        #[serde(default = "default_tail_mass")]
        tail_mass: f64,
        #[serde(default = "default_max_radius")]
        max_radius: i64,
    },
}

fn default_tail_mass() -> f64 {
    1e-6
}

fn default_max_radius() -> i64 {
    10_000
}

impl KernelSpec {
    pub fn build(&self) -> Result<JumpKernel> {
        match self {
            KernelSpec::Table(t) => JumpKernel::table(t),
            KernelSpec::PowerLaw {
                exponent,
                right_weight,
                tail_mass,
                max_radius,
            } => JumpKernel::power_law(*exponent, *right_weight, *tail_mass, *max_radius),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NamedRates {
    /// b(n,m) = s·1{n>0}1{m<K}
    KExclusion(f64),
    /// b(n,m) = s·n·(K−m)
    Linear(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RateTableSpec {
    Matrix(Vec<Vec<f64>>),
    Named(NamedRates),
}

impl RateTableSpec {
    pub fn build(&self, cap: u32) -> Result<RateTable> {
        match self {
            RateTableSpec::Matrix(rows) => RateTable::new(cap, rows.clone()),
            RateTableSpec::Named(NamedRates::KExclusion(s)) => {
                let t = RateTable::k_exclusion(cap, *s);
                t.validate()?;
                Ok(t)
            }
            RateTableSpec::Named(NamedRates::Linear(s)) => {
                let t = RateTable::linear(cap, *s);
                t.validate()?;
                Ok(t)
            }
        }
    }

    fn build_unchecked(&self, cap: u32) -> Result<RateTable> {
        match self {
            RateTableSpec::Matrix(rows) => RateTable::new_unchecked(cap, rows.clone()),
            RateTableSpec::Named(NamedRates::KExclusion(s)) => Ok(RateTable::k_exclusion(cap, *s)),
            RateTableSpec::Named(NamedRates::Linear(s)) => Ok(RateTable::linear(cap, *s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub steps: Vec<i64>,
    pub weight: f64,
    /// One table per step j = 1..k.
    pub rates: Vec<RateTableSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorSpec {
    pub paths: Vec<PathSpec>,
}

/// JSON document describing a model, its disorder law and optionally its flux.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model: ModelKind,
    #[serde(rename = "K", default = "one")]
    pub cap: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_table: Option<RateTableSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<OvertakingRates>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptors: Option<Vec<DescriptorSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disorder: Option<DisorderSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flux: Option<FluxSpec>,
}

fn one() -> u32 {
    1
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.build()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn need<'s, T>(field: &'s Option<T>, name: &str, model: &str) -> Result<&'s T> {
        field
            .as_ref()
            .ok_or_else(|| Error::InvalidSpec(format!("{model} model needs `{name}`")))
    }

    pub fn build(&self) -> Result<Model> {
        let cap = self.cap;
        if cap == 0 {
            return Err(Error::InvalidSpec("K must be at least 1".into()));
        }
        match self.model {
            ModelKind::Misanthrope => {
                let kernel = Self::need(&self.kernel, "kernel", "misanthrope")?.build()?;
                let rates = Self::need(&self.rate_table, "rate_table", "misanthrope")?.build(cap)?;
                Model::misanthrope(kernel, rates)
            }
            ModelKind::KstepExclusion => {
                if cap != 1 {
                    return Err(Error::InvalidSpec("k-step exclusion needs K = 1".into()));
                }
                let k = *Self::need(&self.k, "k", "kstep_exclusion")?;
                let kernel = Self::need(&self.kernel, "kernel", "kstep_exclusion")?.build()?;
                Model::kstep_exclusion(k, kernel)
            }
            ModelKind::Overtaking => {
                if cap != 1 {
                    return Err(Error::InvalidSpec("overtaking needs K = 1".into()));
                }
                let k = *Self::need(&self.k, "k", "overtaking")?;
                let beta = Self::need(&self.beta, "beta", "overtaking")?;
                Model::overtaking(k, beta.clone())
            }
            ModelKind::KstepMisanthrope => {
                let k = *Self::need(&self.k, "k", "kstep_misanthrope")?;
                let specs = Self::need(&self.descriptors, "descriptors", "kstep_misanthrope")?;
                let mut descriptors = Vec::with_capacity(specs.len());
                for d in specs {
                    let mut paths = Vec::with_capacity(d.paths.len());
                    for p in &d.paths {
                        paths.push(PathEntry {
                            steps: p.steps.clone(),
                            weight: p.weight,
                            rates: p.rates.iter().map(|r| r.build(cap)).collect::<Result<_>>()?,
                        });
                    }
                    descriptors.push(PathDescriptor::new(k, cap, paths)?);
                }
                Model::kstep_misanthrope(k, cap, descriptors)
            }
        }
    }

    /// Like [`build`](Self::build) but skips the attractiveness conditions
    /// on rate tables (shapes are still checked). Meant for exhibiting
    /// counterexamples.
    pub fn build_unchecked(&self) -> Result<Model> {
        let cap = self.cap;
        match self.model {
            ModelKind::Misanthrope => {
                let kernel = Self::need(&self.kernel, "kernel", "misanthrope")?.build()?;
                let rates = Self::need(&self.rate_table, "rate_table", "misanthrope")?.build_unchecked(cap)?;
                Ok(Model::misanthrope_unchecked(kernel, rates))
            }
            ModelKind::KstepMisanthrope => {
                let k = *Self::need(&self.k, "k", "kstep_misanthrope")?;
                let specs = Self::need(&self.descriptors, "descriptors", "kstep_misanthrope")?;
                let mut descriptors = Vec::with_capacity(specs.len());
                for d in specs {
                    let mut paths = Vec::with_capacity(d.paths.len());
                    for p in &d.paths {
                        paths.push(PathEntry {
                            steps: p.steps.clone(),
                            weight: p.weight,
                            rates: p
                                .rates
                                .iter()
                                .map(|r| r.build_unchecked(cap))
                                .collect::<Result<_>>()?,
                        });
                    }
                    descriptors.push(PathDescriptor::new_unchecked(k, cap, paths)?);
                }
                Model::kstep_misanthrope(k, cap, descriptors)
            }
            _ => self.build(),
        }
    }

    /// Environment on `lo .. lo + len` drawn from the disorder law.
    pub fn environment(&self, model: &Model, lo: i64, len: usize, seed: u64) -> Result<Environment> {
        sample_environment(self.disorder.as_ref().unwrap_or(&DisorderSpec::None), model, lo, len, seed)
    }

    /// Whether the model carries quenched disorder.
    pub fn is_disordered(&self) -> bool {
        !matches!(self.disorder, None | Some(DisorderSpec::None))
    }
}

/// Convenience: an all-empty torus of `len` sites for `model`.
pub fn torus(model: &Model, len: usize) -> Configuration {
    Configuration::empty(0, len, model.cap(), Boundary::Periodic).expect("nonempty torus")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn homog(len: usize) -> Environment {
        Environment::homogeneous(0, len)
    }

    fn conf(occ: &[u32], cap: u32) -> Configuration {
        Configuration::new(0, occ.to_vec(), cap, Boundary::Periodic).unwrap()
    }

    #[test]
    fn misanthrope_empty_site_never_moves() {
        let model = Model::misanthrope(
            JumpKernel::table(&[(1, 0.5), (-1, 0.5)]).unwrap(),
            RateTable::linear(2, 1.0),
        )
        .unwrap();
        let env = homog(4);
        let fam = model.bind(&env).unwrap();
        let eta = conf(&[0, 2, 1, 0], 2);
        for z in [1, -1] {
            for u in [0.0, 0.3, 0.99] {
                assert_eq!(fam.apply(0, &Aux::Jump { z, u }, &eta), eta);
            }
        }
    }

    #[test]
    fn k_exclusion_full_target_blocks() {
        let model = Model::misanthrope(
            JumpKernel::table(&[(1, 1.0)]).unwrap(),
            RateTable::k_exclusion(2, 1.0),
        )
        .unwrap();
        let env = homog(3);
        let fam = model.bind(&env).unwrap();
        let eta = conf(&[2, 2, 0], 2);
        assert_eq!(fam.apply(0, &Aux::Jump { z: 1, u: 0.0 }, &eta), eta);
    }

    #[test]
    fn tasep_jump_by_rate_table() {
        let model = Model::tasep();
        let env = homog(2);
        let fam = model.bind(&env).unwrap();
        let eta = conf(&[1, 0], 1);
        let out = fam.apply(0, &Aux::Jump { z: 1, u: 0.3 }, &eta);
        assert_eq!(out.occupancies(), &[0, 1]);
    }

    #[test]
    fn site_disorder_thins_by_alpha() {
        let model = Model::tasep();
        let env = Environment::new(0, 2, 0.5, 0, EnvironmentKind::SiteRates(vec![0.5, 2.0])).unwrap();
        let fam = model.bind(&env).unwrap();
        // m(V) = ‖b‖/c = 2; accept iff 2u < α(x)
        assert_eq!(fam.total_rate(), 2.0);
        let eta = conf(&[1, 0], 1);
        assert_eq!(fam.apply(0, &Aux::Jump { z: 1, u: 0.2 }, &eta).occupancies(), &[0, 1]);
        assert_eq!(fam.apply(0, &Aux::Jump { z: 1, u: 0.3 }, &eta), eta);
        let eta = conf(&[0, 1], 1);
        assert_eq!(fam.apply(1, &Aux::Jump { z: 1, u: 0.99 }, &eta).occupancies(), &[1, 0]);
    }

    fn path(steps: &[i32]) -> Aux {
        let mut s = [0i32; MAX_K];
        s[..steps.len()].copy_from_slice(steps);
        Aux::Path { steps: s, u: 0.5 }
    }

    #[test]
    fn kstep_exclusion_examples() {
        let model = Model::kstep_exclusion(2, JumpKernel::table(&[(1, 1.0)]).unwrap()).unwrap();
        let env = homog(4);
        let fam = model.bind(&env).unwrap();
        let empty_start = conf(&[0, 1, 0, 0], 1);
        assert_eq!(fam.apply(0, &path(&[1, 2]), &empty_start), empty_start);
        let blocked = conf(&[1, 1, 1, 0], 1);
        assert_eq!(fam.apply(0, &path(&[1, 2]), &blocked), blocked);
        let hop = conf(&[1, 1, 0, 0], 1);
        assert_eq!(fam.apply(0, &path(&[1, 2]), &hop).occupancies(), &[0, 1, 1, 0]);
        // walk returning to the start is absorbed
        let back = conf(&[1, 1, 0, 0], 1);
        assert_eq!(fam.apply(1, &path(&[-1, 0]), &back), back);
    }

    #[test]
    fn kstep_walks_are_absorbed_at_origin() {
        let model = Model::kstep_exclusion(3, JumpKernel::table(&[(1, 0.5), (-1, 0.5)]).unwrap()).unwrap();
        let env = homog(16);
        let fam = model.bind(&env).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            if let Aux::Path { steps, .. } = fam.sample_aux(&mut rng) {
                if let Some(i) = steps[..3].iter().position(|&z| z == 0) {
                    assert!(steps[i..3].iter().all(|&z| z == 0));
                }
            }
        }
        let total: f64 = model.walks.iter().map(|w| w.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    fn overtaking(b1: f64, b2: f64) -> Model {
        Model::overtaking(
            2,
            OvertakingRates {
                right: vec![b1, b2],
                left: vec![0.0, 0.0],
            },
        )
        .unwrap()
    }

    #[test]
    fn overtaking_examples() {
        let model = overtaking(1.0, 0.5);
        let env = homog(5);
        let fam = model.bind(&env).unwrap();
        let empty = conf(&[0, 1, 0, 0, 0], 1);
        assert_eq!(fam.apply(0, &Aux::Overtake { dir: 1, u: 0.1 }, &empty), empty);
        let over = conf(&[1, 1, 0, 0, 0], 1);
        assert_eq!(
            fam.apply(0, &Aux::Overtake { dir: 1, u: 0.4 }, &over).occupancies(),
            &[0, 1, 1, 0, 0]
        );
        assert_eq!(fam.apply(0, &Aux::Overtake { dir: 1, u: 0.6 }, &over), over);
        let wall = conf(&[1, 1, 1, 0, 0], 1);
        assert_eq!(fam.apply(0, &Aux::Overtake { dir: 1, u: 0.0 }, &wall), wall);
        assert_eq!(fam.apply(0, &Aux::Overtake { dir: -1, u: 0.0 }, &over), over);
    }

    fn product_descriptor(beta: &[f64], cap: u32, left: bool) -> PathDescriptor {
        let k = beta.len();
        let rates: Vec<RateTable> = beta.iter().map(|&b| RateTable::linear(cap, 2.0 * b)).collect();
        let right: Vec<i64> = (1..=k as i64).collect();
        let mut paths = vec![PathEntry {
            steps: right.clone(),
            weight: 0.5,
            rates: rates.clone(),
        }];
        if left {
            paths.push(PathEntry {
                steps: right.iter().map(|z| -z).collect(),
                weight: 0.5,
                rates: beta.iter().map(|_| RateTable::linear(cap, 0.0)).collect(),
            });
        }
        PathDescriptor::new_unchecked(k, cap, paths).unwrap()
    }

    #[test]
    fn kstep_misanthrope_reproduces_overtaking() {
        let beta = [1.0, 0.5];
        let over = overtaking(beta[0], beta[1]);
        let desc = product_descriptor(&beta, 1, true);
        let kmis = Model::kstep_misanthrope(2, 1, vec![desc.clone()]).unwrap();
        let env = homog(5);
        let f_over = over.bind(&env).unwrap();
        let f_kmis = kmis.bind(&env).unwrap();
        assert_eq!(f_over.total_rate(), 2.0);
        assert_eq!(f_kmis.total_rate(), 2.0);
        // path 0 is the left path in lexicographic order
        let left_v1 = desc.v1_for(0);
        let right_v1 = desc.v1_for(1);
        for code in 0..32u32 {
            let occ: Vec<u32> = (0..5).map(|i| (code >> i) & 1).collect();
            let eta = conf(&occ, 1);
            for x in 0..5 {
                for &u in &[0.05, 0.3, 0.45, 0.55, 0.8, 0.95] {
                    for (dir, v1) in [(1i8, right_v1), (-1, left_v1)] {
                        let a = f_over.apply(x, &Aux::Overtake { dir, u }, &eta);
                        let b = f_kmis.apply(x, &Aux::Uniform2 { v1, v2: u }, &eta);
                        assert_eq!(a, b, "code {code} x {x} u {u} dir {dir}");
                    }
                }
            }
        }
    }

    #[test]
    fn kstep_misanthrope_with_one_step_is_misanthrope() {
        let kernel = JumpKernel::table(&[(1, 0.7), (-1, 0.3)]).unwrap();
        let rates = RateTable::linear(2, 1.0);
        let mis = Model::misanthrope(kernel.clone(), rates.clone()).unwrap();
        let desc = PathDescriptor::new(
            1,
            2,
            kernel
                .entries()
                .map(|(z, p)| PathEntry {
                    steps: vec![z],
                    weight: p,
                    rates: vec![rates.clone()],
                })
                .collect(),
        )
        .unwrap();
        let kmis = Model::kstep_misanthrope(1, 2, vec![desc.clone()]).unwrap();
        let env = homog(3);
        let (fa, fb) = (mis.bind(&env).unwrap(), kmis.bind(&env).unwrap());
        assert_eq!(fa.total_rate(), fb.total_rate());
        for code in 0..27u32 {
            let occ = vec![code % 3, (code / 3) % 3, code / 9];
            let eta = conf(&occ, 2);
            for x in 0..3 {
                for (i, z) in [(0usize, -1i64), (1, 1)] {
                    for &u in &[0.1, 0.2, 0.4, 0.6, 0.9] {
                        let a = fa.apply(x, &Aux::Jump { z, u }, &eta);
                        let b = fb.apply(x, &Aux::Uniform2 { v1: desc.v1_for(i), v2: u }, &eta);
                        assert_eq!(a, b);
                    }
                }
            }
        }
    }

    #[test]
    fn thinning_matches_generator_rates() {
        // frequency of each target under random aux equals c(x,y,η)/m(V)
        let model = Model::kstep_exclusion(2, JumpKernel::table(&[(1, 0.6), (-1, 0.4)]).unwrap()).unwrap();
        let env = homog(7);
        let fam = model.bind(&env).unwrap();
        let eta = conf(&[0, 1, 1, 1, 0, 1, 0], 1);
        let occ = |y: i64| eta.get(y).unwrap();
        let rates = fam.jump_rates(3, occ);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let mut hits = std::collections::BTreeMap::new();
        for _ in 0..n {
            let v = fam.sample_aux(&mut rng);
            if let Some(y) = fam.target(3, &v, occ) {
                *hits.entry(y).or_insert(0usize) += 1;
            }
        }
        for (y, r) in rates {
            let p = r / fam.total_rate();
            let f = *hits.get(&y).unwrap_or(&0) as f64 / n as f64;
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((f - p).abs() < 5.0 * sd, "target {y}: {f} vs {p}");
        }
    }

    #[test]
    fn monotone_models_certify() {
        let env = homog(4);
        let model = Model::misanthrope(
            JumpKernel::table(&[(1, 0.7), (-1, 0.3)]).unwrap(),
            RateTable::linear(2, 1.0),
        )
        .unwrap();
        let fam = model.bind(&env).unwrap();
        let r = check_monotone(&fam, 3, 200, 1, u64::MAX).unwrap();
        assert!(r.is_certificate());
        assert_eq!(r.coverage(), 1.0);
    }

    #[test]
    fn broken_rates_give_counterexample() {
        let env = homog(3);
        let rates = RateTable::new_unchecked(2, vec![vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.5, 0.5, 0.0]]).unwrap();
        assert!(rates.validate().is_err());
        let model = Model::misanthrope_unchecked(JumpKernel::table(&[(1, 1.0)]).unwrap(), rates);
        let fam = model.bind(&env).unwrap();
        let r = check_monotone(&fam, 3, 200, 1, u64::MAX).unwrap();
        assert!(!r.is_certificate());
    }

    #[test]
    fn increasing_path_rates_give_counterexample() {
        let env = homog(5);
        let paths = vec![PathEntry {
            steps: vec![1, 2],
            weight: 1.0,
            rates: vec![RateTable::k_exclusion(1, 0.5), RateTable::k_exclusion(1, 1.0)],
        }];
        assert!(PathDescriptor::new(2, 1, paths.clone()).is_err());
        let desc = PathDescriptor::new_unchecked(2, 1, paths).unwrap();
        let model = Model::kstep_misanthrope(2, 1, vec![desc]).unwrap();
        let fam = model.bind(&env).unwrap();
        let r = check_monotone(&fam, 5, 200, 1, u64::MAX).unwrap();
        match r {
            MonotoneReport::Counterexample { eta_after, xi_after, .. } => {
                assert!(eta_after.iter().zip(&xi_after).any(|(a, b)| a > b));
            }
            _ => panic!("expected a counterexample"),
        }
    }

    #[test]
    fn budget_truncates_with_partial_coverage() {
        let env = homog(4);
        let model = Model::tasep();
        let fam = model.bind(&env).unwrap();
        let r = check_monotone(&fam, 4, 100, 1, 1000).unwrap();
        assert!(r.is_certificate());
        assert!(r.coverage() > 0.0 && r.coverage() < 1.0);
    }

    #[test]
    fn environment_sampling() {
        let model = Model::tasep();
        let spec = DisorderSpec::SiteRates {
            law: Law::Uniform { lo: 0.5, hi: 2.0 },
            c: 0.5,
        };
        let n = 100_000;
        let env = sample_environment(&spec, &model, 0, n, 42).unwrap();
        let again = sample_environment(&spec, &model, 0, n, 42).unwrap();
        assert_eq!(env, again);
        let vals: Vec<f64> = (0..n as i64).map(|x| env.site_rate(x)).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = 1.5 / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 1.25).abs() < 3.0 * sd, "mean {mean}");
        let none = sample_environment(&DisorderSpec::None, &model, 0, 10, 1).unwrap();
        assert!((0..10).all(|x| none.site_rate(x) == 1.0));
        let bad = DisorderSpec::SiteRates {
            law: Law::Uniform { lo: 0.4, hi: 2.0 },
            c: 0.5,
        };
        assert!(sample_environment(&bad, &model, 0, 10, 1).is_err());
    }

    #[test]
    fn overtaking_disorder_rejects_bad_order() {
        assert!(Model::overtaking(
            2,
            OvertakingRates {
                right: vec![0.5, 1.0],
                left: vec![0.0, 0.0]
            }
        )
        .is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let text = r#"{
            "model": "kstep_misanthrope", "K": 2, "k": 2,
            "descriptors": [{"paths": [
                {"steps": [1, 2], "weight": 0.7, "rates": [{"k_exclusion": 1.0}, [[0,0,0],[0.3,0.3,0],[0.3,0.3,0]]]},
                {"steps": [-1, -2], "weight": 0.3, "rates": [{"linear": 0.1}, {"k_exclusion": 0.1}]}
            ]}],
            "disorder": {"kstep_misanthrope": {"weights": [1.0], "scale": {"uniform": {"lo": 0.5, "hi": 1.7}}, "c": 0.5}}
        }"#;
        let spec = ModelSpec::from_json(text).unwrap();
        let back = ModelSpec::from_json(&spec.to_json().unwrap()).unwrap();
        assert_eq!(spec, back);
        assert_eq!(spec.to_json().unwrap(), back.to_json().unwrap());
        let tasep = r#"{"model":"misanthrope","kernel":{"table":[[1,1.0]]},"rate_table":[[0,0],[1,0]],"flux":{"polynomial":[0,1,-1]}}"#;
        let s = ModelSpec::from_json(tasep).unwrap();
        assert_eq!(s.cap, 1);
        assert!(ModelSpec::from_json(r#"{"model":"misanthrope","kernel":{"table":[[1,1.0]]},"rate_table":[[0,0],[0,1]]}"#).is_err());
    }

    #[test]
    fn power_law_truncation_is_small() {
        let k = JumpKernel::power_law(4.0, 0.8, 1e-6, 10_000).unwrap();
        let norm: f64 = (1..=100_000).map(|z| (z as f64).powi(-4)).sum();
        let r = k.radius();
        let tail: f64 = ((r + 1)..=100_000).map(|z| (z as f64).powi(-4)).sum::<f64>() / norm;
        assert!(tail < 1e-6);
        assert!(r > 10);
    }

    fn family_strategy() -> impl Strategy<Value = usize> {
        0usize..4
    }

    fn zoo() -> Vec<Model> {
        vec![
            Model::misanthrope(
                JumpKernel::table(&[(1, 0.6), (-1, 0.2), (2, 0.2)]).unwrap(),
                RateTable::linear(3, 1.0),
            )
            .unwrap(),
            Model::kstep_exclusion(3, JumpKernel::table(&[(1, 0.7), (-1, 0.3)]).unwrap()).unwrap(),
            overtaking(1.0, 0.5),
            Model::kstep_misanthrope(2, 1, vec![product_descriptor(&[1.0, 0.3], 1, true)]).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn apply_is_conservative_and_local(which in family_strategy(), occ in prop::collection::vec(0u32..4, 24), x in 0i64..24, seed in 0u64..1000) {
            let models = zoo();
            let model = &models[which];
            let occ: Vec<u32> = occ.into_iter().map(|n| n.min(model.cap())).collect();
            let env = homog(24);
            let fam = model.bind(&env).unwrap();
            let eta = conf(&occ, model.cap());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = fam.sample_aux(&mut rng);
            let out = fam.apply(x, &v, &eta);
            prop_assert_eq!(out.total(), eta.total());
            for y in 0..24i64 {
                let d = (y - x).rem_euclid(24).min((x - y).rem_euclid(24));
                if d > fam.locality_radius() {
                    prop_assert_eq!(out.get(y), eta.get(y));
                }
            }
        }
    }
}
