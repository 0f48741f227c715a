//! Configurations on finite windows of Z, quenched environments, density
//! profiles and the macroscopic metrics Δ and TV.
//!
//! A [`Configuration`] stores occupancies on the sites `window_lo..=window_hi`
//! together with a boundary policy. Under [`Boundary::ConstantTails`] the sites
//! outside the window are reservoir (ghost) sites whose occupancies are drawn
//! afresh at every event from the tail density; under [`Boundary::Periodic`]
//! the window is a torus.
//!
//! Density profiles are exact front lists ([`PiecewiseConstantProfile`]), so
//! the Δ-distance and the total variation are computed without any grid.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What lies outside the lattice window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Reservoir sites frozen at the given densities (in `[0, K]`).
    ConstantTails { left: f64, right: f64 },
    /// The window is a torus.
    Periodic,
}

/// Particle occupancies on a finite window of Z.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    window_lo: i64,
    occupancies: Vec<u32>,
    cap: u32,
    boundary: BoundaryKey,
}

// Boundary with bit-exact equality so that configurations can be `Eq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BoundaryKey {
    Tails(u64, u64),
    Periodic,
}

impl From<Boundary> for BoundaryKey {
    fn from(b: Boundary) -> Self {
        match b {
            Boundary::ConstantTails { left, right } => {
                BoundaryKey::Tails(left.to_bits(), right.to_bits())
            }
            Boundary::Periodic => BoundaryKey::Periodic,
        }
    }
}

impl From<BoundaryKey> for Boundary {
    fn from(b: BoundaryKey) -> Self {
        match b {
            BoundaryKey::Tails(l, r) => Boundary::ConstantTails {
                left: f64::from_bits(l),
                right: f64::from_bits(r),
            },
            BoundaryKey::Periodic => Boundary::Periodic,
        }
    }
}

impl Configuration {
    pub fn new(window_lo: i64, occupancies: Vec<u32>, cap: u32, boundary: Boundary) -> Result<Self> {
        if cap == 0 {
            return Err(Error::InvalidConfiguration("cap K must be at least 1".into()));
        }
        if occupancies.is_empty() {
            return Err(Error::InvalidConfiguration("empty window".into()));
        }
        if let Some((i, &n)) = occupancies.iter().enumerate().find(|(_, &n)| n > cap) {
            return Err(Error::InvalidConfiguration(format!(
                "site {} holds {} particles, cap is {}",
                window_lo + i as i64,
                n,
                cap
            )));
        }
        if let Boundary::ConstantTails { left, right } = boundary {
            let k = cap as f64;
            if !(0.0..=k).contains(&left) || !(0.0..=k).contains(&right) {
                return Err(Error::InvalidConfiguration(format!(
                    "tail densities ({left}, {right}) outside [0, {k}]"
                )));
            }
        }
        Ok(Self {
            window_lo,
            occupancies,
            cap,
            boundary: boundary.into(),
        })
    }

    /// All sites empty.
    pub fn empty(window_lo: i64, len: usize, cap: u32, boundary: Boundary) -> Result<Self> {
        Self::new(window_lo, vec![0; len], cap, boundary)
    }

    pub fn window_lo(&self) -> i64 {
        self.window_lo
    }

    pub fn window_hi(&self) -> i64 {
        self.window_lo + self.occupancies.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.occupancies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancies.is_empty()
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary.into()
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.boundary, BoundaryKey::Periodic)
    }

    pub fn occupancies(&self) -> &[u32] {
        &self.occupancies
    }

    pub fn total(&self) -> u64 {
        self.occupancies.iter().map(|&n| n as u64).sum()
    }

    /// Storage index of site `x`: wrapped on a torus, `None` outside a
    /// non-periodic window.
    #[inline]
    pub fn index(&self, x: i64) -> Option<usize> {
        let len = self.occupancies.len() as i64;
        let off = x - self.window_lo;
        if (0..len).contains(&off) {
            Some(off as usize)
        } else if self.is_periodic() {
            Some(off.rem_euclid(len) as usize)
        } else {
            None
        }
    }

    /// Occupancy of a site inside the window (or any site on a torus).
    #[inline]
    pub fn get(&self, x: i64) -> Option<u32> {
        self.index(x).map(|i| self.occupancies[i])
    }

    /// Overwrites one occupancy; panics outside the window.
    pub fn set(&mut self, x: i64, n: u32) {
        assert!(n <= self.cap, "occupancy {n} exceeds cap {}", self.cap);
        let i = self.index(x).expect("site outside window");
        self.occupancies[i] = n;
    }

    /// Density of the reservoir on the side of `x` (meaningless on a torus).
    pub fn tail_density(&self, x: i64) -> f64 {
        match self.boundary {
            BoundaryKey::Tails(l, r) => {
                if x < self.window_lo {
                    f64::from_bits(l)
                } else {
                    f64::from_bits(r)
                }
            }
            BoundaryKey::Periodic => 0.0,
        }
    }

    pub(crate) fn occupancies_mut(&mut self) -> &mut [u32] {
        &mut self.occupancies
    }

    /// Translate the window by `shift` sites, keeping the occupancy vector:
    /// the result is τ_{shift} applied to this configuration.
    pub fn translated(&self, shift: i64) -> Self {
        Self {
            window_lo: self.window_lo - shift,
            ..self.clone()
        }
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.window_lo != other.window_lo
            || self.occupancies.len() != other.occupancies.len()
            || self.cap != other.cap
            || self.boundary != other.boundary
        {
            return Err(Error::WindowMismatch(format!(
                "[{}, {}] K={} vs [{}, {}] K={}",
                self.window_lo,
                self.window_hi(),
                self.cap,
                other.window_lo,
                other.window_hi(),
                other.cap
            )));
        }
        Ok(())
    }

    /// CSV rows `site,occupancy`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["site", "occupancy"])?;
        for (i, n) in self.occupancies.iter().enumerate() {
            w.write_record(&[(self.window_lo + i as i64).to_string(), n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the rows written by [`Configuration::write_csv`]; sites must be
    /// consecutive.
    pub fn read_csv<R: Read>(input: R, cap: u32, boundary: Boundary) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut lo = None;
        let mut occ = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let site: i64 = parse_field(&rec, 0)?;
            let n: u32 = parse_field(&rec, 1)?;
            let expected = lo.unwrap_or(site) + occ.len() as i64;
            if site != expected {
                return Err(Error::Parse(format!("expected site {expected}, found {site}")));
            }
            lo.get_or_insert(site);
            occ.push(n);
        }
        let lo = lo.ok_or_else(|| Error::Parse("no configuration rows".into()))?;
        Self::new(lo, occ, cap, boundary)
    }
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    let s = rec
        .get(i)
        .ok_or_else(|| Error::Parse(format!("missing column {i}")))?
        .trim();
    s.parse()
        .map_err(|_| Error::Parse(format!("cannot parse {s:?} in column {i}")))
}

/// Coordinatewise order η ≤ ξ.
pub fn leq(eta: &Configuration, xi: &Configuration) -> Result<bool> {
    eta.same_shape(xi)?;
    Ok(eta
        .occupancies
        .iter()
        .zip(&xi.occupancies)
        .all(|(a, b)| a <= b))
}

/// Per-site rates of an overtaking environment: `right[j-1]` is β^j and
/// `left[j-1]` is β^{-j}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvertakingRates {
    pub right: Vec<f64>,
    pub left: Vec<f64>,
}

impl OvertakingRates {
    /// β^{j+1} ≤ β^j and β^{-j-1} ≤ β^{-j}, β^1 + β^{-1} > 0.
    pub fn validate(&self) -> Result<()> {
        if self.right.len() != self.left.len() || self.right.is_empty() {
            return Err(Error::InvalidEnvironment(
                "overtaking rates need k right and k left entries".into(),
            ));
        }
        let bad = |v: &[f64]| v.iter().any(|&b| !(b >= 0.0) || !b.is_finite());
        if bad(&self.right) || bad(&self.left) {
            return Err(Error::InvalidEnvironment("negative overtaking rate".into()));
        }
        for side in [&self.right, &self.left] {
            if side.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::InvalidEnvironment(format!(
                    "overtaking rates must be nonincreasing in the jump length: {side:?}"
                )));
            }
        }
        if self.right[0] + self.left[0] <= 0.0 {
            return Err(Error::InvalidEnvironment(
                "overtaking rates need beta^1 + beta^-1 > 0".into(),
            ));
        }
        Ok(())
    }

    /// β^{j} for signed `j ≠ 0`.
    #[inline]
    pub fn rate(&self, j: i64) -> f64 {
        if j > 0 {
            self.right[(j - 1) as usize]
        } else {
            self.left[(-j - 1) as usize]
        }
    }

    pub fn max(&self) -> f64 {
        self.right
            .iter()
            .chain(&self.left)
            .copied()
            .fold(0.0, f64::max)
    }
}

/// Disorder values attached to the sites of a window.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvironmentKind {
    /// Homogeneous medium, α ≡ 1.
    None,
    /// Site rates α(x) in `[c, 1/c]`.
    SiteRates(Vec<f64>),
    /// Bond rates α(x, x+z), stored site-major over the listed displacements.
    BondRates { offsets: Vec<i64>, rates: Vec<f64> },
    /// Per-site overtaking rate tuples.
    Overtaking(Vec<OvertakingRates>),
    /// Per-site descriptor index and rate multiplier for k-step misanthropes.
    KStepMisanthrope { descriptor: Vec<u16>, scale: Vec<f64> },
}

/// A quenched environment on the sites `lo .. lo + len`; lookups wrap around
/// so a torus and its environment share indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    lo: i64,
    len: usize,
    c: f64,
    seed: u64,
    kind: EnvironmentKind,
}

impl Environment {
    /// Homogeneous environment covering `lo .. lo + len`.
    pub fn homogeneous(lo: i64, len: usize) -> Self {
        Self {
            lo,
            len: len.max(1),
            c: 1.0,
            seed: 0,
            kind: EnvironmentKind::None,
        }
    }

    /// Validates `kind` against the ellipticity constant `c ∈ (0, 1]`.
    pub fn new(lo: i64, len: usize, c: f64, seed: u64, kind: EnvironmentKind) -> Result<Self> {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::InvalidEnvironment(format!("c = {c} not in (0, 1]")));
        }
        if len == 0 {
            return Err(Error::InvalidEnvironment("empty window".into()));
        }
        let in_bounds = |a: f64| a >= c * (1.0 - 1e-12) && a <= (1.0 / c) * (1.0 + 1e-12);
        match &kind {
            EnvironmentKind::None => {}
            EnvironmentKind::SiteRates(a) => {
                if a.len() != len {
                    return Err(Error::InvalidEnvironment("site rate count != window".into()));
                }
                if let Some(bad) = a.iter().find(|&&v| !in_bounds(v)) {
                    return Err(Error::InvalidEnvironment(format!(
                        "site rate {bad} outside [{c}, {}]",
                        1.0 / c
                    )));
                }
            }
            EnvironmentKind::BondRates { offsets, rates } => {
                if rates.len() != len * offsets.len() {
                    return Err(Error::InvalidEnvironment("bond rate count mismatch".into()));
                }
                if let Some(bad) = rates.iter().find(|&&v| !in_bounds(v)) {
                    return Err(Error::InvalidEnvironment(format!(
                        "bond rate {bad} outside [{c}, {}]",
                        1.0 / c
                    )));
                }
            }
            EnvironmentKind::Overtaking(b) => {
                if b.len() != len {
                    return Err(Error::InvalidEnvironment("overtaking tuple count != window".into()));
                }
                for t in b {
                    t.validate()?;
                }
            }
            EnvironmentKind::KStepMisanthrope { descriptor, scale } => {
                if descriptor.len() != len || scale.len() != len {
                    return Err(Error::InvalidEnvironment("k-step descriptor count mismatch".into()));
                }
                if let Some(bad) = scale.iter().find(|&&v| !in_bounds(v)) {
                    return Err(Error::InvalidEnvironment(format!(
                        "rate multiplier {bad} outside [{c}, {}]",
                        1.0 / c
                    )));
                }
            }
        }
        Ok(Self { lo, len, c, seed, kind })
    }

    pub fn kind(&self) -> &EnvironmentKind {
        &self.kind
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    fn slot(&self, x: i64) -> usize {
        (x - self.lo).rem_euclid(self.len as i64) as usize
    }

    /// Site rate α(x); 1 without site disorder.
    #[inline]
    pub fn site_rate(&self, x: i64) -> f64 {
        match &self.kind {
            EnvironmentKind::SiteRates(a) => a[self.slot(x)],
            EnvironmentKind::KStepMisanthrope { scale, .. } => scale[self.slot(x)],
            _ => 1.0,
        }
    }

    /// Bond rate α(x, x+z) for bond disorder, otherwise the site rate.
    #[inline]
    pub fn bond_rate(&self, x: i64, z: i64) -> f64 {
        match &self.kind {
            EnvironmentKind::BondRates { offsets, rates } => {
                match offsets.iter().position(|&o| o == z) {
                    Some(k) => rates[self.slot(x) * offsets.len() + k],
                    None => 1.0,
                }
            }
            _ => self.site_rate(x),
        }
    }

    pub fn overtaking(&self, x: i64) -> Option<&OvertakingRates> {
        match &self.kind {
            EnvironmentKind::Overtaking(b) => Some(&b[self.slot(x)]),
            _ => None,
        }
    }

    pub fn descriptor(&self, x: i64) -> usize {
        match &self.kind {
            EnvironmentKind::KStepMisanthrope { descriptor, .. } => descriptor[self.slot(x)] as usize,
            _ => 0,
        }
    }

    /// The environment seen from site `shift`: τ_shift α.
    pub fn translated(&self, shift: i64) -> Self {
        Self {
            lo: self.lo - shift,
            ..self.clone()
        }
    }
}

/// A front of a step function: the value changes at `position`, `left` is the
/// value just to the left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Front {
    pub position: f64,
    pub left: f64,
}

/// Right-continuous step function on R given by its fronts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstantProfile {
    fronts: Vec<Front>,
    right: f64,
}

impl PiecewiseConstantProfile {
    /// Positions must be strictly increasing; consecutive equal values are merged.
    pub fn new(fronts: Vec<Front>, right: f64) -> Result<Self> {
        if fronts.windows(2).any(|w| !(w[0].position < w[1].position)) {
            return Err(Error::InvalidProfile("front positions must be strictly increasing".into()));
        }
        if fronts
            .iter()
            .any(|f| !f.position.is_finite() || !f.left.is_finite())
            || !right.is_finite()
        {
            return Err(Error::InvalidProfile("non-finite front".into()));
        }
        Ok(Self::merged(fronts, right))
    }

    fn merged(fronts: Vec<Front>, right: f64) -> Self {
        let mut out: Vec<Front> = Vec::with_capacity(fronts.len());
        for (i, f) in fronts.iter().enumerate() {
            let next = fronts.get(i + 1).map_or(right, |g| g.left);
            if f.left != next {
                out.push(*f);
            }
        }
        Self { fronts: out, right }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            fronts: Vec::new(),
            right: value,
        }
    }

    /// Riemann datum: `left` on (-∞, at), `right` on [at, ∞).
    pub fn riemann(left: f64, right: f64, at: f64) -> Self {
        Self::merged(vec![Front { position: at, left }], right)
    }

    /// Step function with `values[i]` on `[breaks[i-1], breaks[i])`, where
    /// `values` has one more entry than `breaks`.
    pub fn from_steps(breaks: &[f64], values: &[f64]) -> Result<Self> {
        if values.len() != breaks.len() + 1 {
            return Err(Error::InvalidProfile("need one more value than breakpoints".into()));
        }
        let fronts = breaks
            .iter()
            .zip(values)
            .map(|(&position, &left)| Front { position, left })
            .collect();
        Self::new(fronts, *values.last().unwrap())
    }

    pub fn fronts(&self) -> &[Front] {
        &self.fronts
    }

    pub fn left_tail(&self) -> f64 {
        self.fronts.first().map_or(self.right, |f| f.left)
    }

    pub fn right_tail(&self) -> f64 {
        self.right
    }

    /// Positions of the first and last fronts.
    pub fn support(&self) -> Option<(f64, f64)> {
        Some((self.fronts.first()?.position, self.fronts.last()?.position))
    }

    /// Values of the successive pieces, left tail first.
    pub fn values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.fronts.iter().map(|f| f.left).collect();
        v.push(self.right);
        v
    }

    /// Value at `x` (right-continuous).
    pub fn value(&self, x: f64) -> f64 {
        let i = self.fronts.partition_point(|f| f.position <= x);
        self.fronts.get(i).map_or(self.right, |f| f.left)
    }

    /// ∫_a^b of the profile.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return -self.integral(b, a);
        }
        let mut acc = 0.0;
        let mut x = a;
        let start = self.fronts.partition_point(|f| f.position <= a);
        for f in &self.fronts[start..] {
            if f.position >= b {
                break;
            }
            acc += f.left * (f.position - x);
            x = f.position;
        }
        acc + self.value(x) * (b - x)
    }

    /// Total mass, defined when both tails vanish.
    pub fn mass(&self) -> Option<f64> {
        if self.left_tail() != 0.0 || self.right != 0.0 {
            return None;
        }
        match self.support() {
            None => Some(0.0),
            Some((a, b)) => Some(self.integral(a, b)),
        }
    }

    /// Sum of absolute jumps.
    pub fn total_variation(&self) -> f64 {
        let v = self.values();
        v.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    /// Translate by `dx`.
    pub fn shifted(&self, dx: f64) -> Self {
        Self {
            fronts: self
                .fronts
                .iter()
                .map(|f| Front {
                    position: f.position + dx,
                    left: f.left,
                })
                .collect(),
            right: self.right,
        }
    }

    /// Restriction to `[a, b)`, zero outside.
    pub fn restricted(&self, a: f64, b: f64) -> Self {
        let mut fronts = vec![Front {
            position: a,
            left: 0.0,
        }];
        for f in &self.fronts {
            if f.position > a && f.position < b {
                fronts.push(*f);
            }
        }
        fronts.push(Front {
            position: b,
            left: self.value(b - (b - a) * 1e-15).max(self.value_before(b)),
        });
        // the piece ending at b carries the value just left of b
        let n = fronts.len();
        fronts[n - 1].left = self.value_before(b);
        Self::merged(fronts, 0.0)
    }

    fn value_before(&self, x: f64) -> f64 {
        let i = self.fronts.partition_point(|f| f.position < x);
        self.fronts.get(i).map_or(self.right, |f| f.left)
    }

    /// CSV rows `position,value`; the first row carries position `-inf` and the
    /// left tail, then one row per front with the value to its right.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["position", "value"])?;
        w.write_record(&["-inf".to_string(), fmt_f64(self.left_tail())])?;
        let values = self.values();
        for (f, v) in self.fronts.iter().zip(&values[1..]) {
            w.write_record(&[fmt_f64(f.position), fmt_f64(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut rows: Vec<(f64, f64)> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let pos = rec.get(0).unwrap_or("").trim();
            let pos = if pos == "-inf" {
                f64::NEG_INFINITY
            } else {
                parse_field(&rec, 0)?
            };
            rows.push((pos, parse_field(&rec, 1)?));
        }
        let (&(p0, v0), rest) = rows
            .split_first()
            .ok_or_else(|| Error::Parse("no profile rows".into()))?;
        if p0 != f64::NEG_INFINITY {
            return Err(Error::Parse("first profile row must be the -inf tail".into()));
        }
        let mut fronts = Vec::with_capacity(rest.len());
        let mut prev = v0;
        for &(p, v) in rest {
            fronts.push(Front {
                position: p,
                left: prev,
            });
            prev = v;
        }
        Self::new(fronts, prev)
    }
}

/// Shortest representation that round-trips.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Density step function of π^N(η): value η(y) on `[y/N, (y+1)/N)` for the
/// sites of the window, zero outside.
pub fn empirical_measure(eta: &Configuration, scale: u64) -> PiecewiseConstantProfile {
    let n = scale.max(1) as f64;
    let lo = eta.window_lo();
    let mut fronts = Vec::with_capacity(eta.len() + 1);
    let mut prev = 0.0;
    for (i, &occ) in eta.occupancies().iter().enumerate() {
        let v = occ as f64;
        if v != prev {
            fronts.push(Front {
                position: (lo + i as i64) as f64 / n,
                left: prev,
            });
            prev = v;
        }
    }
    if prev != 0.0 {
        fronts.push(Front {
            position: (eta.window_hi() + 1) as f64 / n,
            left: prev,
        });
    }
    PiecewiseConstantProfile { fronts, right: 0.0 }
}

/// sup_x |∫_{-∞}^x (u - v)|, exact for step functions with equal tails.
pub fn delta_distance(u: &PiecewiseConstantProfile, v: &PiecewiseConstantProfile) -> Result<f64> {
    if u.left_tail() != v.left_tail() || u.right_tail() != v.right_tail() {
        return Err(Error::UnequalTails {
            left_a: u.left_tail(),
            left_b: v.left_tail(),
            right_a: u.right_tail(),
            right_b: v.right_tail(),
        });
    }
    let mut xs: Vec<f64> = u
        .fronts()
        .iter()
        .chain(v.fronts())
        .map(|f| f.position)
        .collect();
    if xs.is_empty() {
        return Ok(0.0);
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut cum = 0.0f64;
    let mut best = 0.0f64;
    for w in xs.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        cum += (u.value(mid) - v.value(mid)) * (w[1] - w[0]);
        best = best.max(cum.abs());
    }
    Ok(best)
}

/// Total variation of a step profile.
pub fn total_variation(u: &PiecewiseConstantProfile) -> f64 {
    u.total_variation()
}

/// A density field on R that can be integrated exactly; either a step
/// function or a field that is monotone between its breakpoints.
pub trait DensityField {
    fn value(&self, x: f64) -> f64;
    /// ∫_a^b of the field.
    fn integral(&self, a: f64, b: f64) -> f64;
    /// Discontinuities and changes of regime inside `(a, b)`.
    fn breakpoints(&self, a: f64, b: f64) -> Vec<f64>;
    /// Whether the field is constant between consecutive breakpoints.
    fn is_step(&self) -> bool;
    /// Points of `(a, b)` at which the field crosses `level`.
    fn crossings(&self, level: f64, a: f64, b: f64) -> Vec<f64>;
}

impl DensityField for PiecewiseConstantProfile {
    fn value(&self, x: f64) -> f64 {
        PiecewiseConstantProfile::value(self, x)
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        PiecewiseConstantProfile::integral(self, a, b)
    }

    fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        self.fronts
            .iter()
            .map(|f| f.position)
            .filter(|&p| p > a && p < b)
            .collect()
    }

    fn is_step(&self) -> bool {
        true
    }

    fn crossings(&self, _level: f64, _a: f64, _b: f64) -> Vec<f64> {
        Vec::new()
    }
}

/// Localized Δ on `[a, b]`: sup over x in `[a, b]` of |∫_a^x (f - g)|.
///
/// At least one of the fields must be a step function; the other may be
/// monotone between its breakpoints, in which case the extremum inside a
/// piece sits where it crosses the level of the step function.
pub fn delta_on_window(f: &dyn DensityField, g: &dyn DensityField, a: f64, b: f64) -> f64 {
    assert!(a <= b, "window [{a}, {b}] is reversed");
    let mut xs = vec![a, b];
    xs.extend(f.breakpoints(a, b));
    xs.extend(g.breakpoints(a, b));
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut extra = Vec::new();
    for w in xs.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        if f.is_step() && !g.is_step() {
            extra.extend(g.crossings(f.value(mid), w[0], w[1]));
        } else if g.is_step() && !f.is_step() {
            extra.extend(f.crossings(g.value(mid), w[0], w[1]));
        }
    }
    xs.extend(extra);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut cum = 0.0f64;
    let mut best = 0.0f64;
    for w in xs.windows(2) {
        cum += f.integral(w[0], w[1]) - g.integral(w[0], w[1]);
        best = best.max(cum.abs());
    }
    best
}
