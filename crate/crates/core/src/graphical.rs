//! Harris graphical construction: seeded Poisson event streams, evolution,
//! shared-stream coupling, space-time shifts and particle currents.

use std::io::Write;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{fmt_f64, Configuration};
use crate::models::{Aux, Family, Jump};

/// Expected number of events generated per lazily materialized slab.
const SLAB_EVENTS: f64 = 4096.0;

/// One point (t, x, v) of the Poisson measure, plus the key that freezes
/// reservoir occupancies seen by this event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x: i64,
    pub aux: Aux,
    pub key: u64,
}

/// A seeded realization of ω on `[lo, lo + len) × [0, horizon]`.
///
/// Points are produced lazily in time order from a counter-based generator:
/// slab `s` of the time axis uses stream `s` of the seed, so any time range
/// can be replayed without drawing what precedes it.
#[derive(Debug, Clone, Copy)]
pub struct EventStream<'a> {
    family: Family<'a>,
    seed: u64,
    lo: i64,
    len: usize,
    horizon: f64,
    rate_per_site: f64,
    // θ_{x0,t0}: the stream reads base points (t, x) as (t - t0, x - x0)
    t_shift: f64,
    x_shift: i64,
}

/// Generates the stream of a family on the sites `[lo, lo + len)`.
pub fn generate_events<'a>(family: Family<'a>, lo: i64, len: usize, horizon: f64, seed: u64) -> Result<EventStream<'a>> {
    if len == 0 {
        return Err(Error::InvalidStream("event window has no sites".into()));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidStream(format!("horizon {horizon} must be finite and nonnegative")));
    }
    Ok(EventStream {
        family,
        seed,
        lo,
        len,
        horizon,
        rate_per_site: family.total_rate(),
        t_shift: 0.0,
        x_shift: 0,
    })
}

impl<'a> EventStream<'a> {
    pub fn family(&self) -> Family<'a> {
        self.family
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// First site of the (shifted) window.
    pub fn window_lo(&self) -> i64 {
        self.lo - self.x_shift
    }

    pub fn window_len(&self) -> usize {
        self.len
    }

    /// m(𝒱).
    pub fn rate_per_site(&self) -> f64 {
        self.rate_per_site
    }

    fn slab_length(&self) -> f64 {
        SLAB_EVENTS / (self.len as f64 * self.rate_per_site)
    }

    /// θ_{x0,t0}ω: points (t − t0, x − x0) with t > t0, up to the remaining horizon.
    pub fn shift(&self, x0: i64, t0: f64) -> Result<Self> {
        if !(t0 >= 0.0) || t0 > self.horizon {
            return Err(Error::InvalidStream(format!(
                "time shift {t0} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(Self {
            horizon: self.horizon - t0,
            t_shift: self.t_shift + t0,
            x_shift: self.x_shift + x0,
            ..*self
        })
    }

    /// Points in time order.
    pub fn iter(&self) -> EventIter<'a> {
        let slab = (self.t_shift / self.slab_length()).floor() as u64;
        EventIter {
            stream: *self,
            slab,
            buf: Vec::new(),
            pos: 0,
        }
    }

    /// Number of points with time ≤ `t` (materializes the range).
    pub fn count_until(&self, t: f64) -> usize {
        self.iter().take_while(|e| e.t <= t).count()
    }

    fn fill_slab(&self, slab: u64, buf: &mut Vec<Event>) {
        buf.clear();
        let tau = self.slab_length();
        let start = slab as f64 * tau;
        let end = (slab + 1) as f64 * tau;
        let total = self.len as f64 * self.rate_per_site;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(slab);
        let mut t = start;
        loop {
            let gap: f64 = Exp1.sample(&mut rng);
            let next = t + gap / total;
            if next >= end {
                break;
            }
            if next == t {
                // tie at floating-point resolution: redraw
                continue;
            }
            t = next;
            let x = self.lo + rng.random_range(0..self.len as i64);
            let aux = self.family.sample_aux(&mut rng);
            let key = rng.random::<u64>();
            buf.push(Event { t, x, aux, key });
        }
    }
}

/// Lazy iterator over an [`EventStream`].
#[derive(Debug, Clone)]
pub struct EventIter<'a> {
    stream: EventStream<'a>,
    slab: u64,
    buf: Vec<Event>,
    pos: usize,
}

impl Iterator for EventIter<'_> {
    type Item = Event;

    fn next(&mut self) -> Option<Event> {
        let s = &self.stream;
        loop {
            if self.pos < self.buf.len() {
                let e = self.buf[self.pos];
                self.pos += 1;
                let t = e.t - s.t_shift;
                if t <= 0.0 {
                    continue;
                }
                if t > s.horizon {
                    return None;
                }
                return Some(Event {
                    t,
                    x: e.x - s.x_shift,
                    ..e
                });
            }
            if self.slab as f64 * s.slab_length() - s.t_shift > s.horizon {
                return None;
            }
            s.fill_slab(self.slab, &mut self.buf);
            self.slab += 1;
            self.pos = 0;
        }
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Frozen reservoir occupancy at an off-window site for one event:
/// Σ_{i<K} 1{U_i < density/K}, with uniforms hashed from (key, site), so the
/// value is nondecreasing in the density for fixed key and site.
#[inline]
pub fn ghost_occupancy(key: u64, site: i64, density: f64, cap: u32) -> u32 {
    if density <= 0.0 {
        return 0;
    }
    if density >= cap as f64 {
        return cap;
    }
    let p = density / cap as f64;
    let base = splitmix64(key ^ splitmix64(site as u64));
    (0..cap)
        .filter(|&i| {
            let u = (splitmix64(base.wrapping_add(i as u64)) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            u < p
        })
        .count() as u32
}

/// Applies one event in place. Off-window sites of a non-periodic window act
/// as reservoirs: a particle leaving the window is absorbed, one entering
/// from a reservoir is created.
#[inline]
pub fn apply_event(family: &Family<'_>, eta: &mut Configuration, ev: &Event) -> Option<Jump> {
    let cap = family.cap();
    let to = {
        let eta = &*eta;
        let occ = |y: i64| match eta.get(y) {
            Some(n) => n,
            None => ghost_occupancy(ev.key, y, eta.tail_density(y), cap),
        };
        family.target(ev.x, &ev.aux, occ)?
    };
    if let Some(i) = eta.index(ev.x) {
        eta.occupancies_mut()[i] -= 1;
    }
    if let Some(j) = eta.index(to) {
        eta.occupancies_mut()[j] += 1;
    }
    Some(Jump { from: ev.x, to })
}

/// A trajectory driven by a stream, advanced event by event.
#[derive(Debug, Clone)]
pub struct Evolution<'a> {
    family: Family<'a>,
    eta: Configuration,
    events: std::iter::Peekable<EventIter<'a>>,
    time: f64,
    horizon: f64,
    applied: u64,
}

impl<'a> Evolution<'a> {
    pub fn new(eta0: Configuration, stream: &EventStream<'a>) -> Self {
        Self {
            family: stream.family(),
            eta: eta0,
            events: stream.iter().peekable(),
            time: 0.0,
            horizon: stream.horizon(),
            applied: 0,
        }
    }

    pub fn config(&self) -> &Configuration {
        &self.eta
    }

    pub fn into_config(self) -> Configuration {
        self.eta
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Events applied so far.
    pub fn events_applied(&self) -> u64 {
        self.applied
    }

    /// Time of the next event, if any remains within the horizon.
    pub fn peek_time(&mut self) -> Option<f64> {
        self.events.peek().map(|e| e.t)
    }

    pub fn peek(&mut self) -> Option<&Event> {
        self.events.peek()
    }

    /// Applies the next event.
    pub fn step(&mut self) -> Option<(Event, Option<Jump>)> {
        let ev = self.events.next()?;
        self.time = ev.t;
        self.applied += 1;
        let j = apply_event(&self.family, &mut self.eta, &ev);
        Some((ev, j))
    }

    /// Applies every event with time ≤ `t`, reporting each one.
    pub fn advance_with(&mut self, t: f64, mut on_event: impl FnMut(&Event, Option<Jump>, &Configuration)) {
        let t = t.min(self.horizon);
        while self.peek_time().is_some_and(|te| te <= t) {
            let (ev, j) = self.step().expect("peeked");
            on_event(&ev, j, &self.eta);
        }
        self.time = self.time.max(t);
    }

    pub fn advance(&mut self, t: f64) {
        self.advance_with(t, |_, _, _| {});
    }
}

/// η_t: the configuration after every event with time ≤ `t`.
pub fn evolve(eta0: &Configuration, events: &EventStream<'_>, t: f64) -> Result<Configuration> {
    if t > events.horizon() {
        return Err(Error::InvalidArgument(format!(
            "time {t} beyond stream horizon {}",
            events.horizon()
        )));
    }
    let mut evo = Evolution::new(eta0.clone(), events);
    evo.advance(t);
    Ok(evo.into_config())
}

/// Result of [`couple`].
#[derive(Debug, Clone, PartialEq)]
pub struct Coupled {
    pub configs: Vec<Configuration>,
    /// Events after which an initially ordered pair was found out of order
    /// at a touched site.
    pub order_violations: u64,
    pub events: u64,
}

/// Evolves several initial states on one stream, checking after every event
/// that initially ordered pairs stay ordered at the sites it touched.
pub fn couple(initial: &[Configuration], events: &EventStream<'_>, t: f64) -> Result<Coupled> {
    if t > events.horizon() {
        return Err(Error::InvalidArgument(format!(
            "time {t} beyond stream horizon {}",
            events.horizon()
        )));
    }
    if let Some(first) = initial.first() {
        for c in &initial[1..] {
            if c.window_lo() != first.window_lo()
                || c.len() != first.len()
                || c.boundary() != first.boundary()
                || c.cap() != first.cap()
            {
                return Err(Error::WindowMismatch(
                    "coupled configurations need a common window and boundary".into(),
                ));
            }
        }
    }
    let family = events.family();
    let mut configs = initial.to_vec();
    let mut ordered = Vec::new();
    for i in 0..configs.len() {
        for j in 0..configs.len() {
            if i != j && crate::lattice::leq(&configs[i], &configs[j])? {
                ordered.push((i, j));
            }
        }
    }
    let mut violations = 0;
    let mut count = 0;
    let mut touched = Vec::with_capacity(2 * configs.len());
    for ev in events.iter().take_while(|e| e.t <= t) {
        count += 1;
        touched.clear();
        for c in configs.iter_mut() {
            if let Some(j) = apply_event(&family, c, &ev) {
                touched.push(j.from);
                touched.push(j.to);
            }
        }
        if !touched.is_empty() {
            let bad = ordered.iter().any(|&(i, j)| {
                touched
                    .iter()
                    .any(|&y| matches!((configs[i].get(y), configs[j].get(y)), (Some(a), Some(b)) if a > b))
            });
            if bad {
                violations += 1;
                debug_assert!(false, "order violated at event {ev:?}");
            }
        }
    }
    Ok(Coupled {
        configs,
        order_violations: violations,
        events: count,
    })
}

/// Path of an observer on the bonds of the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observer {
    /// The bond between sites `x` and `x + 1`.
    Fixed(i64),
    /// The bond between ⌊vt⌋ and ⌊vt⌋ + 1.
    Speed(f64),
}

impl Observer {
    #[inline]
    pub fn position(&self, t: f64) -> i64 {
        match *self {
            Observer::Fixed(x) => x,
            Observer::Speed(v) => (v * t).floor() as i64,
        }
    }
}

/// φ = φ⁺ − φ⁻ + φ̃ across an observer path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentRecord {
    pub observer: Observer,
    /// Left-to-right particle crossings.
    pub plus: i64,
    /// Right-to-left particle crossings.
    pub minus: i64,
    /// Particles swept over by the observer: moving right over a particle
    /// counts −1, moving left over one counts +1.
    pub tilde: i64,
    pub position: i64,
}

impl CurrentRecord {
    pub fn net(&self) -> i64 {
        self.plus - self.minus + self.tilde
    }
}

/// Incremental current bookkeeping along an evolution.
#[derive(Debug, Clone)]
pub struct CurrentTracker {
    record: CurrentRecord,
    period: Option<i64>,
}

impl CurrentTracker {
    /// On a torus pass its length so that crossings of periodic images count.
    pub fn new(observer: Observer, period: Option<i64>) -> Self {
        Self {
            record: CurrentRecord {
                observer,
                plus: 0,
                minus: 0,
                tilde: 0,
                position: observer.position(0.0),
            },
            period,
        }
    }

    pub fn record(&self) -> CurrentRecord {
        self.record
    }

    /// Moves the observer to its position at time `t` over the frozen `eta`.
    pub fn move_to(&mut self, t: f64, eta: &Configuration) {
        let target = self.record.observer.position(t);
        let occ = |y: i64| eta.get(y).unwrap_or_else(|| eta.tail_density(y).round() as u32) as i64;
        while self.record.position < target {
            self.record.position += 1;
            self.record.tilde -= occ(self.record.position);
        }
        while self.record.position > target {
            self.record.tilde += occ(self.record.position);
            self.record.position -= 1;
        }
    }

    /// Counts a particle jump across the current bond position.
    pub fn jump(&mut self, j: Jump) {
        let b = self.record.position;
        let crossings = |b: i64| -> i64 {
            if j.from <= b && b < j.to {
                1
            } else if j.to <= b && b < j.from {
                -1
            } else {
                0
            }
        };
        let c = match self.period {
            None => crossings(b),
            Some(l) => {
                // the bond image nearest the jump origin, and its neighbours
                let base = b + (j.from - b).div_euclid(l) * l;
                (-1..=1).map(|m| crossings(base + m * l)).sum()
            }
        };
        if c > 0 {
            self.record.plus += c;
        } else {
            self.record.minus -= c;
        }
    }
}

/// Net current across `observer` during `[0, t]`.
pub fn current(eta0: &Configuration, events: &EventStream<'_>, observer: Observer, t: f64) -> Result<CurrentRecord> {
    let period = eta0.is_periodic().then_some(eta0.len() as i64);
    let mut tracker = CurrentTracker::new(observer, period);
    let mut evo = Evolution::new(eta0.clone(), events);
    if t > events.horizon() {
        return Err(Error::InvalidArgument(format!(
            "time {t} beyond stream horizon {}",
            events.horizon()
        )));
    }
    while let Some(te) = evo.peek_time().filter(|&te| te <= t) {
        tracker.move_to(te, evo.config());
        if let Some((_, Some(j))) = evo.step() {
            tracker.jump(j);
        }
    }
    tracker.move_to(t, evo.config());
    Ok(tracker.record())
}

/// Writes `time,site,occupancy` rows for snapshots of a trajectory.
pub fn write_snapshots<W: Write>(out: W, snapshots: &[(f64, Configuration)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "site", "occupancy"])?;
    for (t, eta) in snapshots {
        let ts = fmt_f64(*t);
        for (i, n) in eta.occupancies().iter().enumerate() {
            let site = eta.window_lo() + i as i64;
            w.write_record([ts.as_str(), &site.to_string(), &n.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

impl std::fmt::Display for Observer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Observer::Fixed(x) => write!(f, "fixed:{x}"),
            Observer::Speed(v) => write!(f, "speed:{}", fmt_f64(*v)),
        }
    }
}

/// Writes `time,observer,net,plus,minus,tilde` rows.
pub fn write_currents<W: Write>(out: W, rows: &[(f64, CurrentRecord)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "observer", "net", "plus", "minus", "tilde"])?;
    for (t, r) in rows {
        w.write_record([
            fmt_f64(*t),
            r.observer.to_string(),
            r.net().to_string(),
            r.plus.to_string(),
            r.minus.to_string(),
            r.tilde.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
