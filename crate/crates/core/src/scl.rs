//! Scalar conservation laws ∂_t u + ∂_x G(u) = 0: flux functions, convex
//! envelopes, the variational Riemann solver, admissibility checks and a
//! front-tracking Cauchy solver.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{delta_distance, delta_on_window, DensityField, Front, PiecewiseConstantProfile};

/// Density resolution of the envelope grid.
pub const ENVELOPE_GRID: f64 = 1e-4;
/// Target accuracy of chord tangency refinement.
pub const TANGENCY_TOL: f64 = 1e-10;

/// Flux as written in a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FluxSpec {
    /// Coefficients in increasing degree.
    Polynomial(Vec<f64>),
    /// `[[ρ, G(ρ)], ...]`, linearly interpolated.
    Table(Vec<(f64, f64)>),
}

/// Real polynomial with coefficients in increasing degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() <= 1 {
            return Self::new(vec![0.0]);
        }
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, &c)| c * i as f64)
                .collect(),
        )
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self::new(out)
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        Self::new(
            (0..n)
                .map(|i| self.coeffs.get(i).unwrap_or(&0.0) + other.coeffs.get(i).unwrap_or(&0.0))
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    /// Roots in `(a, b)` located by sign changes on `n` cells, refined by
    /// bisection.
    pub fn roots_in(&self, a: f64, b: f64, n: usize) -> Vec<f64> {
        let h = (b - a) / n as f64;
        let mut out = Vec::new();
        let mut x0 = a;
        let mut f0 = self.eval(a);
        for i in 1..=n {
            let x1 = if i == n { b } else { a + i as f64 * h };
            let f1 = self.eval(x1);
            if f0 == 0.0 && x0 > a {
                out.push(x0);
            } else if f0 * f1 < 0.0 {
                out.push(bisect(|x| self.eval(x), x0, x1));
            }
            x0 = x1;
            f0 = f1;
        }
        out
    }
}

/// Root of a continuous `f` with a sign change on `[a, b]`.
fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Polynomial { g: Polynomial, dg: Polynomial, ddg: Polynomial },
    Table { xs: Vec<f64>, gs: Vec<f64> },
}

/// Lipschitz flux on `[0, K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxFunction {
    repr: Repr,
    cap: f64,
    lipschitz: f64,
}

impl FluxFunction {
    pub fn polynomial(coeffs: Vec<f64>, cap: f64) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidFlux("non-finite coefficient".into()));
        }
        if !(cap > 0.0) {
            return Err(Error::InvalidFlux("domain [0, K] needs K > 0".into()));
        }
        let g = Polynomial::new(coeffs);
        let dg = g.derivative();
        let ddg = dg.derivative();
        let mut f = Self {
            repr: Repr::Polynomial { g, dg, ddg },
            cap,
            lipschitz: 0.0,
        };
        f.lipschitz = f.compute_lipschitz();
        Ok(f)
    }

    /// Linear interpolation through `(ρ_i, G_i)`, abscissae strictly increasing.
    pub fn table(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidFlux("a flux table needs at least two points".into()));
        }
        if points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::InvalidFlux("table densities must be strictly increasing".into()));
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::InvalidFlux("non-finite table entry".into()));
        }
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let gs: Vec<f64> = points.iter().map(|p| p.1).collect();
        let cap = *xs.last().unwrap();
        let mut f = Self {
            repr: Repr::Table { xs, gs },
            cap,
            lipschitz: 0.0,
        };
        f.lipschitz = f.compute_lipschitz();
        Ok(f)
    }

    pub fn from_spec(spec: &FluxSpec, cap: f64) -> Result<Self> {
        match spec {
            FluxSpec::Polynomial(c) => Self::polynomial(c.clone(), cap),
            FluxSpec::Table(t) => Self::table(t),
        }
    }

    pub fn to_spec(&self) -> FluxSpec {
        match &self.repr {
            Repr::Polynomial { g, .. } => FluxSpec::Polynomial(g.coeffs().to_vec()),
            Repr::Table { xs, gs } => FluxSpec::Table(xs.iter().copied().zip(gs.iter().copied()).collect()),
        }
    }

    /// γu(1−u).
    pub fn simple_exclusion(gamma: f64) -> Self {
        Self::polynomial(vec![0.0, gamma, -gamma], 1.0).unwrap()
    }

    /// u + u² − 2u³.
    pub fn two_step() -> Self {
        Self::polynomial(vec![0.0, 1.0, 1.0, -2.0], 1.0).unwrap()
    }

    /// (1−u)·Σ_j j(β^j − β^{−j})u^j.
    pub fn overtaking(right: &[f64], left: &[f64]) -> Self {
        let mut c = vec![0.0; right.len() + 1];
        for j in 1..=right.len() {
            c[j] = j as f64 * (right[j - 1] - left.get(j - 1).copied().unwrap_or(0.0));
        }
        let p = Polynomial::new(c).mul(&Polynomial::new(vec![1.0, -1.0]));
        Self::polynomial(p.coeffs().to_vec(), 1.0).unwrap()
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn is_piecewise_linear(&self) -> bool {
        matches!(self.repr, Repr::Table { .. })
    }

    pub fn as_polynomial(&self) -> Option<&Polynomial> {
        match &self.repr {
            Repr::Polynomial { g, .. } => Some(g),
            Repr::Table { .. } => None,
        }
    }

    /// Table abscissae, if piecewise linear.
    pub fn breakpoints(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Table { xs, .. } => Some(xs),
            Repr::Polynomial { .. } => None,
        }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match &self.repr {
            Repr::Polynomial { g, .. } => g.eval(u),
            Repr::Table { xs, gs } => {
                let n = xs.len();
                if u <= xs[0] {
                    return gs[0];
                }
                if u >= xs[n - 1] {
                    return gs[n - 1];
                }
                let i = xs.partition_point(|&x| x <= u) - 1;
                let w = (u - xs[i]) / (xs[i + 1] - xs[i]);
                gs[i] + w * (gs[i + 1] - gs[i])
            }
        }
    }

    /// G'(u); for tables the slope of the piece to the right of `u`.
    #[inline]
    pub fn deriv(&self, u: f64) -> f64 {
        match &self.repr {
            Repr::Polynomial { dg, .. } => dg.eval(u),
            Repr::Table { xs, gs } => {
                let n = xs.len();
                let i = xs.partition_point(|&x| x <= u).clamp(1, n - 1) - 1;
                (gs[i + 1] - gs[i]) / (xs[i + 1] - xs[i])
            }
        }
    }

    /// G''(u); zero for tables.
    pub fn second_deriv(&self, u: f64) -> f64 {
        match &self.repr {
            Repr::Polynomial { ddg, .. } => ddg.eval(u),
            Repr::Table { .. } => 0.0,
        }
    }

    /// V = ‖G'‖_∞ on `[0, K]`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn compute_lipschitz(&self) -> f64 {
        match &self.repr {
            Repr::Table { xs, gs } => xs
                .windows(2)
                .zip(gs.windows(2))
                .map(|(x, g)| ((g[1] - g[0]) / (x[1] - x[0])).abs())
                .fold(0.0, f64::max),
            Repr::Polynomial { g, dg, .. } => {
                let n = (self.cap / ENVELOPE_GRID).ceil() as usize;
                let h = self.cap / n as f64;
                let mut v = 0.0f64;
                let mut prev = g.eval(0.0);
                for i in 0..=n {
                    let x = i as f64 * h;
                    v = v.max(dg.eval(x).abs());
                    if i > 0 {
                        let gx = g.eval(x);
                        v = v.max(((gx - prev) / h).abs());
                        prev = gx;
                    }
                }
                v
            }
        }
    }

    /// Piecewise-linear interpolant through the given density levels.
    pub fn interpolant(&self, levels: &[f64]) -> Result<Self> {
        let pts: Vec<(f64, f64)> = levels.iter().map(|&r| (r, self.eval(r))).collect();
        Self::table(&pts)
    }
}

/// One piece of a convex envelope, in increasing density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Piece {
    /// The envelope follows the flux.
    Curve { r0: f64, r1: f64 },
    /// The envelope is the chord between the endpoints.
    Chord { r0: f64, r1: f64 },
}

impl Piece {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Piece::Curve { r0, r1 } | Piece::Chord { r0, r1 } => (r0, r1),
        }
    }
}

/// Lower convex envelope of G on `[lo, hi]` (or upper concave envelope when
/// `upper`), as a sequence of pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexEnvelope {
    lo: f64,
    hi: f64,
    upper: bool,
    pieces: Vec<Piece>,
}

impl ConvexEnvelope {
    pub fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn is_upper(&self) -> bool {
        self.upper
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Envelope value at `r ∈ [lo, hi]`.
    pub fn value(&self, flux: &FluxFunction, r: f64) -> f64 {
        for p in &self.pieces {
            match *p {
                Piece::Curve { r0, r1 } if r >= r0 && r <= r1 => return flux.eval(r),
                Piece::Chord { r0, r1 } if r >= r0 && r <= r1 => {
                    let s = chord_slope(flux, r0, r1);
                    return flux.eval(r0) + s * (r - r0);
                }
                _ => {}
            }
        }
        flux.eval(r)
    }

    /// Slopes of the chords (the flat set of the derivative).
    pub fn flats(&self, flux: &FluxFunction) -> Vec<f64> {
        self.pieces
            .iter()
            .filter_map(|p| match *p {
                Piece::Chord { r0, r1 } => Some(chord_slope(flux, r0, r1)),
                Piece::Curve { .. } => None,
            })
            .collect()
    }

    /// Interior points where left and right slopes of the envelope differ.
    pub fn kinks(&self, flux: &FluxFunction) -> Vec<f64> {
        let slope_at = |p: &Piece, end: bool| match *p {
            Piece::Chord { r0, r1 } => chord_slope(flux, r0, r1),
            Piece::Curve { r0, r1 } => flux.deriv(if end { r1 } else { r0 }),
        };
        self.pieces
            .windows(2)
            .filter(|w| (slope_at(&w[0], true) - slope_at(&w[1], false)).abs() > 1e-9)
            .map(|w| w[0].bounds().1)
            .collect()
    }
}

fn chord_slope(flux: &FluxFunction, a: f64, b: f64) -> f64 {
    (flux.eval(b) - flux.eval(a)) / (b - a)
}

/// Lower convex hull indices of points (monotone chain), collinear points dropped.
fn lower_hull(xs: &[f64], ys: &[f64]) -> Vec<usize> {
    let mut h: Vec<usize> = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        while h.len() >= 2 {
            let (a, b) = (h[h.len() - 2], h[h.len() - 1]);
            let cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a]);
            if cross <= 0.0 {
                h.pop();
            } else {
                break;
            }
        }
        h.push(i);
    }
    h
}

/// Lower convex envelope of G on `[lo, hi]` (λ < ρ).
pub fn lower_envelope(flux: &FluxFunction, lo: f64, hi: f64) -> ConvexEnvelope {
    envelope(flux, lo, hi, false)
}

/// Upper concave envelope of G on `[lo, hi]`, used when λ > ρ.
pub fn upper_envelope(flux: &FluxFunction, lo: f64, hi: f64) -> ConvexEnvelope {
    envelope(flux, lo, hi, true)
}

fn envelope(flux: &FluxFunction, lo: f64, hi: f64, upper: bool) -> ConvexEnvelope {
    assert!(lo <= hi, "envelope interval [{lo}, {hi}] is reversed");
    if lo == hi {
        return ConvexEnvelope {
            lo,
            hi,
            upper,
            pieces: Vec::new(),
        };
    }
    let sgn = if upper { -1.0 } else { 1.0 };
    let f = |r: f64| sgn * flux.eval(r);
    let df = |r: f64| sgn * flux.deriv(r);
    let pieces = match flux.breakpoints() {
        Some(bp) => {
            let mut xs = vec![lo];
            xs.extend(bp.iter().copied().filter(|&r| r > lo && r < hi));
            xs.push(hi);
            let ys: Vec<f64> = xs.iter().map(|&r| f(r)).collect();
            let h = lower_hull(&xs, &ys);
            h.windows(2)
                .map(|w| Piece::Chord {
                    r0: xs[w[0]],
                    r1: xs[w[1]],
                })
                .collect()
        }
        None => smooth_envelope(&f, &df, lo, hi),
    };
    ConvexEnvelope { lo, hi, upper, pieces }
}

fn smooth_envelope(f: &dyn Fn(f64) -> f64, df: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> Vec<Piece> {
    let n = (((hi - lo) / ENVELOPE_GRID).ceil() as usize).max(64);
    let h = (hi - lo) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|i| if i == n { hi } else { lo + i as f64 * h }).collect();
    let ys: Vec<f64> = xs.iter().map(|&r| f(r)).collect();
    let hull = lower_hull(&xs, &ys);
    let scale = ys.iter().fold(0.0f64, |m, y| m.max(y.abs())).max(1.0);
    let mut raw: Vec<Piece> = Vec::new();
    for w in hull.windows(2) {
        let (i, j) = (w[0], w[1]);
        let is_chord = j - i >= 2 && {
            let s = (ys[j] - ys[i]) / (xs[j] - xs[i]);
            (i + 1..j).any(|m| ys[m] - (ys[i] + s * (xs[m] - xs[i])) > 1e-13 * scale)
        };
        let piece = if is_chord {
            Piece::Chord { r0: xs[i], r1: xs[j] }
        } else {
            Piece::Curve { r0: xs[i], r1: xs[j] }
        };
        match (raw.last_mut(), piece) {
            (Some(Piece::Curve { r1, .. }), Piece::Curve { r1: e, .. }) => *r1 = e,
            _ => raw.push(piece),
        }
    }
    // refine chord endpoints to exact tangency
    for k in 0..raw.len() {
        if let Piece::Chord { r0, r1 } = raw[k] {
            let (a, b) = refine_chord(f, df, r0, r1, lo, hi, 2.0 * h);
            raw[k] = Piece::Chord { r0: a, r1: b };
            if k > 0 {
                if let Piece::Curve { r1, .. } = &mut raw[k - 1] {
                    *r1 = a;
                }
            }
            if let Some(Piece::Curve { r0, .. }) = raw.get_mut(k + 1) {
                *r0 = b;
            }
        }
    }
    raw.retain(|p| {
        let (a, b) = p.bounds();
        b > a
    });
    if raw.is_empty() {
        raw.push(Piece::Curve { r0: lo, r1: hi });
    }
    raw
}

/// Moves chord endpoints to the points where the chord is tangent to f,
/// keeping an endpoint on the interval boundary when no tangency is nearby.
fn refine_chord(
    f: &dyn Fn(f64) -> f64,
    df: &dyn Fn(f64) -> f64,
    mut a: f64,
    mut b: f64,
    lo: f64,
    hi: f64,
    reach: f64,
) -> (f64, f64) {
    // tangent at t passes through (o, f(o))
    let tangency = |t: f64, o: f64| f(o) - f(t) - df(t) * (o - t);
    for _ in 0..100 {
        let (a0, b0) = (a, b);
        let s = (f(b) - f(a)) / (b - a);
        if a > lo || df(lo) < s {
            let l = (a - reach).max(lo);
            let r = (a + reach).min(0.5 * (a + b));
            if tangency(l, b) * tangency(r, b) < 0.0 {
                a = bisect(|t| tangency(t, b), l, r);
            }
        }
        let s = (f(b) - f(a)) / (b - a);
        if b < hi || df(hi) > s {
            let l = (b - reach).max(0.5 * (a + b));
            let r = (b + reach).min(hi);
            if tangency(l, a) * tangency(r, a) < 0.0 {
                b = bisect(|t| tangency(t, a), l, r);
            }
        }
        if (a - a0).abs() < TANGENCY_TOL * 1e-3 && (b - b0).abs() < TANGENCY_TOL * 1e-3 {
            break;
        }
    }
    (a, b)
}

/// One element of a self-similar Riemann solution, in increasing speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Wave {
    /// Discontinuity travelling at `speed`.
    Jump { speed: f64, left: f64, right: f64 },
    /// Continuous wave: density goes from `r0` at speed `v0` to `r1` at `v1`,
    /// solving G'(r) = v.
    Fan { v0: f64, v1: f64, r0: f64, r1: f64 },
}

/// Entropy solution u(x, t) = h_c(x/t) of the Riemann problem R_{λ,ρ}.
#[derive(Debug, Clone, PartialEq)]
pub struct RiemannFan {
    flux: FluxFunction,
    lambda: f64,
    rho: f64,
    envelope: ConvexEnvelope,
    waves: Vec<Wave>,
}

/// Solves the Riemann problem through the envelope of G between the states.
pub fn riemann_solve(flux: &FluxFunction, lambda: f64, rho: f64) -> RiemannFan {
    let upper = lambda > rho;
    let (lo, hi) = (lambda.min(rho), lambda.max(rho));
    let envelope = envelope(flux, lo, hi, upper);
    let mut pieces = envelope.pieces.clone();
    if upper {
        pieces.reverse();
    }
    let waves = pieces
        .iter()
        .map(|p| {
            let (a, b) = p.bounds();
            let (start, end) = if upper { (b, a) } else { (a, b) };
            match p {
                Piece::Chord { .. } => Wave::Jump {
                    speed: chord_slope(flux, a, b),
                    left: start,
                    right: end,
                },
                Piece::Curve { .. } => Wave::Fan {
                    v0: flux.deriv(start),
                    v1: flux.deriv(end),
                    r0: start,
                    r1: end,
                },
            }
        })
        .collect();
    RiemannFan {
        flux: flux.clone(),
        lambda,
        rho,
        envelope,
        waves,
    }
}

/// 𝒢_v(λ, ρ): inf (sup if λ > ρ) of G(r) − v·r between the states.
pub fn riemann_current(flux: &FluxFunction, lambda: f64, rho: f64, v: f64) -> f64 {
    riemann_solve(flux, lambda, rho).current(v)
}

impl RiemannFan {
    pub fn flux(&self) -> &FluxFunction {
        &self.flux
    }

    pub fn states(&self) -> (f64, f64) {
        (self.lambda, self.rho)
    }

    pub fn envelope(&self) -> &ConvexEnvelope {
        &self.envelope
    }

    pub fn waves(&self) -> &[Wave] {
        &self.waves
    }

    /// [v_*, v^*]: speeds spanned by the solution.
    pub fn speed_range(&self) -> Option<(f64, f64)> {
        let first = self.waves.first()?;
        let last = self.waves.last()?;
        let lo = match *first {
            Wave::Jump { speed, .. } => speed,
            Wave::Fan { v0, .. } => v0,
        };
        let hi = match *last {
            Wave::Jump { speed, .. } => speed,
            Wave::Fan { v1, .. } => v1,
        };
        Some((lo, hi))
    }

    /// Discontinuities as (speed, left, right).
    pub fn discontinuities(&self) -> Vec<(f64, f64, f64)> {
        self.waves
            .iter()
            .filter_map(|w| match *w {
                Wave::Jump { speed, left, right } => Some((speed, left, right)),
                Wave::Fan { .. } => None,
            })
            .collect()
    }

    fn invert(&self, v: f64, r0: f64, r1: f64) -> f64 {
        let (a, b) = (r0.min(r1), r0.max(r1));
        let increasing = r1 > r0;
        bisect(
            |r| {
                let d = self.flux.deriv(r) - v;
                if increasing {
                    d
                } else {
                    -d
                }
            },
            a,
            b,
        )
        .clamp(a, b)
    }

    /// h_c(v), left-continuous at discontinuities.
    pub fn density(&self, v: f64) -> f64 {
        let mut cur = self.lambda;
        for w in &self.waves {
            match *w {
                Wave::Jump { speed, right, .. } => {
                    if v <= speed {
                        return cur;
                    }
                    cur = right;
                }
                Wave::Fan { v0, v1, r0, r1 } => {
                    if v <= v0 {
                        return cur;
                    }
                    if v < v1 {
                        return self.invert(v, r0, r1);
                    }
                    cur = r1;
                }
            }
        }
        cur
    }

    /// 𝒢_v = G(h_c(v)) − v·h_c(v).
    pub fn current(&self, v: f64) -> f64 {
        let r = self.density(v);
        self.flux.eval(r) - v * r
    }

    /// The solution at macroscopic time `t > 0` as a density field.
    pub fn at_time(&self, t: f64) -> RiemannProfile<'_> {
        assert!(t > 0.0, "Riemann profile needs t > 0");
        RiemannProfile { fan: self, t }
    }
}

/// x ↦ h_c(x/t).
#[derive(Debug, Clone, Copy)]
pub struct RiemannProfile<'a> {
    fan: &'a RiemannFan,
    t: f64,
}

impl DensityField for RiemannProfile<'_> {
    fn value(&self, x: f64) -> f64 {
        self.fan.density(x / self.t)
    }

    // ∫_a^b h(x/t) dx = t·(𝒢_{a/t} − 𝒢_{b/t})
    fn integral(&self, a: f64, b: f64) -> f64 {
        self.t * (self.fan.current(a / self.t) - self.fan.current(b / self.t))
    }

    fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for w in &self.fan.waves {
            match *w {
                Wave::Jump { speed, .. } => out.push(speed * self.t),
                Wave::Fan { v0, v1, .. } => {
                    out.push(v0 * self.t);
                    out.push(v1 * self.t);
                }
            }
        }
        out.retain(|&x| x > a && x < b);
        out
    }

    fn is_step(&self) -> bool {
        self.fan.waves.iter().all(|w| matches!(w, Wave::Jump { .. }))
    }

    fn crossings(&self, level: f64, a: f64, b: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for w in &self.fan.waves {
            if let Wave::Fan { r0, r1, .. } = *w {
                if level > r0.min(r1) && level < r0.max(r1) {
                    let x = self.fan.flux.deriv(level) * self.t;
                    if x > a && x < b {
                        out.push(x);
                    }
                }
            }
        }
        out
    }
}

/// (G(u−) − G(u+)) / (u− − u+).
pub fn rh_speed(flux: &FluxFunction, u_minus: f64, u_plus: f64) -> Result<f64> {
    if u_minus == u_plus {
        return Err(Error::InvalidArgument("Rankine-Hugoniot speed needs distinct states".into()));
    }
    Ok((flux.eval(u_minus) - flux.eval(u_plus)) / (u_minus - u_plus))
}

/// Oleinik's chord condition: the chord lies below G for an increasing jump
/// and above G for a decreasing one, within `tol`.
pub fn oleinik_check(flux: &FluxFunction, u_minus: f64, u_plus: f64, tol: f64) -> bool {
    if u_minus == u_plus {
        return true;
    }
    let (a, b) = (u_minus.min(u_plus), u_minus.max(u_plus));
    let s = chord_slope(flux, a, b);
    let ga = flux.eval(a);
    let increasing = u_plus > u_minus;
    let ok = |r: f64| {
        let gap = flux.eval(r) - (ga + s * (r - a));
        if increasing {
            gap >= -tol
        } else {
            gap <= tol
        }
    };
    match flux.breakpoints() {
        Some(bp) => bp.iter().filter(|&&r| r > a && r < b).all(|&r| ok(r)),
        None => {
            let n = (((b - a) / ENVELOPE_GRID).ceil() as usize).max(64);
            (1..n).all(|i| ok(a + (b - a) * i as f64 / n as f64))
        }
    }
}

/// Structure of a Riemann solution for a flux with a single inflexion point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiemannKind {
    Constant,
    Shock { speed: f64 },
    RarefactionFan,
    /// A shock attached to a fan at the tangent state, moving at G'(tangent).
    Contact { tangent: f64, speed: f64, fan_first: bool },
}

/// Closed-form solution of a Riemann problem for a single-inflexion flux,
/// obtained from the convexity pattern instead of the envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub kind: RiemannKind,
    pub inflexion: f64,
    /// G'' > 0 to the left of the inflexion point.
    pub convex_left: bool,
    flux: FluxFunction,
    lambda: f64,
    rho: f64,
}

/// Inflexion point of a polynomial flux with exactly one sign change of G''.
pub fn single_inflexion(flux: &FluxFunction) -> Result<(f64, bool)> {
    let p = flux
        .as_polynomial()
        .ok_or_else(|| Error::InvalidFlux("classification needs a smooth (polynomial) flux".into()))?;
    let ddg = p.derivative().derivative();
    let roots = ddg.roots_in(0.0, flux.cap(), 10_000);
    if roots.len() != 1 {
        return Err(Error::InvalidFlux(format!(
            "flux has {} inflexion points in the domain, expected one",
            roots.len()
        )));
    }
    let a = roots[0];
    let convex_left = ddg.eval(0.5 * a) > 0.0;
    Ok((a, convex_left))
}

/// The tangent state w* ≠ w with S[w; w*] = G'(w*), on the other side of the
/// inflexion point, if it lies in the domain.
pub fn conjugate_state(flux: &FluxFunction, w: f64) -> Result<Option<f64>> {
    let (a, _) = single_inflexion(flux)?;
    let (l, r) = if w < a { (a, flux.cap()) } else { (0.0, a) };
    Ok(tangent_from(flux, w, l, r))
}

/// Point t in `[l, r]` whose tangent line passes through (o, G(o)).
fn tangent_from(flux: &FluxFunction, o: f64, l: f64, r: f64) -> Option<f64> {
    let phi = |t: f64| flux.eval(o) - flux.eval(t) - flux.deriv(t) * (o - t);
    let n = 10_000;
    let mut x0 = l;
    let mut f0 = phi(l);
    for i in 1..=n {
        let x1 = l + (r - l) * i as f64 / n as f64;
        let f1 = phi(x1);
        if (x0 - o).abs() > 1e-12 && (x1 - o).abs() > 1e-12 {
            if f0 == 0.0 {
                return Some(x0);
            }
            if f0 * f1 < 0.0 {
                return Some(bisect(phi, x0, x1));
            }
        }
        x0 = x1;
        f0 = f1;
    }
    (f0 == 0.0 && (x0 - o).abs() > 1e-12).then_some(x0)
}

/// Shock / rarefaction / contact classification for single-inflexion fluxes.
pub fn classify_riemann(flux: &FluxFunction, lambda: f64, rho: f64) -> Result<Classification> {
    let (a, convex_left) = single_inflexion(flux)?;
    let done = |kind| Classification {
        kind,
        inflexion: a,
        convex_left,
        flux: flux.clone(),
        lambda,
        rho,
    };
    if lambda == rho {
        return Ok(done(RiemannKind::Constant));
    }
    let shock = RiemannKind::Shock {
        speed: rh_speed(flux, lambda, rho)?,
    };
    let increasing = lambda < rho;
    // work with f = ±G so that the relevant envelope is the lower convex one
    let f_convex_left = convex_left == increasing;
    let (lo, hi) = (lambda.min(rho), lambda.max(rho));
    let kind = if hi <= a {
        if f_convex_left {
            RiemannKind::RarefactionFan
        } else {
            shock
        }
    } else if lo >= a {
        if f_convex_left {
            shock
        } else {
            RiemannKind::RarefactionFan
        }
    } else if f_convex_left {
        // convex on [lo, a]: fan up to the tangency point seen from hi, then a chord
        match tangent_from(flux, hi, lo, a) {
            Some(t) if t > lo => RiemannKind::Contact {
                tangent: t,
                speed: flux.deriv(t),
                fan_first: increasing,
            },
            _ => shock,
        }
    } else {
        match tangent_from(flux, lo, a, hi) {
            Some(t) if t < hi => RiemannKind::Contact {
                tangent: t,
                speed: flux.deriv(t),
                fan_first: !increasing,
            },
            _ => shock,
        }
    };
    Ok(done(kind))
}

impl Classification {
    /// Closed-form h_c(v).
    pub fn density(&self, v: f64) -> f64 {
        let g = &self.flux;
        let invert = |v: f64, r0: f64, r1: f64| {
            let (a, b) = (r0.min(r1), r0.max(r1));
            let up = g.deriv(b) > g.deriv(a);
            let d0 = g.deriv(r0);
            let d1 = g.deriv(r1);
            if v <= d0.min(d1) {
                return if up { a } else { b };
            }
            if v >= d0.max(d1) {
                return if up { b } else { a };
            }
            bisect(|r| if up { g.deriv(r) - v } else { v - g.deriv(r) }, a, b)
        };
        let fan = |v: f64, r0: f64, r1: f64| {
            if v <= g.deriv(r0) {
                r0
            } else if v >= g.deriv(r1) {
                r1
            } else {
                invert(v, r0, r1)
            }
        };
        match self.kind {
            RiemannKind::Constant => self.lambda,
            RiemannKind::Shock { speed } => {
                if v <= speed {
                    self.lambda
                } else {
                    self.rho
                }
            }
            RiemannKind::RarefactionFan => fan(v, self.lambda, self.rho),
            RiemannKind::Contact {
                tangent,
                speed,
                fan_first,
            } => {
                if fan_first {
                    if v <= speed {
                        fan(v, self.lambda, tangent)
                    } else {
                        self.rho
                    }
                } else if v <= speed {
                    self.lambda
                } else {
                    fan(v, tangent, self.rho)
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Step approximation and front tracking

/// How a profile is projected onto step functions with values in a density set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approximation {
    /// Cell averages over an ε-grid, projected onto the levels with the
    /// rounding error carried to the next cell.
    CellAverage,
    /// Each piece snapped to the nearest level, fronts kept.
    Nearest,
    /// Random-choice sampling at one uniform offset per call.
    Glimm { seed: u64 },
}

/// Result of [`approximate_profile`].
#[derive(Debug, Clone, PartialEq)]
pub struct Approximated {
    pub profile: PiecewiseConstantProfile,
    /// Δ(u0, output).
    pub distance: f64,
    /// δ = Δ / ε.
    pub delta: f64,
}

fn nearest_level(levels: &[f64], v: f64) -> f64 {
    let i = levels.partition_point(|&l| l < v);
    match (i.checked_sub(1).map(|j| levels[j]), levels.get(i)) {
        (Some(a), Some(&b)) => {
            if v - a <= b - v {
                a
            } else {
                b
            }
        }
        (Some(a), None) => a,
        (None, Some(&b)) => b,
        (None, None) => v,
    }
}

/// Projects `u0` onto a step function with values in `levels` and step
/// lengths at least `eps` (except under [`Approximation::Nearest`]).
pub fn approximate_profile(
    u0: &PiecewiseConstantProfile,
    eps: f64,
    levels: &[f64],
    strategy: Approximation,
) -> Result<Approximated> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("approximation step must be positive".into()));
    }
    if levels.is_empty() || levels.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("density levels must be strictly increasing".into()));
    }
    let on_levels = u0.values().iter().all(|v| levels.binary_search_by(|l| l.total_cmp(v)).is_ok());
    let wide = u0.fronts().windows(2).all(|w| w[1].position - w[0].position >= eps);
    if on_levels && wide {
        return Ok(Approximated {
            profile: u0.clone(),
            distance: 0.0,
            delta: 0.0,
        });
    }
    let left = nearest_level(levels, u0.left_tail());
    let right = nearest_level(levels, u0.right_tail());
    let profile = match (strategy, u0.support()) {
        (_, None) => PiecewiseConstantProfile::constant(right),
        (Approximation::Nearest, Some(_)) => {
            let fronts = u0
                .fronts()
                .iter()
                .map(|f| Front {
                    position: f.position,
                    left: nearest_level(levels, f.left),
                })
                .collect();
            PiecewiseConstantProfile::new(fronts, right)?
        }
        (strategy, Some((a, b))) => {
            let start = (a / eps).floor();
            let cells = (((b / eps).ceil() - start) as usize).max(1);
            let x_at = |j: usize| (start + j as f64) * eps;
            let mut values = Vec::with_capacity(cells);
            match strategy {
                Approximation::Glimm { seed } => {
                    let theta: f64 = ChaCha8Rng::seed_from_u64(seed).random();
                    for j in 0..cells {
                        values.push(nearest_level(levels, u0.value(x_at(j) + theta * eps)));
                    }
                }
                _ => {
                    let mut carry = 0.0;
                    for j in 0..cells {
                        let avg = u0.integral(x_at(j), x_at(j + 1)) / eps;
                        let v = nearest_level(levels, avg + carry / eps);
                        carry += (avg - v) * eps;
                        values.push(v);
                    }
                }
            }
            let mut fronts = vec![Front {
                position: x_at(0),
                left,
            }];
            for j in 1..cells {
                fronts.push(Front {
                    position: x_at(j),
                    left: values[j - 1],
                });
            }
            fronts.push(Front {
                position: x_at(cells),
                left: values[cells - 1],
            });
            PiecewiseConstantProfile::new(fronts, right)?
        }
    };
    let distance = profile_delta(u0, &profile);
    Ok(Approximated {
        profile,
        distance,
        delta: distance / eps,
    })
}

/// Δ between profiles; when tails differ the comparison is restricted to the
/// hull of both supports.
pub fn profile_delta(u: &PiecewiseConstantProfile, v: &PiecewiseConstantProfile) -> f64 {
    match delta_distance(u, v) {
        Ok(d) => d,
        Err(_) => {
            let mut xs: Vec<f64> = u.fronts().iter().chain(v.fronts()).map(|f| f.position).collect();
            xs.sort_by(f64::total_cmp);
            match (xs.first(), xs.last()) {
                (Some(&a), Some(&b)) => delta_on_window(u, v, a, b),
                _ => 0.0,
            }
        }
    }
}

/// A front emitted by the Cauchy solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmittedFront {
    pub left: f64,
    pub right: f64,
    pub speed: f64,
}

/// Sampled solution of a Cauchy problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyTrajectory {
    pub times: Vec<f64>,
    pub profiles: Vec<PiecewiseConstantProfile>,
    /// Projected initial datum actually evolved.
    pub initial: PiecewiseConstantProfile,
    /// Δ(u0, projected u0).
    pub approximation_error: f64,
    /// Every front created by a Riemann solve, with its speed.
    pub fronts: Vec<EmittedFront>,
    pub collisions: usize,
}

/// Riemann-based solver on the piecewise-linear interpolant G^ℛ of G over
/// an equally spaced density set ℛ.
#[derive(Debug, Clone)]
pub struct CauchyScheme {
    flux: FluxFunction,
    levels: Vec<f64>,
    gr: Vec<f64>,
    dx: f64,
    dt: f64,
    approximation: Approximation,
    glimm: Option<u64>,
}

#[derive(Debug, Clone, Copy)]
struct TrackedFront {
    x0: f64,
    t0: f64,
    left: usize,
    right: usize,
    speed: f64,
}

impl TrackedFront {
    fn at(&self, t: f64) -> f64 {
        self.x0 + self.speed * (t - self.t0)
    }
}

impl CauchyScheme {
    /// Δt = `ratio`·Δx; rejects ratio > 1/(2V). The density set has spacing
    /// K·Δx (at least two levels).
    pub fn new(flux: &FluxFunction, dx: f64, ratio: f64) -> Result<Self> {
        if !(dx > 0.0) || !(ratio > 0.0) {
            return Err(Error::InvalidArgument("Δx and Δt/Δx must be positive".into()));
        }
        let v = flux.lipschitz();
        let limit = if v > 0.0 { 1.0 / (2.0 * v) } else { f64::INFINITY };
        if ratio > limit {
            return Err(Error::Cfl { ratio, limit });
        }
        let m = ((1.0 / dx).round() as usize).max(1);
        let k = flux.cap();
        let levels: Vec<f64> = (0..=m).map(|i| k * i as f64 / m as f64).collect();
        Self::with_levels(flux, dx, ratio, levels)
    }

    /// Same as [`CauchyScheme::new`] with an explicit density set.
    pub fn with_levels(flux: &FluxFunction, dx: f64, ratio: f64, levels: Vec<f64>) -> Result<Self> {
        let v = flux.lipschitz();
        let limit = if v > 0.0 { 1.0 / (2.0 * v) } else { f64::INFINITY };
        if ratio > limit {
            return Err(Error::Cfl { ratio, limit });
        }
        if levels.len() < 2 || levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("density set needs two increasing levels".into()));
        }
        let gr = levels.iter().map(|&r| flux.eval(r)).collect();
        Ok(Self {
            flux: flux.clone(),
            levels,
            gr,
            dx,
            dt: ratio * dx,
            approximation: Approximation::CellAverage,
            glimm: None,
        })
    }

    pub fn with_approximation(mut self, a: Approximation) -> Self {
        self.approximation = a;
        self
    }

    /// Resample on the Δx grid by random choice after every time step.
    pub fn with_glimm(mut self, seed: u64) -> Self {
        self.glimm = Some(seed);
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// G^ℛ.
    pub fn interpolated_flux(&self) -> FluxFunction {
        FluxFunction::table(&self.levels.iter().copied().zip(self.gr.iter().copied()).collect::<Vec<_>>())
            .expect("levels are increasing")
    }

    pub fn flux(&self) -> &FluxFunction {
        &self.flux
    }

    fn level_index(&self, v: f64) -> usize {
        let i = self.levels.partition_point(|&l| l < v);
        match (i.checked_sub(1), self.levels.get(i)) {
            (Some(j), Some(&b)) => {
                if v - self.levels[j] <= b - v {
                    j
                } else {
                    i
                }
            }
            (Some(j), None) => j,
            (None, _) => 0,
        }
    }

    /// Exact Riemann solution of G^ℛ between level indices: consecutive hull
    /// vertices as (left, right, speed), speeds increasing.
    fn riemann_fronts(&self, l: usize, r: usize) -> Vec<(usize, usize, f64)> {
        if l == r {
            return Vec::new();
        }
        let (lo, hi) = (l.min(r), l.max(r));
        let sgn = if l < r { 1.0 } else { -1.0 };
        let xs: Vec<f64> = self.levels[lo..=hi].to_vec();
        let ys: Vec<f64> = self.gr[lo..=hi].iter().map(|g| sgn * g).collect();
        let mut hull: Vec<usize> = lower_hull(&xs, &ys).into_iter().map(|i| i + lo).collect();
        if l > r {
            hull.reverse();
        }
        hull.windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let speed = (self.gr[a] - self.gr[b]) / (self.levels[a] - self.levels[b]);
                (a, b, speed)
            })
            .collect()
    }

    fn profile_at(&self, fronts: &[TrackedFront], right: usize, t: f64) -> PiecewiseConstantProfile {
        let mut out: Vec<Front> = Vec::with_capacity(fronts.len());
        for f in fronts {
            let x = f.at(t);
            let left = self.levels[f.left];
            match out.last_mut() {
                // fronts meeting at this instant: keep the outer states only
                Some(prev) if x <= prev.position => {}
                _ => out.push(Front { position: x, left }),
            }
        }
        PiecewiseConstantProfile::new(out, self.levels[right]).expect("fronts ordered")
    }

    fn init_fronts(&self, u: &PiecewiseConstantProfile, t: f64, emitted: &mut Vec<EmittedFront>) -> (Vec<TrackedFront>, usize) {
        let vals = u.values();
        let idx: Vec<usize> = vals.iter().map(|&v| self.level_index(v)).collect();
        let mut fronts = Vec::new();
        for (k, f) in u.fronts().iter().enumerate() {
            for (a, b, s) in self.riemann_fronts(idx[k], idx[k + 1]) {
                emitted.push(EmittedFront {
                    left: self.levels[a],
                    right: self.levels[b],
                    speed: s,
                });
                fronts.push(TrackedFront {
                    x0: f.position,
                    t0: t,
                    left: a,
                    right: b,
                    speed: s,
                });
            }
        }
        (fronts, *idx.last().unwrap())
    }

    /// Solves up to time `horizon`, sampling at multiples of Δt.
    pub fn solve(&self, u0: &PiecewiseConstantProfile, horizon: f64) -> Result<CauchyTrajectory> {
        if !(horizon >= 0.0) {
            return Err(Error::InvalidArgument("horizon must be nonnegative".into()));
        }
        let steps = (horizon / self.dt + 1e-9).floor() as usize;
        let times: Vec<f64> = (1..=steps).map(|k| k as f64 * self.dt).collect();
        self.solve_at(u0, &times)
    }

    /// Solves and samples at the given increasing positive times (time 0 is
    /// always included). Glimm resampling, when enabled, happens at each
    /// sample time.
    pub fn solve_at(&self, u0: &PiecewiseConstantProfile, sample_times: &[f64]) -> Result<CauchyTrajectory> {
        if sample_times.iter().any(|t| !(*t > 0.0)) || sample_times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("sample times must be positive and increasing".into()));
        }
        let approx = approximate_profile(u0, self.dx, &self.levels, self.approximation)?;
        let initial = approx.profile.clone();
        let mut emitted = Vec::new();
        let (mut fronts, mut right) = self.init_fronts(&initial, 0.0, &mut emitted);
        let mut times = vec![0.0];
        let mut profiles = vec![initial.clone()];
        let mut t = 0.0;
        let mut collisions = 0usize;
        for (k, &target) in sample_times.iter().enumerate() {
            let k = k + 1;
            loop {
                // earliest collision among neighbours
                let mut best: Option<(f64, usize)> = None;
                for i in 0..fronts.len().saturating_sub(1) {
                    let (a, b) = (&fronts[i], &fronts[i + 1]);
                    if a.speed > b.speed {
                        let tc = ((b.x0 - b.speed * b.t0) - (a.x0 - a.speed * a.t0)) / (a.speed - b.speed);
                        let tc = tc.max(t);
                        if best.is_none_or(|(bt, _)| tc < bt) {
                            best = Some((tc, i));
                        }
                    }
                }
                match best {
                    Some((tc, i)) if tc <= target => {
                        let xc = fronts[i].at(tc);
                        let tol = 1e-12 * (1.0 + xc.abs());
                        let mut lo = i;
                        while lo > 0 && (fronts[lo - 1].at(tc) - xc).abs() <= tol {
                            lo -= 1;
                        }
                        let mut hi = i + 1;
                        while hi + 1 < fronts.len() && (fronts[hi + 1].at(tc) - xc).abs() <= tol {
                            hi += 1;
                        }
                        let (l, r) = (fronts[lo].left, fronts[hi].right);
                        let new: Vec<TrackedFront> = self
                            .riemann_fronts(l, r)
                            .into_iter()
                            .map(|(a, b, s)| {
                                emitted.push(EmittedFront {
                                    left: self.levels[a],
                                    right: self.levels[b],
                                    speed: s,
                                });
                                TrackedFront {
                                    x0: xc,
                                    t0: tc,
                                    left: a,
                                    right: b,
                                    speed: s,
                                }
                            })
                            .collect();
                        fronts.splice(lo..=hi, new);
                        collisions += 1;
                        t = tc;
                    }
                    _ => break,
                }
            }
            t = target;
            let mut prof = self.profile_at(&fronts, right, t);
            if let Some(seed) = self.glimm {
                prof = approximate_profile(
                    &prof,
                    self.dx,
                    &self.levels,
                    Approximation::Glimm {
                        seed: seed.wrapping_add(k as u64),
                    },
                )?
                .profile;
                let (f, r) = self.init_fronts(&prof, t, &mut emitted);
                fronts = f;
                right = r;
            }
            times.push(t);
            profiles.push(prof);
        }
        Ok(CauchyTrajectory {
            times,
            profiles,
            initial,
            approximation_error: approx.distance,
            fronts: emitted,
            collisions,
        })
    }
}

/// Convenience wrapper: `CauchyScheme::new(flux, dx, ratio)?.solve(u0, horizon)`.
pub fn cauchy_solve(
    flux: &FluxFunction,
    u0: &PiecewiseConstantProfile,
    horizon: f64,
    dx: f64,
    ratio: f64,
) -> Result<CauchyTrajectory> {
    CauchyScheme::new(flux, dx, ratio)?.solve(u0, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g2() -> FluxFunction {
        FluxFunction::two_step()
    }

    #[test]
    fn polynomial_arithmetic() {
        let p = Polynomial::new(vec![1.0, -3.0, 2.0]);
        assert_eq!(p.eval(2.0), 3.0);
        assert_eq!(p.derivative().coeffs(), &[-3.0, 4.0]);
        let roots = p.roots_in(0.0, 3.0, 1000);
        assert_eq!(roots.len(), 2);
        assert!((roots[0] - 0.5).abs() < 1e-12 && (roots[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overtaking_flux_with_unit_rates_is_two_step() {
        let f = FluxFunction::overtaking(&[1.0, 1.0], &[0.0, 0.0]);
        assert_eq!(f.as_polynomial().unwrap().coeffs(), g2().as_polynomial().unwrap().coeffs());
    }

    #[test]
    fn convex_flux_envelope_is_itself() {
        let f = FluxFunction::polynomial(vec![0.0, 0.0, 1.0], 1.0).unwrap();
        let e = lower_envelope(&f, 0.0, 1.0);
        assert_eq!(e.pieces(), &[Piece::Curve { r0: 0.0, r1: 1.0 }]);
        assert!(e.kinks(&f).is_empty());
        assert!(e.flats(&f).is_empty());
    }

    #[test]
    fn two_step_convexity_region() {
        let (a, convex_left) = single_inflexion(&g2()).unwrap();
        assert!((a - 1.0 / 6.0).abs() < 1e-12);
        assert!(convex_left);
        // envelope on [0, 1/6] is the flux itself
        let e = lower_envelope(&g2(), 0.0, 1.0 / 6.0);
        assert!(e.pieces().iter().all(|p| matches!(p, Piece::Curve { .. })));
    }

    #[test]
    fn envelope_of_two_step_on_half_interval() {
        let f = g2();
        let e = lower_envelope(&f, 0.0, 0.5);
        // grid oracle
        let n = 5000;
        let xs: Vec<f64> = (0..=n).map(|i| 0.5 * i as f64 / n as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| f.eval(x)).collect();
        let hull = lower_hull(&xs, &ys);
        let hull_at = |r: f64| {
            let k = hull.partition_point(|&i| xs[i] <= r).clamp(1, hull.len() - 1);
            let (i, j) = (hull[k - 1], hull[k]);
            ys[i] + (ys[j] - ys[i]) * (r - xs[i]) / (xs[j] - xs[i])
        };
        for i in 0..=1000 {
            let r = 0.5 * i as f64 / 1000.0;
            assert!((e.value(&f, r) - hull_at(r)).abs() < 1e-6);
        }
        // the chord is tangent at (1 - 2·0.5)/4 = 0 → no curve piece; the
        // hull is the chord from 0 to 1/2
        let chords: Vec<_> = e.pieces().iter().filter(|p| matches!(p, Piece::Chord { .. })).collect();
        assert_eq!(chords.len(), 1);
    }

    #[test]
    fn conjugate_state_of_two_step() {
        let w = conjugate_state(&g2(), 0.05).unwrap().unwrap();
        assert!((w - 0.225).abs() < 1e-9);
        // (u - w)(4u - 1 + 2w) = 0 for the tangency equation
        for w in [0.0, 0.02, 0.1, 0.15] {
            let c = conjugate_state(&g2(), w).unwrap().unwrap();
            assert!((c - (1.0 - 2.0 * w) / 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn two_step_rarefaction_closed_form() {
        let f = g2();
        let (lambda, rho) = (0.02, 0.12);
        let fan = riemann_solve(&f, lambda, rho);
        let h1 = |x: f64| (1.0 - (7.0 - 6.0 * x).sqrt()) / 6.0;
        let (v0, v1) = (f.deriv(lambda), f.deriv(rho));
        for i in 1..100 {
            let v = v0 + (v1 - v0) * i as f64 / 100.0;
            assert!((fan.density(v) - h1(v)).abs() < 1e-9);
        }
        assert_eq!(fan.density(v0 - 0.1), lambda);
        assert_eq!(fan.density(v1 + 0.1), rho);
        assert_eq!(classify_riemann(&f, lambda, rho).unwrap().kind, RiemannKind::RarefactionFan);
    }

    #[test]
    fn two_step_shock_and_contact() {
        let f = g2();
        let (lambda, rho) = (0.2, 0.05);
        let c = classify_riemann(&f, lambda, rho).unwrap();
        let s = rh_speed(&f, lambda, rho).unwrap();
        assert_eq!(c.kind, RiemannKind::Shock { speed: s });
        let fan = riemann_solve(&f, lambda, rho);
        let d = fan.discontinuities();
        assert_eq!(d.len(), 1);
        assert!((d[0].0 - s).abs() < 1e-9);

        let (lambda, rho) = (0.6, 0.05);
        let c = classify_riemann(&f, lambda, rho).unwrap();
        match c.kind {
            RiemannKind::Contact { tangent, speed, .. } => {
                assert!((tangent - 0.225).abs() < 1e-9);
                assert!((speed - f.deriv(0.225)).abs() < 1e-9);
            }
            k => panic!("expected contact, got {k:?}"),
        }
        let fan = riemann_solve(&f, lambda, rho);
        let d = fan.discontinuities();
        assert_eq!(d.len(), 1);
        assert!((d[0].0 - f.deriv(0.225)).abs() < 1e-8);
        for i in 0..200 {
            let v = -3.0 + 6.0 * i as f64 / 200.0;
            if (v - d[0].0).abs() > 1e-6 {
                assert!((fan.density(v) - c.density(v)).abs() < 1e-6, "v {v}");
            }
        }
    }

    #[test]
    fn rh_examples() {
        let lin = FluxFunction::polynomial(vec![0.0, 2.5], 1.0).unwrap();
        assert_eq!(rh_speed(&lin, 0.1, 0.7).unwrap(), 2.5);
        let burgers = FluxFunction::simple_exclusion(1.0);
        assert_eq!(rh_speed(&burgers, 1.0, 0.0).unwrap(), 0.0);
        let f = g2();
        let want = (f.eval(0.3) - f.eval(0.1)) / 0.2;
        assert!((rh_speed(&f, 0.3, 0.1).unwrap() - want).abs() < 1e-15);
        assert!(rh_speed(&f, 0.3, 0.3).is_err());
    }

    #[test]
    fn oleinik_examples() {
        let convex = FluxFunction::polynomial(vec![0.0, 0.0, 1.0], 1.0).unwrap();
        assert!(oleinik_check(&convex, 0.8, 0.2, 1e-12));
        assert!(!oleinik_check(&convex, 0.2, 0.8, 1e-12));
        let table = FluxFunction::table(&[(0.0, 0.0), (0.3, 0.3), (0.7, 0.7), (1.0, 0.0)]).unwrap();
        assert!(oleinik_check(&table, 0.3, 0.7, 1e-12));
        assert!(oleinik_check(&table, 0.7, 0.3, 1e-12));
    }

    #[test]
    fn tasep_fan_and_current() {
        let f = FluxFunction::simple_exclusion(1.0);
        let fan = riemann_solve(&f, 1.0, 0.0);
        for i in 0..=40 {
            let v = -1.0 + i as f64 / 20.0;
            assert!((fan.density(v) - (1.0 - v) / 2.0).abs() < 1e-9);
        }
        assert!((fan.current(0.0) - 0.25).abs() < 1e-12);
        assert!((fan.current(-0.5) - 0.5625).abs() < 1e-12);
        assert!((fan.current(0.5) - 0.0625).abs() < 1e-12);
        assert_eq!(fan.current(-5.0), f.eval(1.0) + 5.0);
        let flat = riemann_solve(&f, 0.3, 0.3);
        assert_eq!(flat.current(0.7), f.eval(0.3) - 0.7 * 0.3);
        assert_eq!(flat.density(0.1), 0.3);
    }

    #[test]
    fn fan_primitive_matches_quadrature() {
        let f = g2();
        let fan = riemann_solve(&f, 0.8, 0.02);
        let p = fan.at_time(1.0);
        let (a, b) = (-1.0, 1.3);
        let n = 200_000;
        let h = (b - a) / n as f64;
        let quad: f64 = (0..n).map(|i| p.value(a + (i as f64 + 0.5) * h) * h).sum();
        assert!((quad - p.integral(a, b)).abs() < 1e-6);
    }

    #[test]
    fn cfl_violation_rejected() {
        let f = FluxFunction::simple_exclusion(1.0);
        assert!(matches!(CauchyScheme::new(&f, 0.01, 0.6), Err(Error::Cfl { .. })));
        assert!(CauchyScheme::new(&f, 0.01, 0.5).is_ok());
    }

    #[test]
    fn constant_data_stay_constant() {
        let f = g2();
        let u0 = PiecewiseConstantProfile::constant(0.4);
        let tr = cauchy_solve(&f, &u0, 1.0, 0.01, 0.15).unwrap();
        assert!(tr.profiles.iter().all(|p| p == &u0));
    }

    #[test]
    fn cauchy_riemann_matches_fan() {
        let f = FluxFunction::simple_exclusion(1.0);
        for dx in [0.02, 0.01, 0.005] {
            let tr = cauchy_solve(&f, &PiecewiseConstantProfile::riemann(1.0, 0.0, 0.0), 1.0, dx, 0.5).unwrap();
            let fan = riemann_solve(&f, 1.0, 0.0);
            let last = tr.profiles.last().unwrap();
            let t = *tr.times.last().unwrap();
            let d = delta_on_window(last, &fan.at_time(t), -2.0, 2.0);
            assert!(d <= 0.5 * dx, "dx {dx}: Δ = {d}");
        }
    }

    #[test]
    fn approximation_of_stepwise_data_is_identity() {
        let levels: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let u = PiecewiseConstantProfile::from_steps(&[0.0, 0.5, 1.0], &[0.0, 0.3, 0.7, 0.0]).unwrap();
        let a = approximate_profile(&u, 0.1, &levels, Approximation::CellAverage).unwrap();
        assert_eq!(a.profile, u);
        assert_eq!(a.distance, 0.0);
    }

    #[test]
    fn ramp_approximation_delta_is_bounded() {
        // ramp through many small steps
        let n = 2000;
        let breaks: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let mut values = vec![0.0];
        values.extend((0..n).map(|i| (i as f64 + 0.5) / n as f64));
        values.push(0.0);
        let u = PiecewiseConstantProfile::from_steps(&breaks, &values).unwrap();
        let levels: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        for eps in [0.1, 0.05, 0.02, 0.01] {
            let a = approximate_profile(&u, eps, &levels, Approximation::CellAverage).unwrap();
            assert!(a.delta <= 1.0, "eps {eps} δ {}", a.delta);
        }
        let binary = [0.0, 1.0];
        let a = approximate_profile(&u, 0.05, &binary, Approximation::CellAverage).unwrap();
        assert!(a.profile.values().iter().all(|v| *v == 0.0 || *v == 1.0));
        assert!(a.delta <= 1.0);
        let nearest = approximate_profile(&u, 0.05, &binary, Approximation::Nearest).unwrap();
        assert!(nearest.profile.values().iter().all(|v| *v == 0.0 || *v == 1.0));
        assert!(nearest.distance <= 0.25 + 1e-9);
    }

    fn random_poly() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, 4..6).prop_map(|mut c| {
            c[0] = 0.0;
            c
        })
    }

    proptest! {
        #[test]
        fn envelope_matches_grid_hull(c in random_poly(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assume!(hi - lo > 1e-3);
            let f = FluxFunction::polynomial(c, 1.0).unwrap();
            let e = lower_envelope(&f, lo, hi);
            let n = 20_000;
            let xs: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
            let ys: Vec<f64> = xs.iter().map(|&x| f.eval(x)).collect();
            let hull = lower_hull(&xs, &ys);
            for k in 0..=200 {
                let r = lo + (hi - lo) * k as f64 / 200.0;
                let m = hull.partition_point(|&i| xs[i] <= r).clamp(1, hull.len() - 1);
                let (i, j) = (hull[m - 1], hull[m]);
                let h = ys[i] + (ys[j] - ys[i]) * (r - xs[i]) / (xs[j] - xs[i]);
                prop_assert!((e.value(&f, r) - h).abs() < 1e-6);
            }
            // convexity of the envelope: slopes nondecreasing
            let vals: Vec<f64> = xs.iter().step_by(100).map(|&x| e.value(&f, x)).collect();
            for w in vals.windows(3) {
                prop_assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-9);
            }
        }

        #[test]
        fn h_is_monotone_and_bounded(c in random_poly(), lambda in 0.0f64..1.0, rho in 0.0f64..1.0) {
            let f = FluxFunction::polynomial(c, 1.0).unwrap();
            let fan = riemann_solve(&f, lambda, rho);
            let (lo, hi) = (lambda.min(rho), lambda.max(rho));
            let mut prev = fan.density(-10.0);
            for i in 0..=400 {
                let v = -10.0 + 20.0 * i as f64 / 400.0;
                let h = fan.density(v);
                prop_assert!(h >= lo - 1e-12 && h <= hi + 1e-12);
                if lambda < rho { prop_assert!(h >= prev - 1e-9) } else { prop_assert!(h <= prev + 1e-9) }
                prev = h;
            }
            for (s, l, r) in fan.discontinuities() {
                prop_assert!(oleinik_check(&f, l, r, 1e-9));
                prop_assert!((rh_speed(&f, l, r).unwrap() - s).abs() < 1e-9);
            }
        }
    }
}
