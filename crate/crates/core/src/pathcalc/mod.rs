//! Exact algebra of right-continuous piecewise-linear paths with jumps.
//!
//! A path lives on a finite interval `[start, end]` and is stored as a list of
//! knots. Each knot carries the right value at its time and the slope valid up
//! to the next knot. A jump at time `t` is the difference between the knot value
//! and the left limit implied by the previous segment. A knot placed exactly at
//! `end` encodes a jump at the right edge.

mod measure;
mod ops;

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use measure::{stieltjes, stieltjes_signed, sup_distance, wnorm};
pub use ops::{compose, compose_flat_slack, monotone_inverse, rc_inverse, running_inf, running_sup};

/// Absolute tolerance under which two breakpoint times are treated as one.
pub const TIME_TOL: f64 = 1e-12;
/// Jumps smaller than this (relative to `max(1, |value|)`) are removed.
pub const JUMP_TOL: f64 = 1e-12;
/// Slack allowed when checking monotonicity of computed paths.
pub const MONO_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub t: f64,
    pub value: f64,
    pub slope: f64,
}

impl Knot {
    pub fn new(t: f64, value: f64, slope: f64) -> Self {
        Knot { t, value, slope }
    }

    /// Value of this knot's affine piece at `t`.
    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        self.value + self.slope * (t - self.t)
    }
}

/// Right-continuous piecewise-linear path with finitely many jumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePath {
    start: f64,
    end: f64,
    knots: Vec<Knot>,
}

impl PiecewisePath {
    /// Builds a path from knots. The first knot must sit at `start`; times must be
    /// strictly increasing and not exceed `end`. The result is canonicalized.
    pub fn new(start: f64, end: f64, knots: Vec<Knot>) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() || start > end {
            return Err(Error::domain(format!("invalid domain [{start}, {end}]")));
        }
        let first = knots.first().ok_or_else(|| Error::domain("path needs at least one knot"))?;
        if (first.t - start).abs() > TIME_TOL {
            return Err(Error::domain(format!(
                "first breakpoint {} does not match domain start {start}",
                first.t
            )));
        }
        for w in knots.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::domain(format!(
                    "breakpoints not strictly increasing at {}",
                    w[1].t
                )));
            }
        }
        if let Some(k) = knots.iter().find(|k| !k.t.is_finite() || !k.value.is_finite() || !k.slope.is_finite()) {
            return Err(Error::domain(format!("non-finite knot at t={}", k.t)));
        }
        let last = knots.last().unwrap();
        if last.t > end + TIME_TOL {
            return Err(Error::domain(format!("breakpoint {} beyond domain end {end}", last.t)));
        }
        Ok(Self::from_sorted(start, end, knots))
    }

    /// Canonicalizing constructor for internally produced knots that are already
    /// sorted (ties allowed; the later knot wins).
    pub(crate) fn from_sorted(start: f64, end: f64, raw: Vec<Knot>) -> Self {
        PiecewisePath { start, end, knots: canonical(start, end, raw) }
    }

    pub fn constant(start: f64, end: f64, value: f64) -> Self {
        PiecewisePath { start, end, knots: vec![Knot::new(start, value, 0.0)] }
    }

    pub fn zero(start: f64, end: f64) -> Self {
        Self::constant(start, end, 0.0)
    }

    /// Affine path with value `v0` at `start`.
    pub fn linear(start: f64, end: f64, v0: f64, slope: f64) -> Self {
        Self::from_sorted(start, end, vec![Knot::new(start, v0, slope)])
    }

    pub fn identity(start: f64, end: f64) -> Self {
        Self::linear(start, end, start, 1.0)
    }

    /// Step path starting at `base`, with jumps `(time, size)` in increasing time order.
    pub fn steps(start: f64, end: f64, base: f64, jumps: &[(f64, f64)]) -> Result<Self> {
        let mut knots = vec![Knot::new(start, base, 0.0)];
        let mut level = base;
        for &(t, size) in jumps {
            if t < start || t > end {
                return Err(Error::domain(format!("jump time {t} outside [{start}, {end}]")));
            }
            level += size;
            if t == start {
                knots[0].value = level;
            } else if knots.last().unwrap().t >= t {
                return Err(Error::domain("jump times must be increasing"));
            } else {
                knots.push(Knot::new(t, level, 0.0));
            }
        }
        Ok(Self::from_sorted(start, end, knots))
    }

    /// Continuous polyline through `(t, value)` vertices; the domain spans them.
    pub fn from_vertices(vertices: &[(f64, f64)]) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::domain("polyline needs at least one vertex"));
        }
        let mut knots = Vec::with_capacity(vertices.len());
        for w in vertices.windows(2) {
            let (t0, v0) = w[0];
            let (t1, v1) = w[1];
            if !(t1 > t0) {
                return Err(Error::domain("polyline times must be strictly increasing"));
            }
            knots.push(Knot::new(t0, v0, (v1 - v0) / (t1 - t0)));
        }
        let (tl, vl) = *vertices.last().unwrap();
        if vertices.len() == 1 {
            knots.push(Knot::new(tl, vl, 0.0));
        }
        Ok(Self::from_sorted(vertices[0].0, tl, knots))
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    /// Breakpoint times.
    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.knots.iter().map(|k| k.t)
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the segment containing `t` (the last knot with time ≤ t).
    #[inline]
    pub(crate) fn index_at(&self, t: f64) -> usize {
        self.knots.partition_point(|k| k.t <= t).saturating_sub(1)
    }

    /// Right end of segment `i`.
    #[inline]
    pub(crate) fn seg_end(&self, i: usize) -> f64 {
        self.knots.get(i + 1).map_or(self.end, |k| k.t)
    }

    /// Left limit at knot `i` (equals the knot value for `i = 0`).
    #[inline]
    pub(crate) fn left_at_knot(&self, i: usize) -> f64 {
        if i == 0 {
            self.knots[0].value
        } else {
            self.knots[i - 1].at(self.knots[i].t)
        }
    }

    /// Right-continuous value at `t`, clamped to the domain.
    #[inline]
    pub(crate) fn value(&self, t: f64) -> f64 {
        self.knots[self.index_at(t)].at(t)
    }

    /// Right-continuous evaluation.
    pub fn eval(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.value(t))
    }

    /// Left limit at `t` (the value itself at `start`).
    pub fn left_limit(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let i = self.knots.partition_point(|k| k.t < t).saturating_sub(1);
        Ok(self.knots[i].at(t))
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t.is_nan() || t < self.start - TIME_TOL || t > self.end + TIME_TOL {
            return Err(Error::domain(format!(
                "time {t} outside domain [{}, {}]",
                self.start, self.end
            )));
        }
        Ok(())
    }

    pub fn start_value(&self) -> f64 {
        self.knots[0].value
    }

    pub fn end_value(&self) -> f64 {
        self.knots.last().unwrap().at(self.end)
    }

    /// Jumps as `(time, size)` pairs.
    pub fn jumps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (1..self.knots.len()).filter_map(move |i| {
            let d = self.knots[i].value - self.left_at_knot(i);
            (d != 0.0).then_some((self.knots[i].t, d))
        })
    }

    pub fn is_continuous(&self) -> bool {
        self.jumps().next().is_none()
    }

    pub fn is_nondecreasing(&self) -> bool {
        let scale = self.max_abs().max(1.0);
        self.knots.iter().all(|k| k.slope >= -MONO_TOL)
            && self.jumps().all(|(_, d)| d >= -MONO_TOL * scale)
    }

    /// Largest |value| over the domain (attained at a knot, a left limit or `end`).
    pub fn max_abs(&self) -> f64 {
        let mut m = self.end_value().abs();
        for i in 0..self.knots.len() {
            m = m.max(self.knots[i].value.abs()).max(self.left_at_knot(i).abs());
        }
        m
    }

    /// Minimum over the domain including left limits.
    pub fn min_value(&self) -> f64 {
        let mut m = self.end_value();
        for i in 0..self.knots.len() {
            m = m.min(self.knots[i].value).min(self.left_at_knot(i));
        }
        m
    }

    /// Maximum over the domain including left limits.
    pub fn max_value(&self) -> f64 {
        let mut m = self.end_value();
        for i in 0..self.knots.len() {
            m = m.max(self.knots[i].value).max(self.left_at_knot(i));
        }
        m
    }

    /// Restriction to `[a, b] ⊂ [start, end]`.
    pub fn restrict(&self, a: f64, b: f64) -> Result<Self> {
        if a > b || a < self.start - TIME_TOL || b > self.end + TIME_TOL {
            return Err(Error::domain(format!(
                "cannot restrict [{}, {}] to [{a}, {b}]",
                self.start, self.end
            )));
        }
        let a = a.max(self.start);
        let b = b.min(self.end);
        let i0 = self.index_at(a);
        let mut knots = vec![Knot::new(a, self.knots[i0].at(a), self.knots[i0].slope)];
        knots.extend(self.knots[i0 + 1..].iter().take_while(|k| k.t <= b).copied());
        Ok(Self::from_sorted(a, b, knots))
    }

    /// Extends the domain to the right, continuing the last segment.
    pub fn extend_to(&self, end: f64) -> Self {
        let mut p = self.clone();
        if end > p.end {
            if p.knots.last().unwrap().t == p.end && p.knots.len() > 1 {
                p.knots.last_mut().unwrap().slope = 0.0;
            }
            p.end = end;
        }
        p
    }

    /// Extends the domain to the right, holding the end value constant.
    pub fn extend_constant(&self, end: f64) -> Self {
        if end <= self.end {
            return self.clone();
        }
        let mut knots = self.knots.clone();
        let v = self.end_value();
        if knots.last().unwrap().t == self.end {
            knots.last_mut().unwrap().slope = 0.0;
        } else {
            knots.push(Knot::new(self.end, v, 0.0));
        }
        Self::from_sorted(self.start, end, knots)
    }

    /// Pointwise `self * xi`.
    pub fn scale(&self, xi: f64) -> Self {
        let knots = self
            .knots
            .iter()
            .map(|k| Knot::new(k.t, k.value * xi, k.slope * xi))
            .collect();
        Self::from_sorted(self.start, self.end, knots)
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    pub fn add_constant(&self, c: f64) -> Self {
        let knots = self.knots.iter().map(|k| Knot::new(k.t, k.value + c, k.slope)).collect();
        Self::from_sorted(self.start, self.end, knots)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_linear(other, 1.0, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_linear(other, 1.0, -1.0)
    }

    /// `a * self + b * other` on the merged breakpoint grid.
    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.zip_linear(other, a, b)
    }

    fn zip_linear(&self, other: &Self, a: f64, b: f64) -> Result<Self> {
        self.same_domain(other)?;
        let grid = merged_grid(self, other);
        let knots = grid
            .iter()
            .map(|&(t, i, j)| {
                let (p, q) = (&self.knots[i], &other.knots[j]);
                Knot::new(t, a * p.at(t) + b * q.at(t), a * p.slope + b * q.slope)
            })
            .collect();
        Ok(Self::from_sorted(self.start, self.end, knots))
    }

    pub fn max(&self, other: &Self) -> Result<Self> {
        self.zip_extreme(other, true)
    }

    pub fn min(&self, other: &Self) -> Result<Self> {
        self.zip_extreme(other, false)
    }

    fn zip_extreme(&self, other: &Self, take_max: bool) -> Result<Self> {
        self.same_domain(other)?;
        let grid = merged_grid(self, other);
        let sign = if take_max { 1.0 } else { -1.0 };
        let mut knots = Vec::with_capacity(grid.len() + 8);
        for (g, &(t, i, j)) in grid.iter().enumerate() {
            let (p, q) = (&self.knots[i], &other.knots[j]);
            let t_next = grid.get(g + 1).map_or(self.end, |x| x.0);
            // positive advantage means `p` is the one to keep
            let d0 = sign * (p.at(t) - q.at(t));
            let d1 = sign * (p.at(t_next) - q.at(t_next));
            let (first, second) = if d0 > 0.0 || (d0 == 0.0 && d1 >= 0.0) { (p, q) } else { (q, p) };
            knots.push(Knot::new(t, first.at(t), first.slope));
            if (d0 > 0.0 && d1 < 0.0) || (d0 < 0.0 && d1 > 0.0) {
                let ds = p.slope - q.slope;
                let tc = (t - (p.at(t) - q.at(t)) / ds).clamp(t, t_next);
                knots.push(Knot::new(tc, second.at(tc), second.slope));
            }
        }
        Ok(Self::from_sorted(self.start, self.end, knots))
    }

    fn same_domain(&self, other: &Self) -> Result<()> {
        if (self.start - other.start).abs() > TIME_TOL || (self.end - other.end).abs() > TIME_TOL {
            return Err(Error::domain(format!(
                "incompatible domains [{}, {}] and [{}, {}]",
                self.start, self.end, other.start, other.end
            )));
        }
        Ok(())
    }

    /// Sum of a nonempty list of paths on a common domain.
    pub fn sum<'a>(paths: impl IntoIterator<Item = &'a PiecewisePath>) -> Result<Option<Self>> {
        let mut acc: Option<Self> = None;
        for p in paths {
            acc = Some(match acc {
                None => p.clone(),
                Some(a) => a.add(p)?,
            });
        }
        Ok(acc)
    }

    /// `(Θ_c p)(t) = p(t + c)`: translate the domain left by `c`.
    pub fn shift_theta(&self, c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::domain("shift must be finite"));
        }
        let knots = self.knots.iter().map(|k| Knot::new(k.t - c, k.value, k.slope)).collect();
        Ok(Self::from_sorted(self.start - c, self.end - c, knots))
    }

    /// `Ξ_c p = Θ_c p − p(c)`; vanishes at time 0 of the shifted path.
    pub fn shift_xi(&self, c: f64) -> Result<Self> {
        let pc = self.eval(c)?;
        Ok(self.shift_theta(c)?.add_constant(-pc))
    }

    /// Re-canonicalizes (a no-op on any path produced by this module).
    pub fn canonicalized(&self) -> Self {
        Self::from_sorted(self.start, self.end, self.knots.clone())
    }
}

/// Union of breakpoint times of `p` and `q` over the common domain, with the
/// knot index of each path in force at every grid time.
pub fn merged_grid(p: &PiecewisePath, q: &PiecewisePath) -> Vec<(f64, usize, usize)> {
    let lo = p.start.max(q.start);
    let hi = p.end.min(q.end);
    let (mut i, mut j) = (p.index_at(lo), q.index_at(lo));
    let mut out = Vec::with_capacity(p.knots.len() + q.knots.len());
    out.push((lo, i, j));
    loop {
        let tp = p.knots.get(i + 1).map_or(f64::INFINITY, |k| k.t);
        let tq = q.knots.get(j + 1).map_or(f64::INFINITY, |k| k.t);
        let t = tp.min(tq);
        if t > hi {
            break;
        }
        if tp == t {
            i += 1;
        }
        if tq == t {
            j += 1;
        }
        out.push((t, i, j));
    }
    out
}

/// Single-pass canonicalization: near-coincident knots collapse (later wins),
/// negligible jumps snap to the left limit, mergeable segments merge, and a
/// knot at `end` survives only if it carries a jump.
fn canonical(start: f64, end: f64, raw: Vec<Knot>) -> Vec<Knot> {
    let mut out: Vec<Knot> = Vec::with_capacity(raw.len());
    'next: for mut k in raw {
        if !out.is_empty() && k.t > end - TIME_TOL {
            k.t = end;
            k.slope = 0.0;
        }
        while let Some(last) = out.last() {
            if k.t - last.t > TIME_TOL {
                break;
            }
            if out.len() == 1 {
                out[0].value = k.value;
                out[0].slope = k.slope;
                continue 'next;
            }
            out.pop();
        }
        match out.last() {
            None => out.push(Knot::new(start, k.value, k.slope)),
            Some(last) => {
                let left = last.at(k.t);
                if (k.value - left).abs() <= JUMP_TOL * left.abs().max(1.0) {
                    if k.t == end || k.slope == last.slope {
                        continue;
                    }
                    k.value = left;
                }
                out.push(k);
            }
        }
    }
    if out.is_empty() {
        out.push(Knot::new(start, 0.0, 0.0));
    }
    if start == end {
        out[0].slope = 0.0;
    }
    out
}

/// Nondecreasing path: slopes and jumps are nonnegative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonePath(PiecewisePath);

impl MonotonePath {
    pub fn new(p: PiecewisePath) -> Result<Self> {
        if !p.is_nondecreasing() {
            return Err(Error::Input("path is not nondecreasing".into()));
        }
        Ok(MonotonePath(p))
    }

    pub(crate) fn trusted(p: PiecewisePath) -> Self {
        MonotonePath(p)
    }

    pub fn into_inner(self) -> PiecewisePath {
        self.0
    }

    pub fn as_path(&self) -> &PiecewisePath {
        &self.0
    }
}

impl Deref for MonotonePath {
    type Target = PiecewisePath;
    fn deref(&self) -> &PiecewisePath {
        &self.0
    }
}

/// Continuous nondecreasing path with positive total increase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvertiblePath(MonotonePath);

impl InvertiblePath {
    pub fn new(p: PiecewisePath) -> Result<Self> {
        if !p.is_continuous() {
            return Err(Error::Input("invertible path must be continuous".into()));
        }
        let m = MonotonePath::new(p)?;
        if !(m.end_value() > m.start_value()) {
            return Err(Error::DegenerateInput("path has zero total increase".into()));
        }
        Ok(InvertiblePath(m))
    }

    pub fn into_inner(self) -> PiecewisePath {
        self.0 .0
    }

    pub fn as_monotone(&self) -> &MonotonePath {
        &self.0
    }
}

impl Deref for InvertiblePath {
    type Target = PiecewisePath;
    fn deref(&self) -> &PiecewisePath {
        &self.0 .0
    }
}
