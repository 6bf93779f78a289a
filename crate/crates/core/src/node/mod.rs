//! Single-node multiclass model with two priority groups.
//!
//! High-priority classes preempt low-priority ones; each group is served fifo.
//! All outputs are exact piecewise-linear paths computed from the arrival paths
//! `a_j` and service-allocation paths `s_j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pathcalc::{
    compose, compose_flat_slack, merged_grid, monotone_inverse, rc_inverse, running_sup, InvertiblePath, Knot, MonotonePath,
    PiecewisePath,
};

/// Relative slack used when the completed-work clock stalls exactly at the
/// level that releases a customer; absorbs rounding in the workload arithmetic.
pub const DEPARTURE_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub classes: usize,
    pub high: Vec<usize>,
    pub low: Vec<usize>,
}

impl NodeSpec {
    pub fn new(classes: usize, high: Vec<usize>, low: Vec<usize>) -> Result<Self> {
        let spec = NodeSpec { classes, high, low };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.low.is_empty() {
            return Err(Error::Config("low-priority class set must be nonempty".into()));
        }
        let mut seen = vec![false; self.classes];
        for &j in self.high.iter().chain(&self.low) {
            if j >= self.classes {
                return Err(Error::Config(format!("class {j} out of range (have {})", self.classes)));
            }
            if seen[j] {
                return Err(Error::Config(format!("class {j} listed twice at one node")));
            }
            seen[j] = true;
        }
        Ok(())
    }

    pub fn visits(&self, j: usize) -> bool {
        self.high.contains(&j) || self.low.contains(&j)
    }

    pub fn visiting(&self) -> impl Iterator<Item = usize> + '_ {
        self.high.iter().chain(&self.low).copied()
    }
}

/// Arrival paths per class and service-allocation paths for the visiting classes.
#[derive(Clone, Debug)]
pub struct NodePrimitives {
    pub a: Vec<MonotonePath>,
    pub s: Vec<Option<InvertiblePath>>,
}

impl NodePrimitives {
    pub fn new(a: Vec<MonotonePath>, s: Vec<Option<InvertiblePath>>) -> Result<Self> {
        if a.is_empty() || a.len() != s.len() {
            return Err(Error::Input(format!(
                "need one arrival and one service slot per class (got {} and {})",
                a.len(),
                s.len()
            )));
        }
        let (t0, t1) = (a[0].start(), a[0].end());
        if a.iter().any(|p| p.start() != t0 || p.end() != t1) {
            return Err(Error::domain("arrival paths must share one time domain"));
        }
        Ok(NodePrimitives { a, s })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.a[0].start(), self.a[0].end())
    }

    fn service(&self, j: usize) -> Result<&InvertiblePath> {
        self.s
            .get(j)
            .and_then(|s| s.as_ref())
            .ok_or_else(|| Error::Input(format!("missing service path for visiting class {j}")))
    }

    /// `s_j⁻¹ ∘ a_j`: cumulative busy time needed by class `j` arrivals.
    pub fn offered(&self, j: usize) -> Result<PiecewisePath> {
        let inv = rc_inverse(self.service(j)?)?;
        compose(&inv, &self.a[j])
    }

    /// `Σ_{j∈set} s_j⁻¹ ∘ a_j`, or zero for an empty set.
    pub fn offered_sum(&self, set: &[usize]) -> Result<PiecewisePath> {
        let (t0, t1) = self.domain();
        let mut acc = PiecewisePath::zero(t0, t1);
        for &j in set {
            acc = acc.add(&self.offered(j)?)?;
        }
        Ok(acc)
    }

    /// `(ξa, ξs)`: scale both arrivals and service allocations by ξ.
    pub fn scaled(&self, xi: f64) -> Result<Self> {
        let a = self.a.iter().map(|p| MonotonePath::new(p.scale(xi))).collect::<Result<_>>()?;
        let s = self
            .s
            .iter()
            .map(|s| s.as_ref().map(|s| InvertiblePath::new(s.scale(xi))).transpose())
            .collect::<Result<_>>()?;
        Self::new(a, s)
    }
}

/// Declared long-run rates used for the stability check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeclaredRates {
    pub arrival: Vec<f64>,
    pub service: Vec<f64>,
}

/// Workload-level quantities of one node.
#[derive(Clone, Debug)]
pub struct Workloads {
    /// `H = Σ_ℋ s_j⁻¹∘a_j`
    pub high_offered: PiecewisePath,
    /// `L = Σ_ℒ s_j⁻¹∘a_j`
    pub low_offered: PiecewisePath,
    pub u: MonotonePath,
    pub v: PiecewisePath,
    pub y: MonotonePath,
    pub w: PiecewisePath,
}

#[derive(Clone, Debug)]
pub struct NodeOutput {
    pub u: MonotonePath,
    pub v: PiecewisePath,
    pub y: MonotonePath,
    pub w: PiecewisePath,
    pub d: Vec<MonotonePath>,
    pub q: Vec<PiecewisePath>,
    pub z: Vec<PiecewisePath>,
    /// Per class, the last observation time whose sojourn ends inside the horizon;
    /// `z` is capped at the horizon after it.
    pub z_valid_until: Vec<f64>,
    pub high_offered: PiecewisePath,
    pub low_offered: PiecewisePath,
    /// Set in warm-up mode when a supremum may still be attained at the window start.
    pub truncation_sensitive: bool,
}

pub fn workloads(np: &NodePrimitives, spec: &NodeSpec) -> Result<Workloads> {
    spec.validate()?;
    if np.a.len() != spec.classes {
        return Err(Error::Input(format!("expected {} classes, got {}", spec.classes, np.a.len())));
    }
    let (t0, t1) = np.domain();
    let id = PiecewisePath::identity(t0, t1);
    let h = np.offered_sum(&spec.high)?;
    let l = np.offered_sum(&spec.low)?;
    let u = running_sup(&id.sub(&h)?);
    let v = h.sub(&id)?.add(&u)?;
    let y = running_sup(&u.sub(&l)?);
    let w = l.sub(&u)?.add(&y)?;
    Ok(Workloads { high_offered: h, low_offered: l, u, v, y, w })
}

/// Idle time left over after serving high-priority work.
pub fn idle_high(np: &NodePrimitives, spec: &NodeSpec) -> Result<MonotonePath> {
    Ok(workloads(np, spec)?.u)
}

/// High-priority workload (time units).
pub fn workload_high(np: &NodePrimitives, spec: &NodeSpec) -> Result<PiecewisePath> {
    Ok(workloads(np, spec)?.v)
}

/// Cumulative idle time of the node.
pub fn idle_total(np: &NodePrimitives, spec: &NodeSpec) -> Result<MonotonePath> {
    Ok(workloads(np, spec)?.y)
}

/// Low-priority workload (time units).
pub fn workload_low(np: &NodePrimitives, spec: &NodeSpec) -> Result<PiecewisePath> {
    Ok(workloads(np, spec)?.w)
}

pub fn departures(np: &NodePrimitives, spec: &NodeSpec) -> Result<Vec<MonotonePath>> {
    let wl = workloads(np, spec)?;
    departures_from(np, spec, &wl)
}

pub fn queue_lengths(np: &NodePrimitives, spec: &NodeSpec) -> Result<Vec<PiecewisePath>> {
    let d = departures(np, spec)?;
    queue_from(np, &d)
}

pub fn sojourn(np: &NodePrimitives, spec: &NodeSpec) -> Result<Vec<PiecewisePath>> {
    let wl = workloads(np, spec)?;
    let d = departures_from(np, spec, &wl)?;
    Ok(sojourn_from(np, spec, &d)?.0)
}

/// All node outputs in one pass.
pub fn solve(np: &NodePrimitives, spec: &NodeSpec) -> Result<NodeOutput> {
    let wl = workloads(np, spec)?;
    let d = departures_from(np, spec, &wl)?;
    let q = queue_from(np, &d)?;
    let (z, z_valid_until) = sojourn_from(np, spec, &d)?;
    let (t0, _) = np.domain();
    let truncation_sensitive = t0 < 0.0 && {
        let tol = 1e-12;
        !(wl.u.value(0.0) > wl.u.start_value() + tol && wl.y.value(0.0) > wl.y.start_value() + tol)
    };
    Ok(NodeOutput {
        u: wl.u,
        v: wl.v,
        y: wl.y,
        w: wl.w,
        d,
        q,
        z,
        z_valid_until,
        high_offered: wl.high_offered,
        low_offered: wl.low_offered,
        truncation_sensitive,
    })
}

/// True iff the declared load of the visiting classes is below one.
pub fn check_regular(spec: &NodeSpec, rates: &DeclaredRates) -> Result<bool> {
    Ok(declared_load(spec, rates)? < 1.0)
}

pub fn declared_load(spec: &NodeSpec, rates: &DeclaredRates) -> Result<f64> {
    let mut load = 0.0;
    for j in spec.visiting() {
        let a = *rates
            .arrival
            .get(j)
            .ok_or_else(|| Error::Config(format!("missing declared arrival rate for class {j}")))?;
        let s = *rates
            .service
            .get(j)
            .ok_or_else(|| Error::Config(format!("missing declared service rate for class {j}")))?;
        if !(s > 0.0) || !(a >= 0.0) {
            return Err(Error::Config(format!("declared rates for class {j} must be a ≥ 0, s > 0")));
        }
        load += a / s;
    }
    Ok(load)
}

pub(crate) fn departures_from(np: &NodePrimitives, spec: &NodeSpec, wl: &Workloads) -> Result<Vec<MonotonePath>> {
    let (t0, t1) = np.domain();
    let id = PiecewisePath::identity(t0, t1);
    // Work of the own group that has been completed: H − V = id − U and L − W = U − Y.
    let theta_high = id.sub(&wl.u)?;
    let theta_low = wl.u.sub(&wl.y)?;
    let mut d = Vec::with_capacity(spec.classes);
    for j in 0..spec.classes {
        let (offered, theta) = if spec.high.contains(&j) {
            (&wl.high_offered, &theta_high)
        } else if spec.low.contains(&j) {
            (&wl.low_offered, &theta_low)
        } else {
            d.push(np.a[j].clone());
            continue;
        };
        let reach = pushforward_sup(offered, &np.a[j], theta.max_value().max(offered.end_value()) + 1.0);
        // Slack on stalls can lead the following ramp by a rounding error; the
        // running supremum restores monotonicity without moving any departure.
        let raw = compose_flat_slack(&reach, theta, DEPARTURE_SLACK)?;
        let dj = running_sup(&raw).min(&np.a[j])?;
        d.push(MonotonePath::trusted(dj));
    }
    Ok(d)
}

fn queue_from(np: &NodePrimitives, d: &[MonotonePath]) -> Result<Vec<PiecewisePath>> {
    np.a.iter().zip(d).map(|(a, d)| a.sub(d)).collect()
}

/// `x ↦ sup{a(τ) : h(τ) ≤ x}` for nondecreasing `h` and `a` on one domain,
/// held constant beyond `h(end)` up to `x_max`.
pub fn pushforward_sup(h: &PiecewisePath, a: &PiecewisePath, x_max: f64) -> PiecewisePath {
    let grid = merged_grid(h, a);
    let (hk, ak) = (h.knots(), a.knots());
    let mut out = Vec::with_capacity(grid.len() + 2);
    for (g, &(t, i, j)) in grid.iter().enumerate() {
        let hv = hk[i].at(t);
        if g > 0 {
            let (_, pi, pj) = grid[g - 1];
            let hl = hk[pi].at(t);
            if hv > hl {
                out.push(Knot::new(hl, ak[pj].at(t), 0.0));
            }
        }
        let t_next = grid.get(g + 1).map_or(h.end(), |x| x.0);
        if hk[i].slope > 0.0 {
            out.push(Knot::new(hv, ak[j].at(t), ak[j].slope / hk[i].slope));
        } else {
            out.push(Knot::new(hv, ak[j].at(t_next), 0.0));
        }
    }
    let xe = h.end_value();
    out.push(Knot::new(xe, a.end_value(), 0.0));
    for i in 1..out.len() {
        if out[i].t < out[i - 1].t {
            out[i].t = out[i - 1].t;
        }
    }
    PiecewisePath::from_sorted(h.start_value(), x_max.max(xe), out)
}

/// `inf{τ : d(τ) ≥ x}` for nondecreasing `d`, or `None` if never reached.
pub(crate) fn first_passage(d: &PiecewisePath, x: f64) -> Option<f64> {
    let k = d.knots();
    let idx = k.partition_point(|kn| kn.value < x);
    if idx == 0 {
        return Some(k[0].t);
    }
    let prev = &k[idx - 1];
    let seg_end = d.seg_end(idx - 1);
    if prev.slope > 0.0 {
        let tau = prev.t + (x - prev.value) / prev.slope;
        if tau <= seg_end {
            return Some(tau.max(prev.t));
        }
    }
    (idx < k.len()).then(|| k[idx].t)
}

/// First time `d` reaches `x`. A stall of `d` within rounding distance below `x`
/// counts as reaching it; a level reached exactly shortly after is preferred.
fn passage_time(d: &PiecewisePath, x: f64) -> Option<f64> {
    let eps = 1e-12 * x.abs().max(1.0);
    let slack = first_passage(d, x - eps)?;
    if let Some(exact) = first_passage(d, x) {
        if exact - slack <= 1e-9 {
            return Some(exact);
        }
    }
    // the stall begins where the segment carrying `d` past `x − eps` levels off
    let i = d.index_at(slack);
    let k = &d.knots()[i];
    if k.slope > 0.0 {
        return Some((slack + (x - k.at(slack)) / k.slope).min(d.seg_end(i)));
    }
    Some(slack)
}

/// Sojourn (departure time of a virtual time-t arrival) per class, capped at the
/// horizon, together with the time up to which the cap is not binding.
fn sojourn_from(np: &NodePrimitives, spec: &NodeSpec, d: &[MonotonePath]) -> Result<(Vec<PiecewisePath>, Vec<f64>)> {
    let (t0, t1) = np.domain();
    let id = PiecewisePath::identity(t0, t1);
    let mut z = vec![id.clone(); spec.classes];
    let mut valid = vec![t1; spec.classes];
    for group in [&spec.high, &spec.low] {
        if group.is_empty() {
            continue;
        }
        let mut zg = id.clone();
        let mut vg = t1;
        for &l in group.iter() {
            zg = zg.max(&passage(&d[l], &np.a[l], t1)?)?;
            let level = d[l].end_value();
            let eps = 1e-12 * level.abs().max(1.0);
            if let Some(t) = first_passage(&np.a[l], level + 2.0 * eps) {
                vg = vg.min(t);
            }
        }
        for &j in group.iter() {
            z[j] = zg.clone();
            valid[j] = vg;
        }
    }
    Ok((z, valid))
}

/// `t ↦ inf{τ : d(τ) ≥ a(t)}`, capped at `cap`.
fn passage(d: &PiecewisePath, a: &PiecewisePath, cap: f64) -> Result<PiecewisePath> {
    let (t0, t1) = (a.start(), a.end());
    let fp = |x: f64| passage_time(d, x).unwrap_or(cap).min(cap);
    let inv = if d.end_value() > d.start_value() {
        Some(monotone_inverse(d)?.extend_constant(a.end_value().max(d.end_value()) + 1.0))
    } else {
        None
    };
    let mut out = Vec::with_capacity(a.len());
    for (i, k) in a.knots().iter().enumerate() {
        let seg_end = a.seg_end(i);
        if k.slope <= 0.0 || seg_end <= k.t {
            out.push(Knot::new(k.t, fp(k.value), 0.0));
            continue;
        }
        // Ramp arrivals: follow the generalized inverse of d.
        let ramp = PiecewisePath::linear(k.t, seg_end, k.value, k.slope);
        match &inv {
            Some(inv) if ramp.min_value() >= inv.start() => {
                let piece = compose(inv, &ramp)?;
                for pk in piece.knots() {
                    out.push(Knot::new(pk.t, pk.value.min(cap), if pk.value >= cap { 0.0 } else { pk.slope }));
                }
            }
            _ => out.push(Knot::new(k.t, fp(k.value), 0.0)),
        }
    }
    let mut p = PiecewisePath::from_sorted(t0, t1, out);
    if p.max_value() > cap {
        p = p.min(&PiecewisePath::constant(t0, t1, cap))?;
    }
    Ok(p)
}

#[cfg(test)]
mod tests;
