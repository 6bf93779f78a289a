//! Residuals of the pathwise identities, used by the `check` command and tests.

use serde::Serialize;

use crate::error::Result;
use crate::node::{self, NodeOutput, NodePrimitives, NodeSpec};
use crate::pathcalc::{compose, rc_inverse, running_sup, stieltjes, sup_distance, InvertiblePath, MonotonePath, PiecewisePath};

#[derive(Clone, Debug, Default, Serialize)]
pub struct NodeResiduals {
    /// `|∫V dU|, |∫W dY|, |∫V dY|`
    pub complementarity: [f64; 3],
    pub min_v: f64,
    pub min_w: f64,
    pub min_q: f64,
    /// `Y` against `sup(id − Σ s⁻¹∘a)`
    pub hidden_idle: f64,
    /// `W + V` against `Σ s⁻¹∘a − id + Y`
    pub hidden_workload: f64,
    /// `s∘s⁻¹` against the identity on its range
    pub inverse: f64,
    /// `max(D − a)`, zero when departures never exceed arrivals
    pub departures_excess: f64,
    /// `max(id − Z)`
    pub sojourn_deficit: f64,
}

impl NodeResiduals {
    pub fn merge(&mut self, o: &NodeResiduals) {
        for i in 0..3 {
            self.complementarity[i] = self.complementarity[i].max(o.complementarity[i]);
        }
        self.min_v = self.min_v.min(o.min_v);
        self.min_w = self.min_w.min(o.min_w);
        self.min_q = self.min_q.min(o.min_q);
        self.hidden_idle = self.hidden_idle.max(o.hidden_idle);
        self.hidden_workload = self.hidden_workload.max(o.hidden_workload);
        self.inverse = self.inverse.max(o.inverse);
        self.departures_excess = self.departures_excess.max(o.departures_excess);
        self.sojourn_deficit = self.sojourn_deficit.max(o.sojourn_deficit);
    }
}

pub fn node_residuals(np: &NodePrimitives, spec: &NodeSpec, out: &NodeOutput) -> Result<NodeResiduals> {
    let (t0, t1) = np.domain();
    let id = PiecewisePath::identity(t0, t1);
    let comp = [
        stieltjes(&out.v, &out.u)?.abs(),
        stieltjes(&out.w, &out.y)?.abs(),
        stieltjes(&out.v, &out.y)?.abs(),
    ];
    let total = out.high_offered.add(&out.low_offered)?;
    let y_hidden = running_sup(&id.sub(&total)?);
    let wv = out.w.add(&out.v)?;
    let wv_hidden = total.sub(&id)?.add(&out.y)?;
    let mut inverse: f64 = 0.0;
    for s in np.s.iter().flatten() {
        inverse = inverse.max(inverse_residual(s)?);
    }
    let mut excess = f64::NEG_INFINITY;
    let mut deficit = f64::NEG_INFINITY;
    let mut min_q = f64::INFINITY;
    for j in 0..spec.classes {
        excess = excess.max(out.d[j].sub(&np.a[j])?.max_value());
        deficit = deficit.max(id.sub(&out.z[j])?.max_value());
        min_q = min_q.min(out.q[j].min_value());
    }
    Ok(NodeResiduals {
        complementarity: comp,
        min_v: out.v.min_value(),
        min_w: out.w.min_value(),
        min_q,
        hidden_idle: sup_distance(&out.y, &y_hidden)?,
        hidden_workload: sup_distance(&wv, &wv_hidden)?,
        inverse,
        departures_excess: excess,
        sojourn_deficit: deficit,
    })
}

/// `sup |c∘c⁻¹ − id|` over the value range of `c`.
pub fn inverse_residual(c: &InvertiblePath) -> Result<f64> {
    let inv = rc_inverse(c)?;
    let cc = compose(c, &inv)?;
    sup_distance(&cc, &PiecewisePath::identity(inv.start(), inv.end()))
}

/// Largest deviation from scale invariance of `W, V` and homogeneity of `D, Q`.
pub fn scale_residual(np: &NodePrimitives, spec: &NodeSpec, base: &NodeOutput, xi: f64) -> Result<f64> {
    let scaled = node::solve(&np.scaled(xi)?, spec)?;
    let mut r = sup_distance(&scaled.w, &base.w)?.max(sup_distance(&scaled.v, &base.v)?);
    for j in 0..spec.classes {
        r = r.max(sup_distance(&scaled.d[j], &base.d[j].scale(xi))?);
        r = r.max(sup_distance(&scaled.q[j], &base.q[j].scale(xi))?);
    }
    Ok(r)
}

/// The shifted primitives `(Ξ_t a, Ξ_{s⁻¹∘a(t)} s)`.
pub fn shifted_primitives(np: &NodePrimitives, spec: &NodeSpec, t: f64) -> Result<NodePrimitives> {
    let mut a_shift = Vec::with_capacity(spec.classes);
    let mut s_shift = Vec::with_capacity(spec.classes);
    for j in 0..spec.classes {
        let aj = &np.a[j];
        a_shift.push(MonotonePath::new(aj.shift_xi(t)?)?);
        s_shift.push(match &np.s[j] {
            Some(s) if spec.visits(j) => {
                let c = rc_inverse(s)?.eval(aj.eval(t)?)?;
                Some(InvertiblePath::new(s.shift_xi(c)?)?)
            }
            other => other.clone(),
        });
    }
    NodePrimitives::new(a_shift, s_shift)
}

/// Residuals of the seven time-shift identities at observation time `t`:
/// `[Ξ s⁻¹, Ξ(s⁻¹∘a), V, W, Q, Z − id, D]`.
pub fn shift_residuals(np: &NodePrimitives, spec: &NodeSpec, base: &NodeOutput, t: f64) -> Result<[f64; 7]> {
    let mut r = [0.0f64; 7];
    let prim = shifted_primitives(np, spec, t)?;
    for j in spec.visiting() {
        let (Some(s), Some(s_sh)) = (&np.s[j], &prim.s[j]) else { continue };
        let aj = &np.a[j];
        let inv = rc_inverse(s)?;
        let inv_shifted = rc_inverse(s_sh)?;
        r[0] = r[0].max(sup_distance(&inv.shift_xi(aj.eval(t)?)?, &inv_shifted)?);
        let lhs = compose(&inv, aj)?.shift_xi(t)?;
        let rhs = compose(&inv_shifted, &prim.a[j])?;
        r[1] = r[1].max(sup_distance(&lhs, &rhs)?);
    }
    let sh = node::solve(&prim, spec)?;
    r[2] = sup_distance(&base.v.shift_theta(t)?, &sh.v)?;
    r[3] = sup_distance(&base.w.shift_theta(t)?, &sh.w)?;
    let (t0, t1) = np.domain();
    let id = PiecewisePath::identity(t0, t1);
    let id_sh = PiecewisePath::identity(t0 - t, t1 - t);
    for j in 0..spec.classes {
        r[4] = r[4].max(sup_distance(&base.q[j].shift_theta(t)?, &sh.q[j])?);
        let lhs = base.z[j].sub(&id)?.shift_theta(t)?;
        let rhs = sh.z[j].sub(&id_sh)?;
        r[5] = r[5].max(sup_distance(&lhs, &rhs)?);
        let lhs = base.d[j].shift_xi(t)?;
        let rhs = sh.d[j].add_constant(sh.q[j].eval(0.0)?);
        r[6] = r[6].max(sup_distance(&lhs, &rhs)?);
    }
    Ok(r)
}

/// If the node is empty at some interior time `t`, recompute from primitives
/// restricted to `[t, end]` and compare workloads, queues and departure increments.
pub fn restart_residual(np: &NodePrimitives, spec: &NodeSpec, base: &NodeOutput, t: f64) -> Result<Option<f64>> {
    let (_, t1) = np.domain();
    if base.v.eval(t)?.abs() > 1e-12 || base.w.eval(t)?.abs() > 1e-12 {
        return Ok(None);
    }
    let a = np
        .a
        .iter()
        .map(|p| MonotonePath::new(p.restrict(t, t1)?))
        .collect::<Result<Vec<_>>>()?;
    let prim = NodePrimitives::new(a, np.s.clone())?;
    let sub = node::solve(&prim, spec)?;
    let mut r = sup_distance(&sub.w, &base.w)?.max(sup_distance(&sub.v, &base.v)?);
    for j in 0..spec.classes {
        r = r.max(sup_distance(&sub.q[j], &base.q[j])?);
        let inc = base.d[j].restrict(t, t1)?.add_constant(-base.d[j].eval(t)?);
        r = r.max(sup_distance(&sub.d[j].add_constant(-sub.d[j].start_value()), &inc)?);
    }
    Ok(Some(r))
}
