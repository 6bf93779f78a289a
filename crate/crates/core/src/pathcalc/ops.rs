use super::{InvertiblePath, Knot, MonotonePath, PiecewisePath};
use crate::error::{Error, Result};

/// `t ↦ sup{p(τ) : start ≤ τ ≤ t}`, left limits included.
pub fn running_sup(p: &PiecewisePath) -> MonotonePath {
    let k = &p.knots;
    let mut out = Vec::with_capacity(k.len());
    let mut m = f64::NEG_INFINITY;
    for i in 0..k.len() {
        let (t, v, s) = (k[i].t, k[i].value, k[i].slope);
        let t_next = p.seg_end(i);
        if i > 0 {
            m = m.max(p.left_at_knot(i));
        }
        if v >= m {
            m = v;
            if s > 0.0 {
                out.push(Knot::new(t, v, s));
                m = v + s * (t_next - t);
            } else {
                out.push(Knot::new(t, v, 0.0));
            }
        } else {
            out.push(Knot::new(t, m, 0.0));
            if s > 0.0 {
                let tc = t + (m - v) / s;
                if tc < t_next {
                    out.push(Knot::new(tc, m, s));
                    // continue from the emitted knot so steep slopes cannot leave a downward step
                    m += s * (t_next - tc);
                }
            }
        }
    }
    MonotonePath::trusted(PiecewisePath::from_sorted(p.start, p.end, out))
}

/// `t ↦ inf{p(τ) : start ≤ τ ≤ t}`.
pub fn running_inf(p: &PiecewisePath) -> PiecewisePath {
    running_sup(&p.neg()).neg()
}

/// `x ↦ sup{τ : p(τ) ≤ x}` for nondecreasing `p`, on `[p(start), p(end)]`.
/// Flats of `p` become jumps landing at the flat's right end; jumps become flats.
pub fn monotone_inverse(p: &PiecewisePath) -> Result<MonotonePath> {
    if !p.is_nondecreasing() {
        return Err(Error::Input("inverse requires a nondecreasing path".into()));
    }
    let (x0, x1) = (p.start_value(), p.end_value());
    if !(x1 > x0) {
        return Err(Error::DegenerateInput("path has zero total increase".into()));
    }
    let k = &p.knots;
    let mut out = Vec::with_capacity(k.len() + 1);
    for i in 0..k.len() {
        let (t, v, s) = (k[i].t, k[i].value, k[i].slope);
        if i > 0 {
            let l = p.left_at_knot(i);
            if v > l {
                out.push(Knot::new(l, t, 0.0));
            }
        }
        if s > 0.0 {
            out.push(Knot::new(v, t, 1.0 / s));
        } else {
            out.push(Knot::new(v, p.seg_end(i), 0.0));
        }
    }
    let mut out = dedup_sorted(out);
    if let Some(last) = out.last_mut() {
        if last.t >= x1 {
            last.t = x1;
        }
    }
    out.retain(|kn| kn.t <= x1);
    out[0].t = x0;
    Ok(MonotonePath::trusted(PiecewisePath::from_sorted(x0, x1, out)))
}

/// Right-continuous inverse of a continuous nondecreasing path.
pub fn rc_inverse(c: &InvertiblePath) -> Result<MonotonePath> {
    monotone_inverse(c)
}

/// Keeps times nondecreasing after rounding by clamping each knot to its predecessor.
fn dedup_sorted(mut v: Vec<Knot>) -> Vec<Knot> {
    for i in 1..v.len() {
        if v[i].t < v[i - 1].t {
            v[i].t = v[i - 1].t;
        }
    }
    v
}

/// Exact composition `c ∘ d`.
///
/// Supported when `d` is nondecreasing (any `c`), or when `c` is continuous
/// (any `d`). The range of `d` must lie in the domain of `c`.
pub fn compose(c: &PiecewisePath, d: &PiecewisePath) -> Result<PiecewisePath> {
    compose_impl(c, d, 0.0)
}

/// `c ∘ d` where, on stretches where `d` is constant at level `v`, `c` is read at
/// `v + rel·max(1, |v|)`. Used where `d` should sit exactly on a jump level of `c`
/// but may fall short of it by rounding.
pub fn compose_flat_slack(c: &PiecewisePath, d: &PiecewisePath, rel: f64) -> Result<PiecewisePath> {
    compose_impl(c, d, rel)
}

fn compose_impl(c: &PiecewisePath, d: &PiecewisePath, rel: f64) -> Result<PiecewisePath> {
    let d_mono = d.is_nondecreasing();
    if !d_mono && !c.is_continuous() {
        return Err(Error::domain(
            "composition needs a continuous outer path or a nondecreasing inner path",
        ));
    }
    let tol = 1e-9 * c.start.abs().max(c.end.abs()).max(1.0);
    let (lo, hi) = (d.min_value(), d.max_value());
    if lo < c.start - tol || hi > c.end + tol {
        return Err(Error::domain(format!(
            "inner range [{lo}, {hi}] not inside outer domain [{}, {}]",
            c.start, c.end
        )));
    }
    let clamp = |x: f64| x.clamp(c.start, c.end);
    let ck = &c.knots;
    let mut out: Vec<Knot> = Vec::with_capacity(d.knots.len() * 2);
    for (i, dk) in d.knots.iter().enumerate() {
        let t0 = dk.t;
        let t1 = d.seg_end(i);
        let v = clamp(dk.value);
        let m = if d_mono { dk.slope.max(0.0) } else { dk.slope };
        if m == 0.0 || t1 == t0 {
            let x = clamp(v + rel * v.abs().max(1.0));
            let j = c.index_at(x);
            // only a knot inside the slack window moves the reading
            out.push(Knot::new(t0, ck[j].at(v.max(ck[j].t)), 0.0));
        } else if m > 0.0 {
            let x_end = clamp(dk.value + m * (t1 - t0));
            let mut j = c.index_at(v);
            out.push(Knot::new(t0, ck[j].at(v), ck[j].slope * m));
            while j + 1 < ck.len() && ck[j + 1].t < x_end {
                j += 1;
                let tb = (t0 + (ck[j].t - dk.value) / m).clamp(t0, t1);
                out.push(Knot::new(tb, ck[j].value, ck[j].slope * m));
            }
        } else {
            let x_end = clamp(dk.value + m * (t1 - t0));
            // segment whose half-open interval (x_j, x_{j+1}] holds v
            let mut j = ck.partition_point(|k| k.t < v).saturating_sub(1);
            out.push(Knot::new(t0, ck[j].at(v), ck[j].slope * m));
            while j > 0 && ck[j].t > x_end {
                let tb = (t0 + (ck[j].t - dk.value) / m).clamp(t0, t1);
                j -= 1;
                out.push(Knot::new(tb, ck[j].at(ck[j + 1].t), ck[j].slope * m));
            }
        }
    }
    let out = dedup_sorted(out);
    Ok(PiecewisePath::from_sorted(d.start, d.end, out))
}
