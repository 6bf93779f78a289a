use super::{merged_grid, MonotonePath, PiecewisePath, TIME_TOL};
use crate::error::{Error, Result};

/// `∫ w dy` over the common domain. Atoms of `y` are weighted by the right
/// value of `w`; continuous parts are integrated exactly.
pub fn stieltjes(w: &PiecewisePath, y: &MonotonePath) -> Result<f64> {
    stieltjes_signed(w, y)
}

/// `∫ w dy` for an arbitrary piecewise-linear integrator (a signed measure).
pub fn stieltjes_signed(w: &PiecewisePath, y: &PiecewisePath) -> Result<f64> {
    w.same_domain(y)?;
    let grid = merged_grid(w, y);
    let mut total = 0.0;
    for (g, &(t, i, j)) in grid.iter().enumerate() {
        let (wk, yk) = (&w.knots[i], &y.knots[j]);
        if g > 0 && yk.t == t {
            let dy = yk.value - y.left_at_knot(j);
            total += wk.at(t) * dy;
        }
        let t1 = grid.get(g + 1).map_or(w.end, |x| x.0);
        let len = t1 - t;
        if len > 0.0 && yk.slope != 0.0 {
            total += yk.slope * (wk.at(t) * len + 0.5 * wk.slope * len * len);
        }
    }
    Ok(total)
}

/// `sup |p − q|` over the overlap of the two domains, right values and left
/// limits included. Intervals shorter than the coincidence tolerance are skipped.
pub fn sup_distance(p: &PiecewisePath, q: &PiecewisePath) -> Result<f64> {
    let lo = p.start.max(q.start);
    let hi = p.end.min(q.end);
    if lo > hi {
        return Err(Error::domain("paths have disjoint domains"));
    }
    let grid = merged_grid(p, q);
    let mut d: f64 = 0.0;
    for (g, &(t, i, j)) in grid.iter().enumerate() {
        let t1 = grid.get(g + 1).map_or(hi, |x| x.0);
        let (pk, qk) = (&p.knots[i], &q.knots[j]);
        if t1 - t > TIME_TOL {
            d = d.max((pk.at(t) - qk.at(t)).abs());
            d = d.max((pk.at(t1) - qk.at(t1)).abs());
        } else if g + 1 == grid.len() {
            d = d.max((pk.at(t) - qk.at(t)).abs());
        }
    }
    Ok(d)
}

/// `sup |p(t)| / (1 + |t|)` over the domain.
pub fn wnorm(p: &PiecewisePath) -> f64 {
    let f = |t: f64, v: f64| v.abs() / (1.0 + t.abs());
    let mut m: f64 = 0.0;
    for (i, k) in p.knots.iter().enumerate() {
        let t1 = p.seg_end(i);
        m = m.max(f(k.t, k.value)).max(f(t1, k.at(t1)));
        if k.t < 0.0 && t1 > 0.0 {
            m = m.max(f(0.0, k.at(0.0)));
        }
    }
    m
}
