//! Gaussian-type rate functions, the limiting covariance `V = R U Rᵀ`, and a
//! discretized variational solver for reflected rate minimization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pathcalc::PiecewisePath;
use crate::reflection::{reflection_g, skorokhod_phi, CriticalData};

/// Relative eigenvalue cutoff below which a direction of `V` counts as degenerate.
pub const EIGEN_CUTOFF: f64 = 1e-12;
/// Negative eigenvalues down to `−PSD_TOL · trace` are accepted as rounding.
pub const PSD_TOL: f64 = 1e-10;

fn value_at_zero(x: &PiecewisePath) -> f64 {
    if x.start() <= 0.0 && 0.0 <= x.end() {
        x.eval(0.0).expect("in domain")
    } else {
        x.start_value()
    }
}

fn anchored_continuous(x: &PiecewisePath) -> bool {
    x.is_continuous() && value_at_zero(x).abs() <= 1e-12 * x.max_abs().max(1.0)
}

/// `∫ ẋ²/2` for absolutely continuous `x` with `x(0) = 0`, otherwise `∞`.
pub fn i_brown(x: &PiecewisePath) -> f64 {
    if !anchored_continuous(x) {
        return f64::INFINITY;
    }
    let k = x.knots();
    (0..k.len()).map(|i| k[i].slope * k[i].slope * (x.seg_end(i) - k[i].t) / 2.0).sum()
}

/// `x / 0 := 0` if `x = 0`, else `∞`.
fn ratio(x: f64, d: f64) -> f64 {
    if d == 0.0 {
        if x == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        x / d
    }
}

/// Limiting variances of inter-arrival and service times and the covariance
/// matrices they induce.
#[derive(Clone, Debug)]
pub struct CovarianceData {
    pub u2: Vec<f64>,
    pub v2: Vec<Vec<f64>>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

/// Rate function of centered renewal inputs: `Σ α³ I(ã)/u² + Σ σ³ I(s̃)/v²`.
pub fn i_renewal(a: &[PiecewisePath], s: &[Vec<Option<PiecewisePath>>], cd: &CriticalData, cov: &CovarianceData) -> Result<f64> {
    if a.len() != cd.spec.classes || s.len() != cd.n() {
        return Err(Error::Input("centered inputs do not match the network".into()));
    }
    let mut total = 0.0;
    for j in 0..a.len() {
        total += ratio(cd.alpha[j].powi(3) * i_brown(&a[j]), cov.u2[j]);
    }
    for (i, node) in cd.spec.nodes.iter().enumerate() {
        for j in node.visiting() {
            let sj = s[i].get(j).and_then(|p| p.as_ref()).ok_or_else(|| Error::Input(format!("missing service path for class {j}")).at_node(i + 1))?;
            total += ratio(cd.sigma[i][j].powi(3) * i_brown(sj), cov.v2[i][j]);
        }
    }
    Ok(total)
}

/// Eigendecomposition of a PSD matrix with tiny eigenvalues zeroed.
fn psd_eigen(v: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if v.nrows() != v.ncols() {
        return Err(Error::Config("covariance must be square".into()));
    }
    let asym = (v - v.transpose()).abs().max();
    if asym > 1e-12 * v.abs().max().max(1.0) {
        return Err(Error::Config("covariance is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(v.clone());
    let trace = v.trace().abs();
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, &e| m.max(e));
    let mut vals = eig.eigenvalues.clone();
    for e in vals.iter_mut() {
        if *e < -PSD_TOL * trace.max(f64::MIN_POSITIVE) {
            return Err(Error::Config(format!("covariance has negative eigenvalue {e}")));
        }
        if *e <= EIGEN_CUTOFF * top {
            *e = 0.0;
        }
    }
    Ok((vals, eig.eigenvectors))
}

/// Checks that `v` is symmetric positive semidefinite.
pub fn check_psd(v: &DMatrix<f64>) -> Result<()> {
    psd_eigen(v).map(|_| ())
}

/// `∫ ẋᵀ V⁻¹ ẋ / 2` with the degenerate directions of `V` read as
/// `sup_y (yᵀẋ − yᵀVy/2)`: infinite when `ẋ` leaves the range of `V`.
pub fn i_v_brown(x: &[PiecewisePath], v: &DMatrix<f64>) -> Result<f64> {
    let (vals, vecs) = psd_eigen(v)?;
    if x.len() != v.nrows() {
        return Err(Error::Input(format!("{} paths for a {}×{} covariance", x.len(), v.nrows(), v.ncols())));
    }
    if x.iter().any(|p| !anchored_continuous(p)) {
        return Ok(f64::INFINITY);
    }
    let mut grid: Vec<f64> = Vec::new();
    for p in x {
        grid.extend(p.breakpoints());
    }
    grid.push(x[0].end());
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    grid.dedup();
    let mut total = 0.0;
    for win in grid.windows(2) {
        let (t0, t1) = (win[0], win[1]);
        if t1 <= t0 {
            continue;
        }
        let mid = 0.5 * (t0 + t1);
        let xdot = DVector::from_iterator(x.len(), x.iter().map(|p| p.knots()[p.index_at(mid)].slope));
        let scale = xdot.amax().max(1.0);
        let coords = vecs.transpose() * &xdot;
        let mut q = 0.0;
        for (c, &l) in coords.iter().zip(vals.iter()) {
            if l == 0.0 {
                if c.abs() > 1e-12 * scale {
                    return Ok(f64::INFINITY);
                }
            } else {
                q += c * c / l;
            }
        }
        total += q * (t1 - t0) / 2.0;
    }
    Ok(total)
}

/// `U` from the per-class variances, and `V = R U Rᵀ`.
pub fn build_covariance(cd: &CriticalData, u2: &[f64], v2: &[Vec<f64>]) -> Result<CovarianceData> {
    let n = cd.n();
    let m = cd.spec.classes;
    if u2.len() != m || v2.len() != n || v2.iter().any(|r| r.len() != m) {
        return Err(Error::Config(format!("variances must be {m} arrival entries and {n} service rows of {m}")));
    }
    if u2.iter().chain(v2.iter().flatten()).any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Config("variances must be finite and nonnegative".into()));
    }
    let mut u = DMatrix::zeros(n, n);
    for i in 0..n {
        for h in 0..n {
            let (ni, nh) = (&cd.spec.nodes[i], &cd.spec.nodes[h]);
            let mut acc = 0.0;
            for j in ni.visiting().filter(|&j| nh.visits(j)) {
                let a = cd.alpha[j];
                if a > 0.0 {
                    acc += u2[j] / (a.powi(3) * cd.sigma[i][j] * cd.sigma[h][j]);
                }
                if i == h {
                    acc += v2[i][j] * a / cd.sigma[i][j].powi(6);
                }
            }
            u[(i, h)] = acc;
        }
    }
    let v = &cd.r * &u * cd.r.transpose();
    check_psd(&u)?;
    check_psd(&v)?;
    Ok(CovarianceData { u2: u2.to_vec(), v2: v2.to_vec(), u, v })
}

/// Minimize `I_V(z)` over continuous piecewise-linear `z` on a uniform grid
/// subject to `Φ(z − ζ̃ id)ᵢ(T) ≥ b`.
#[derive(Clone, Debug)]
pub struct VariationalProblem {
    pub horizon: f64,
    pub cells: usize,
    pub node: usize,
    pub level: f64,
    pub zeta: Vec<f64>,
    pub v: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub rounds: usize,
    pub starts: usize,
    pub refine: bool,
    pub seed: u64,
}

impl VariationalProblem {
    /// Terminal-level problem with the default horizon `4·b·V̄/ζ̃_min`, where
    /// `V̄` is the largest diagonal entry of `V` and `ζ̃_min` the smallest
    /// positive drift (1 if there is none).
    pub fn new(node: usize, level: f64, zeta: Vec<f64>, v: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        let vbar = v.diagonal().iter().fold(0.0f64, |m, &x| m.max(x));
        // nonpositive drifts fall back to unit drift
        let zmin = zeta.iter().filter(|&&x| x > 0.0).fold(f64::INFINITY, |m, &x| m.min(x));
        let zmin = if zmin.is_finite() { zmin } else { 1.0 };
        let horizon = if level > 0.0 && vbar > 0.0 { 4.0 * level * vbar / zmin } else { 1.0 };
        VariationalProblem { horizon, cells: 32, node, level, zeta, v, r, rounds: 10, starts: 8, refine: true, seed: 0 }
    }

    pub fn for_network(cd: &CriticalData, cov: &CovarianceData, node: usize, level: f64) -> Self {
        Self::new(node, level, cd.zeta_tilde.clone(), cov.v.clone(), cd.r.clone())
    }

    fn validate(&self) -> Result<()> {
        let n = self.zeta.len();
        if !(self.horizon > 0.0) || self.cells < 2 || !(self.level >= 0.0) {
            return Err(Error::Config("need horizon > 0, at least 2 cells and level >= 0".into()));
        }
        if self.v.nrows() != n || self.r.nrows() != n || self.node >= n {
            return Err(Error::Config("drift, covariance, reflection matrix and node index disagree".into()));
        }
        Ok(())
    }
}

/// Outcome of [`variational_rate`].
#[derive(Clone, Debug)]
pub struct VariationalResult {
    pub rate: f64,
    /// Optimizing free path `z`, one per node.
    pub z: Vec<PiecewisePath>,
    /// Reflected path `Φ(z − ζ̃ id)`.
    pub w: Vec<PiecewisePath>,
    pub cells: usize,
    /// `Φ(z − ζ̃ id)ᵢ(T)` at the optimizer.
    pub terminal: f64,
    pub diagnostics: String,
}

struct Discretization<'a> {
    vp: &'a VariationalProblem,
    g: DMatrix<f64>,
    /// Columns span the range of `V`: `ż = L η`.
    l: DMatrix<f64>,
    m: usize,
    dt: f64,
}

struct Evaluation {
    terminal: f64,
    w: Vec<PiecewisePath>,
    z: Vec<PiecewisePath>,
    /// Push paths `pᵢ = −xᵢ + Σ_{h<i} G_{i,h} w_h`, so that `wᵢ = yᵢ − pᵢ`.
    pushes: Vec<PiecewisePath>,
}

/// Affine model `offset + grad·η` of the terminal workload.
struct Model {
    offset: f64,
    grad: DMatrix<f64>,
}

impl<'a> Discretization<'a> {
    fn new(vp: &'a VariationalProblem, m: usize) -> Result<Self> {
        let (vals, vecs) = psd_eigen(&vp.v)?;
        let keep: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] > 0.0).collect();
        let n = vp.zeta.len();
        let mut l = DMatrix::zeros(n, keep.len());
        for (c, &k) in keep.iter().enumerate() {
            l.set_column(c, &(vecs.column(k) * vals[k].sqrt()));
        }
        Ok(Discretization { vp, g: reflection_g(&vp.r)?, l, m, dt: vp.horizon / m as f64 })
    }

    fn dim(&self) -> usize {
        self.l.ncols()
    }

    fn cost(&self, eta: &DMatrix<f64>) -> f64 {
        0.5 * self.dt * eta.norm_squared()
    }

    fn paths(&self, eta: &DMatrix<f64>) -> Vec<PiecewisePath> {
        let slopes = &self.l * eta;
        (0..slopes.nrows())
            .map(|h| {
                let mut verts = Vec::with_capacity(self.m + 1);
                let mut v = 0.0;
                verts.push((0.0, 0.0));
                for c in 0..self.m {
                    v += slopes[(h, c)] * self.dt;
                    verts.push(((c + 1) as f64 * self.dt, v));
                }
                verts.last_mut().expect("nonempty").0 = self.vp.horizon;
                PiecewisePath::from_vertices(&verts).expect("increasing grid")
            })
            .collect()
    }

    /// `∂ẑ_h(s)/∂ż_{h,c}`: time spent in cell `c` before `s`.
    fn overlap(&self, s: f64) -> DVector<f64> {
        DVector::from_fn(self.m, |c, _| (s - c as f64 * self.dt).clamp(0.0, self.dt))
    }

    /// Gradient of `pᵢ(s)` with respect to the slopes of `z`.
    fn grad_p(&self, pushes: &[PiecewisePath], i: usize, s: f64) -> DMatrix<f64> {
        let n = self.g.nrows();
        let ov = self.overlap(s).transpose();
        let mut out = DMatrix::zeros(n, self.m);
        out.set_row(i, &(-&ov));
        for h in 0..i {
            if self.g[(i, h)] != 0.0 {
                out.set_row(h, &(&ov * -self.g[(i, h)]));
                out += self.grad_w(pushes, h, s) * self.g[(i, h)];
            }
        }
        out
    }

    /// Subgradient of `wᵢ(t) = max(0, sup_{s≤t} pᵢ(s)) − pᵢ(t)`.
    fn grad_w(&self, pushes: &[PiecewisePath], i: usize, t: f64) -> DMatrix<f64> {
        let mut out = -self.grad_p(pushes, i, t);
        let (s_star, peak) = argmax_until(&pushes[i], t);
        if peak > 0.0 {
            out += self.grad_p(pushes, i, s_star);
        }
        out
    }

    fn evaluate(&self, eta: &DMatrix<f64>) -> Result<Evaluation> {
        let z = self.paths(eta);
        let t1 = self.vp.horizon;
        let net: Vec<PiecewisePath> =
            z.iter().zip(&self.vp.zeta).map(|(p, &c)| p.sub(&PiecewisePath::linear(0.0, t1, 0.0, c))).collect::<Result<_>>()?;
        let sol = skorokhod_phi(&net, &self.vp.r)?;
        let pushes: Vec<PiecewisePath> = (0..net.len()).map(|i| sol.y[i].sub(&sol.w[i])).collect::<Result<_>>()?;
        let terminal = sol.w[self.vp.node].end_value();
        Ok(Evaluation { terminal, w: sol.w, z, pushes })
    }

    /// Affine models of `wᵢ(T)` at `eta`, one per choice of the time at which
    /// the outermost regulator is pinned (every grid time, or not at all).
    /// Each is exact where that choice is the active one and a lower bound
    /// elsewhere; inner regulators are linearized at `eta`.
    fn models(&self, ev: &Evaluation, eta: &DMatrix<f64>) -> Vec<Model> {
        let i = self.vp.node;
        let p = &ev.pushes[i];
        let t1 = self.vp.horizon;
        let base_grad = -self.grad_p(&ev.pushes, i, t1);
        let base = -p.end_value();
        let mut out = Vec::with_capacity(self.m + 2);
        let mut push_model = |value: f64, grad: DMatrix<f64>| {
            let grad = self.l.transpose() * grad;
            out.push(Model { offset: value - grad.dot(eta), grad });
        };
        push_model(base, base_grad.clone());
        for k in 0..=self.m {
            let s = (k as f64 * self.dt).min(t1);
            push_model(base + p.eval(s).expect("in domain"), &base_grad + self.grad_p(&ev.pushes, i, s));
        }
        out
    }

    /// Minimizer of `cost(η) + μ/2·max(0, κ − grad·η)²` over `η`, and its value.
    fn linearized_step(&self, model: &Model, kappa: f64, mu: f64) -> (DMatrix<f64>, f64) {
        let q = model.grad.norm_squared();
        if kappa <= 0.0 {
            return (DMatrix::zeros(model.grad.nrows(), model.grad.ncols()), 0.0);
        }
        if q == 0.0 {
            return (DMatrix::zeros(model.grad.nrows(), model.grad.ncols()), 0.5 * mu * kappa * kappa);
        }
        let tau = mu * kappa / (self.dt + mu * q);
        let eta = &model.grad * tau;
        let viol = (kappa - tau * q).max(0.0);
        let value = self.cost(&eta) + 0.5 * mu * viol * viol;
        (eta, value)
    }

    /// Augmented-Lagrangian descent from `eta`; each inner step solves the
    /// problem with the constraint replaced by the best of its affine models.
    fn solve_from(&self, mut eta: DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let b = self.vp.level;
        let mut lambda = 0.0;
        let mut mu = 10.0 * self.vp.horizon / (b * b);
        let lagrangian = |e: &Evaluation, eta: &DMatrix<f64>, lambda: f64, mu: f64| {
            let viol = (b - e.terminal + lambda / mu).max(0.0);
            self.cost(eta) + 0.5 * mu * viol * viol
        };
        let mut ev = self.evaluate(&eta)?;
        for _ in 0..self.vp.rounds {
            for _ in 0..60 {
                let current = lagrangian(&ev, &eta, lambda, mu);
                let mut steps: Vec<(f64, DMatrix<f64>)> = self
                    .models(&ev, &eta)
                    .iter()
                    .map(|md| {
                        let (e, v) = self.linearized_step(md, b + lambda / mu - md.offset, mu);
                        (v, e)
                    })
                    .collect();
                steps.sort_by(|x, y| x.0.total_cmp(&y.0));
                let mut moved = false;
                'candidates: for (_, target) in steps.iter().take(4) {
                    let mut step = 1.0;
                    while step > 1e-3 {
                        let trial = &eta + (target - &eta) * step;
                        let tev = self.evaluate(&trial)?;
                        if lagrangian(&tev, &trial, lambda, mu) < current - 1e-12 * current.abs() {
                            eta = trial;
                            ev = tev;
                            moved = true;
                            break 'candidates;
                        }
                        step *= 0.5;
                    }
                }
                if !moved {
                    break;
                }
            }
            lambda = (lambda + mu * (b - ev.terminal)).max(0.0);
            mu *= 4.0;
        }
        self.polish(eta)
    }

    /// Restores exact feasibility with a few exact projections onto the
    /// active affine model, then a scale-up if the constraint still fails.
    fn polish(&self, mut eta: DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let b = self.vp.level;
        let feasible = |ev: &Evaluation| ev.terminal >= b * (1.0 - 1e-12);
        let mut best: Option<(f64, DMatrix<f64>)> = None;
        for _ in 0..20 {
            let ev = self.evaluate(&eta)?;
            if feasible(&ev) && best.as_ref().map_or(true, |(c, _)| self.cost(&eta) < *c) {
                best = Some((self.cost(&eta), eta.clone()));
            }
            let active = self
                .models(&ev, &eta)
                .into_iter()
                .map(|md| {
                    let v = md.offset + md.grad.dot(&eta);
                    (v, md)
                })
                .max_by(|x, y| x.0.total_cmp(&y.0))
                .map(|(_, md)| md)
                .expect("at least one model");
            let q = active.grad.norm_squared();
            if q == 0.0 {
                break;
            }
            let next = &active.grad * ((b - active.offset) / q);
            if (&next - &eta).norm() <= 1e-13 * eta.norm().max(1e-300) {
                break;
            }
            eta = next;
        }
        if let Some(found) = best {
            return Ok(found);
        }
        let mut scale = 1.0;
        for _ in 0..60 {
            scale *= 1.25;
            let trial = &eta * scale;
            if feasible(&self.evaluate(&trial)?) {
                return Ok((self.cost(&trial), trial));
            }
        }
        Ok((f64::INFINITY, eta))
    }

    fn solve(&self, seed: u64) -> Result<(f64, DMatrix<f64>)> {
        let (r, m) = (self.dim(), self.m);
        if r == 0 {
            return Ok((f64::INFINITY, DMatrix::zeros(0, m)));
        }
        let starts: Vec<DMatrix<f64>> = (0..self.vp.starts.max(1))
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                let amp = self.vp.level / self.vp.horizon.sqrt();
                DMatrix::from_fn(r, m, |_, _| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    amp * x
                })
            })
            .collect();
        let results: Vec<Result<(f64, DMatrix<f64>)>> = starts.into_par_iter().map(|s| self.solve_from(s)).collect();
        let mut best = (f64::INFINITY, DMatrix::zeros(r, m));
        for res in results {
            let (c, e) = res?;
            if c < best.0 {
                best = (c, e);
            }
        }
        Ok(best)
    }
}

/// Last maximizer of `p` on `[start, t]` and the maximum; `p` is continuous.
fn argmax_until(p: &PiecewisePath, t: f64) -> (f64, f64) {
    let mut best = (t, p.eval(t).expect("in domain"));
    for k in p.knots().iter().take_while(|k| k.t <= t) {
        if k.value > best.1 {
            best = (k.t, k.value);
        }
    }
    best
}

/// Upper bound on `inf { I_V(z) : Φ(z − ζ̃ id)ᵢ(T) ≥ b }` over piecewise-linear `z`.
pub fn variational_rate(vp: &VariationalProblem) -> Result<VariationalResult> {
    vp.validate()?;
    let n = vp.zeta.len();
    if vp.level == 0.0 {
        let z = vec![PiecewisePath::zero(0.0, vp.horizon); n];
        return Ok(VariationalResult { rate: 0.0, w: z.clone(), z, cells: vp.cells, terminal: 0.0, diagnostics: "level 0 is always reached".into() });
    }
    let mut levels = vec![vp.cells];
    if vp.refine {
        levels.push(2 * vp.cells);
    }
    let mut best: Option<(f64, DMatrix<f64>, usize)> = None;
    for (k, &m) in levels.iter().enumerate() {
        let disc = Discretization::new(vp, m)?;
        let (c, eta) = disc.solve(vp.seed.wrapping_add(k as u64))?;
        if best.as_ref().map_or(true, |b| c < b.0) {
            best = Some((c, eta, m));
        }
    }
    let (rate, eta, m) = best.expect("at least one level");
    let disc = Discretization::new(vp, m)?;
    if !rate.is_finite() {
        let z = vec![PiecewisePath::zero(0.0, vp.horizon); n];
        return Ok(VariationalResult {
            rate,
            w: z.clone(),
            z,
            cells: m,
            terminal: 0.0,
            diagnostics: format!("level {} not reached at node {} within horizon {}", vp.level, vp.node + 1, vp.horizon),
        });
    }
    let ev = disc.evaluate(&eta)?;
    Ok(VariationalResult { rate, z: ev.z, w: ev.w, cells: m, terminal: ev.terminal, diagnostics: String::new() })
}

/// Brute-force search over single-ramp paths (slope `c` for a duration `τ`
/// ending at the horizon) for the one-dimensional problem with drift `ζ`,
/// variance `v` and level `b`.
pub fn oracle_rate_1d(zeta: f64, v: f64, b: f64) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    const N: usize = 3000;
    let log_grid = |lo: f64, hi: f64, i: usize| lo * (hi / lo).powf(i as f64 / (N - 1) as f64);
    let mut best = f64::INFINITY;
    for ci in 0..N {
        // excess slope over the drift
        let e = log_grid(1e-3 * zeta, 1e3 * zeta, ci);
        let c = zeta + e;
        for ti in 0..N {
            let tau = log_grid(1e-3 * b / zeta, 1e3 * b / zeta, ti);
            if e * tau >= b {
                best = best.min(tau * c * c / (2.0 * v));
                break;
            }
        }
    }
    best
}

#[cfg(test)]
mod tests;
