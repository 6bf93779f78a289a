//! Heavy-traffic limit objects: critical rate data, the reflection matrices
//! `G` and `R = (I + G)⁻¹`, the simplified maps `X̃, Ỹ, W̃, Ũ`, and the
//! Skorokhod map `Φ` for triangular reflection matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::pathcalc::{compose, running_sup, stieltjes, sup_distance, MonotonePath, PiecewisePath, MONO_TOL};

/// Tolerance on the critical-load identity `Σ α_j / σ_{i,j} = 1`.
pub const CRITICAL_TOL: f64 = 1e-12;

/// Critical rates of a network and everything derived from them.
///
/// Per-node vectors are indexed by class over all of `ℳ`; entries for
/// classes that do not visit the node are zero.
#[derive(Clone, Debug)]
pub struct CriticalData {
    pub spec: NetworkSpec,
    pub alpha: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub alpha_offset: Vec<f64>,
    pub sigma_offset: Vec<Vec<f64>>,
    pub rho_low: Vec<f64>,
    pub alpha_low: Vec<Vec<f64>>,
    pub e_low: Vec<Vec<f64>>,
    pub g: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub rho_tilde: Vec<f64>,
    pub zeta_tilde: Vec<f64>,
}

impl CriticalData {
    pub fn n(&self) -> usize {
        self.spec.n()
    }

    /// Whether every node has positive limiting drift `ρ̃ᵢ > 0`.
    pub fn drift_positive(&self) -> bool {
        self.rho_tilde.iter().all(|&r| r > 0.0)
    }

    /// Like [`drift_positive`](Self::drift_positive) but names the first offending node.
    pub fn check_drift(&self) -> Result<()> {
        match self.rho_tilde.iter().position(|&r| !(r > 0.0)) {
            None => Ok(()),
            Some(i) => Err(Error::Config(format!("limiting drift {} is not positive", self.rho_tilde[i])).at_node(i + 1)),
        }
    }
}

/// Builds the critical data from limiting rates and their offsets.
///
/// `sigma` and `sigma_offset` are `n × classes`; entries of non-visiting
/// classes are ignored.
pub fn build_critical(
    spec: &NetworkSpec,
    alpha: &[f64],
    sigma: &[Vec<f64>],
    alpha_offset: &[f64],
    sigma_offset: &[Vec<f64>],
) -> Result<CriticalData> {
    let n = spec.n();
    let m = spec.classes;
    if alpha.len() != m || alpha_offset.len() != m {
        return Err(Error::Config(format!("expected {m} arrival rates and offsets")));
    }
    if sigma.len() != n || sigma_offset.len() != n || sigma.iter().chain(sigma_offset).any(|row| row.len() != m) {
        return Err(Error::Config(format!("service rates must be {n} rows of {m}")));
    }
    if let Some(j) = alpha.iter().position(|&a| !(a >= 0.0) || !a.is_finite()) {
        return Err(Error::Config(format!("arrival rate of class {j} must be finite and nonnegative")));
    }
    let mut rho_low = vec![0.0; n];
    let mut alpha_low = vec![vec![0.0; m]; n];
    let mut e_low = vec![vec![0.0; m]; n];
    let mut rho_tilde = vec![0.0; n];
    for (i, node) in spec.nodes.iter().enumerate() {
        let at = |e: Error| e.at_node(i + 1);
        let mut load = 0.0;
        for j in node.visiting() {
            let s = sigma[i][j];
            if !(s > 0.0) || !s.is_finite() {
                return Err(at(Error::Config(format!("service rate of class {j} must be positive"))));
            }
            load += alpha[j] / s;
            rho_tilde[i] += sigma_offset[i][j] * alpha[j] / (s * s) - alpha_offset[j] / s;
        }
        if (load - 1.0).abs() > CRITICAL_TOL {
            return Err(at(Error::Config(format!("node is not critically loaded: load {load}"))));
        }
        rho_low[i] = node.low.iter().map(|&j| alpha[j] / sigma[i][j]).sum();
        if !(rho_low[i] > 0.0) {
            return Err(at(Error::Config("low-priority load must be positive".into())));
        }
        for &j in &node.low {
            alpha_low[i][j] = alpha[j] / rho_low[i];
            e_low[i][j] = 1.0;
        }
    }
    let mut g = DMatrix::zeros(n, n);
    for (i, node) in spec.nodes.iter().enumerate() {
        for h in 0..i {
            g[(i, h)] = node.visiting().map(|j| alpha_low[h][j] / sigma[i][j]).sum();
        }
    }
    let r = unit_lower_inverse(&g);
    let zeta_tilde = (&r * nalgebra::DVector::from_column_slice(&rho_tilde)).iter().copied().collect();
    Ok(CriticalData {
        spec: spec.clone(),
        alpha: alpha.to_vec(),
        sigma: sigma.to_vec(),
        alpha_offset: alpha_offset.to_vec(),
        sigma_offset: sigma_offset.to_vec(),
        rho_low,
        alpha_low,
        e_low,
        g,
        r,
        rho_tilde,
        zeta_tilde,
    })
}

/// `(I + G)⁻¹` for strictly lower triangular `G`, by forward substitution.
pub fn unit_lower_inverse(g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let mut r = DMatrix::identity(n, n);
    for c in 0..n {
        for i in c + 1..n {
            let s: f64 = (c..i).map(|h| g[(i, h)] * r[(h, c)]).sum();
            r[(i, c)] = -s;
        }
    }
    r
}

/// `X̃ᵢ = Σ_{ℋᵢ∪ℒᵢ} (a_j/σ_{i,j} − (s_{i,j}/σ_{i,j})∘(α_j id/σ_{i,j}))`.
///
/// Inputs are arbitrary paths on a common domain containing 0; `s[i][j]`
/// must cover `(α_j/σ_{i,j})·[t0, t1]`.
pub fn x_tilde(a: &[PiecewisePath], s: &[Vec<Option<PiecewisePath>>], cd: &CriticalData) -> Result<Vec<PiecewisePath>> {
    check_shapes(a, s, cd)?;
    let (t0, t1) = (a[0].start(), a[0].end());
    let mut out = Vec::with_capacity(cd.n());
    for (i, node) in cd.spec.nodes.iter().enumerate() {
        let mut x = PiecewisePath::zero(t0, t1);
        for j in node.visiting() {
            let sig = cd.sigma[i][j];
            let inner = PiecewisePath::linear(t0, t1, cd.alpha[j] * t0 / sig, cd.alpha[j] / sig);
            let sj = s[i][j].as_ref().expect("shape checked");
            let term = compose(sj, &inner).map_err(|e| e.at_node(i + 1))?;
            x = x.add(&a[j].axpby(1.0 / sig, &term, -1.0 / sig)?)?;
        }
        out.push(x);
    }
    Ok(out)
}

fn check_shapes(a: &[PiecewisePath], s: &[Vec<Option<PiecewisePath>>], cd: &CriticalData) -> Result<()> {
    if a.len() != cd.spec.classes || s.len() != cd.n() {
        return Err(Error::Input("primitive shapes do not match the network".into()));
    }
    for (i, node) in cd.spec.nodes.iter().enumerate() {
        if s[i].len() != cd.spec.classes || node.visiting().any(|j| s[i][j].is_none()) {
            return Err(Error::Input("missing service path".into()).at_node(i + 1));
        }
    }
    Ok(())
}

/// The sequential reflection shared by `W̃` and `Φ`:
/// `yᵢ = sup(−xᵢ + Σ_{h<i} G_{i,h} w_h)`, `wᵢ = xᵢ − Σ_{h<i} G_{i,h} w_h + yᵢ`.
/// With `floor`, `yᵢ` is additionally kept nonnegative (`yᵢ(start) ≥ 0`).
fn reflect_sequential(x: &[PiecewisePath], g: &DMatrix<f64>, floor: bool) -> Result<(Vec<PiecewisePath>, Vec<MonotonePath>)> {
    let mut w: Vec<PiecewisePath> = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for (i, xi) in x.iter().enumerate() {
        let mut push = xi.neg();
        for (h, wh) in w.iter().enumerate() {
            if g[(i, h)] != 0.0 {
                push = push.axpby(1.0, wh, g[(i, h)])?;
            }
        }
        let yi = if floor {
            running_sup(&running_sup(&push).max(&PiecewisePath::zero(push.start(), push.end()))?)
        } else {
            running_sup(&push)
        };
        let wi = yi.sub(&push)?;
        w.push(wi);
        y.push(yi);
    }
    Ok((w, y))
}

/// `(W̃, Ỹ)` computed node by node from `X̃`.
pub fn w_tilde(
    a: &[PiecewisePath],
    s: &[Vec<Option<PiecewisePath>>],
    cd: &CriticalData,
) -> Result<(Vec<PiecewisePath>, Vec<MonotonePath>)> {
    let x = x_tilde(a, s, cd)?;
    reflect_sequential(&x, &cd.g, false)
}

/// `(W̃, Ỹ)` from a precomputed `X̃`.
pub fn w_tilde_from(x: &[PiecewisePath], cd: &CriticalData) -> Result<(Vec<PiecewisePath>, Vec<MonotonePath>)> {
    reflect_sequential(x, &cd.g, false)
}

/// `Ũᵢ = Σ_{ℋᵢ} ((s_{i,j}/σ_{i,j})∘(α_j id/σ_{i,j}) − a_j/σ_{i,j} + Σ_{h<i} α^ℒ_{h,j} W̃_h/σ_{i,j})`.
pub fn u_tilde(
    a: &[PiecewisePath],
    s: &[Vec<Option<PiecewisePath>>],
    w: &[PiecewisePath],
    cd: &CriticalData,
) -> Result<Vec<PiecewisePath>> {
    check_shapes(a, s, cd)?;
    let (t0, t1) = (a[0].start(), a[0].end());
    let mut out = Vec::with_capacity(cd.n());
    for (i, node) in cd.spec.nodes.iter().enumerate() {
        let mut u = PiecewisePath::zero(t0, t1);
        for &j in &node.high {
            let sig = cd.sigma[i][j];
            let inner = PiecewisePath::linear(t0, t1, cd.alpha[j] * t0 / sig, cd.alpha[j] / sig);
            let sj = s[i][j].as_ref().expect("shape checked");
            let term = compose(sj, &inner).map_err(|e| e.at_node(i + 1))?;
            u = u.add(&term.axpby(1.0 / sig, &a[j], -1.0 / sig)?)?;
            for (h, wh) in w.iter().enumerate().take(i) {
                let c = cd.alpha_low[h][j];
                if c != 0.0 {
                    u = u.axpby(1.0, wh, c / sig)?;
                }
            }
        }
        out.push(u);
    }
    Ok(out)
}

/// Solution `(w, y)` of the Skorokhod problem for `z` and `R`.
#[derive(Clone, Debug)]
pub struct SkorokhodSolution {
    pub w: Vec<PiecewisePath>,
    pub y: Vec<MonotonePath>,
}

/// Recovers `G = R⁻¹ − I` and checks it is strictly lower triangular.
pub fn reflection_g(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = r.nrows();
    if r.ncols() != n {
        return Err(Error::UnsupportedMatrix("reflection matrix must be square".into()));
    }
    for i in 0..n {
        if (r[(i, i)] - 1.0).abs() > CRITICAL_TOL {
            return Err(Error::UnsupportedMatrix(format!("diagonal entry {i} is {}, expected 1", r[(i, i)])));
        }
        for h in i + 1..n {
            if r[(i, h)] != 0.0 {
                return Err(Error::UnsupportedMatrix(format!("entry ({i}, {h}) above the diagonal is nonzero")));
            }
        }
    }
    Ok(unit_lower_inverse(&(r - DMatrix::identity(n, n))) - DMatrix::identity(n, n))
}

/// `Φ(z)` for `R = (I + G)⁻¹`, `G` strictly lower triangular.
///
/// Solved sequentially on `x = (I + G)z`. The regulator starts at 0, so
/// `wᵢ(start) = max(zᵢ(start), 0)` componentwise along the recursion.
pub fn skorokhod_phi(z: &[PiecewisePath], r: &DMatrix<f64>) -> Result<SkorokhodSolution> {
    if z.len() != r.nrows() {
        return Err(Error::Input(format!("{} paths for a {}×{} matrix", z.len(), r.nrows(), r.ncols())));
    }
    let g = reflection_g(r)?;
    let mut x = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        let mut xi = z[i].clone();
        for h in 0..i {
            if g[(i, h)] != 0.0 {
                xi = xi.axpby(1.0, &z[h], g[(i, h)])?;
            }
        }
        x.push(xi);
    }
    let (w, y) = reflect_sequential(&x, &g, true)?;
    Ok(SkorokhodSolution { w, y })
}

/// Per-condition residuals of a candidate Skorokhod solution.
#[derive(Clone, Debug, PartialEq)]
pub struct SkorokhodReport {
    pub min_w: f64,
    pub equation: f64,
    pub y_monotone: bool,
    pub complementarity: f64,
    pub passed: bool,
}

/// Checks `w ≥ 0`, `w = z + Ry`, `y` nondecreasing and `∫ wᵢ dyᵢ = 0` at `tol`.
/// Downward steps of `y` up to `tol` are accepted.
pub fn verify_skorokhod(sol: &SkorokhodSolution, z: &[PiecewisePath], r: &DMatrix<f64>, tol: f64) -> SkorokhodReport {
    let mut rep = SkorokhodReport { min_w: f64::INFINITY, equation: 0.0, y_monotone: true, complementarity: 0.0, passed: true };
    let n = z.len();
    if sol.w.len() != n || sol.y.len() != n || r.nrows() != n || r.ncols() != n {
        rep.passed = false;
        rep.equation = f64::INFINITY;
        return rep;
    }
    for i in 0..n {
        rep.min_w = rep.min_w.min(sol.w[i].min_value());
        let jump_tol = tol.max(MONO_TOL * sol.y[i].max_abs().max(1.0));
        rep.y_monotone &= sol.y[i].knots().iter().all(|k| k.slope >= -MONO_TOL) && sol.y[i].jumps().all(|(_, d)| d >= -jump_tol);
        let mut rhs = z[i].clone();
        let mut ok = true;
        for h in 0..n {
            if r[(i, h)] != 0.0 {
                match rhs.axpby(1.0, &sol.y[h], r[(i, h)]) {
                    Ok(p) => rhs = p,
                    Err(_) => ok = false,
                }
            }
        }
        let eq = if ok { sup_distance(&sol.w[i], &rhs).unwrap_or(f64::INFINITY) } else { f64::INFINITY };
        rep.equation = rep.equation.max(eq);
        let c = stieltjes(&sol.w[i], &sol.y[i]).map(f64::abs).unwrap_or(f64::INFINITY);
        rep.complementarity = rep.complementarity.max(c);
    }
    rep.passed = rep.min_w >= -tol && rep.equation <= tol && rep.y_monotone && rep.complementarity <= tol;
    rep
}

/// Jacobi iteration on `yᵢ = sup(0 ∨ −(zᵢ + Σ_{h≠i} R_{i,h} y_h))`, returning
/// the solution after `passes` sweeps and the change made by the last sweep.
///
/// For unit lower triangular `R` the iterate is exact after `n` sweeps.
pub fn skorokhod_fixed_point(z: &[PiecewisePath], r: &DMatrix<f64>, passes: usize) -> Result<(SkorokhodSolution, f64)> {
    let n = z.len();
    if r.nrows() != n || r.ncols() != n {
        return Err(Error::Input("matrix shape does not match the paths".into()));
    }
    let zero: Vec<PiecewisePath> = z.iter().map(|p| PiecewisePath::zero(p.start(), p.end())).collect();
    let mut y: Vec<PiecewisePath> = zero.clone();
    let mut change = f64::INFINITY;
    for _ in 0..passes {
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let mut free = z[i].clone();
            for h in 0..n {
                if h != i && r[(i, h)] != 0.0 {
                    free = free.axpby(1.0, &y[h], r[(i, h)])?;
                }
            }
            let scaled = free.scale(1.0 / r[(i, i)]);
            next.push(running_sup(&scaled.neg().max(&zero[i])?).into_inner());
        }
        change = 0.0;
        for i in 0..n {
            change = f64::max(change, sup_distance(&next[i], &y[i])?);
        }
        y = next;
    }
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let mut wi = z[i].clone();
        for h in 0..n {
            if r[(i, h)] != 0.0 {
                wi = wi.axpby(1.0, &y[h], r[(i, h)])?;
            }
        }
        w.push(wi);
    }
    let y = y.into_iter().map(MonotonePath::new).collect::<Result<Vec<_>>>()?;
    Ok((SkorokhodSolution { w, y }, change))
}
