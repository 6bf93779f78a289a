//! Randomized identity suites shared by the `check` command and the acceptance run.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::checks::{node_residuals, scale_residual, shift_residuals, NodeResiduals};
use super::instances::{random_critical, random_jumpy, random_node, random_reflection};
use crate::error::Result;
use crate::node;
use crate::pathcalc::{running_inf, sup_distance, PiecewisePath};
use crate::rates::{oracle_rate_1d, variational_rate, VariationalProblem};
use crate::reflection::{skorokhod_fixed_point, skorokhod_phi, verify_skorokhod, w_tilde_from, x_tilde};

fn instance_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

fn fold_max(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct NodeSuite {
    pub instances: usize,
    pub residuals: NodeResiduals,
    #[serde(skip)]
    pub elapsed: Duration,
}

/// Solve `instances` random single nodes (up to three classes on `[0, 20]`)
/// and collect the worst residuals of every pathwise identity.
pub fn node_suite(seed: u64, instances: usize) -> Result<NodeSuite> {
    let start = Instant::now();
    let all: Vec<NodeResiduals> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, i);
            let (spec, np) = random_node(&mut rng, 3, 0.0, 20.0)?;
            let out = node::solve(&np, &spec)?;
            node_residuals(&np, &spec, &out)
        })
        .collect::<Result<_>>()?;
    let mut residuals = all.first().cloned().unwrap_or_default();
    for r in &all[1.min(all.len())..] {
        residuals.merge(r);
    }
    Ok(NodeSuite { instances, residuals, elapsed: start.elapsed() })
}

/// Worst scale-invariance residual over `instances` random nodes and every `ξ`.
pub fn scale_suite(seed: u64, instances: usize, xis: &[f64]) -> Result<f64> {
    let worst: Vec<f64> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, i);
            let (spec, np) = random_node(&mut rng, 3, 0.0, 20.0)?;
            let out = node::solve(&np, &spec)?;
            let mut r: f64 = 0.0;
            for &xi in xis {
                r = r.max(scale_residual(&np, &spec, &out, xi)?);
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    Ok(fold_max(worst.into_iter()))
}

/// Worst residual of each time-shift identity over random nodes on
/// `[-warmup, warmup]`, observed at `times` interior points each.
pub fn shift_suite(seed: u64, instances: usize, times: usize, warmup: f64) -> Result<[f64; 7]> {
    let all: Vec<[f64; 7]> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, i);
            let (spec, np) = random_node(&mut rng, 3, -warmup, warmup)?;
            let out = node::solve(&np, &spec)?;
            let mut r = [0.0f64; 7];
            for _ in 0..times {
                let t = rng.random_range(-0.95 * warmup..0.95 * warmup);
                let s = shift_residuals(&np, &spec, &out, t)?;
                for (a, b) in r.iter_mut().zip(s) {
                    *a = a.max(b);
                }
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let mut r = [0.0f64; 7];
    for s in all {
        for (a, b) in r.iter_mut().zip(s) {
            *a = a.max(b);
        }
    }
    Ok(r)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SkorokhodSuite {
    pub instances: usize,
    /// `sup |Φ(z) − fixed point after 2n passes|`
    pub fixed_point: f64,
    pub verified: usize,
    /// Distance between `Φ` and `z − min(0, inf z)` on one-dimensional inputs.
    pub one_d: f64,
    /// `sup |Φ(cz) − cΦ(z)|` relative to `c·max(1, sup|Φ(z)|)`.
    pub homogeneity: f64,
}

/// Random triangular Skorokhod problems with up to `max_n` nodes on `[0, 10]`.
pub fn skorokhod_suite(seed: u64, instances: usize, max_n: usize, tol: f64) -> Result<SkorokhodSuite> {
    let all: Vec<SkorokhodSuite> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, i);
            let n = rng.random_range(1..=max_n.max(1));
            let r = random_reflection(&mut rng, n);
            let z: Vec<PiecewisePath> = (0..n).map(|_| random_jumpy(&mut rng, 10.0, 15, 2.0)).collect();
            let sol = skorokhod_phi(&z, &r)?;
            let mut out = SkorokhodSuite { instances: 1, ..Default::default() };
            out.verified = verify_skorokhod(&sol, &z, &r, tol).passed as usize;
            let (fp, _) = skorokhod_fixed_point(&z, &r, 2 * n)?;
            for h in 0..n {
                out.fixed_point = out.fixed_point.max(sup_distance(&fp.w[h], &sol.w[h])?);
            }
            for c in [0.5, 2.0, 10.0] {
                let zc: Vec<_> = z.iter().map(|p| p.scale(c)).collect();
                let solc = skorokhod_phi(&zc, &r)?;
                for h in 0..n {
                    let scale = c * 1.0f64.max(sol.w[h].max_abs());
                    out.homogeneity = out.homogeneity.max(sup_distance(&solc.w[h], &sol.w[h].scale(c))? / scale);
                }
            }
            let one = skorokhod_phi(&z[..1], &DMatrix::identity(1, 1))?;
            let floor = running_inf(&z[0]).min(&PiecewisePath::zero(0.0, 10.0))?;
            out.one_d = sup_distance(&one.w[0], &z[0].sub(&floor)?)?;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut total = SkorokhodSuite::default();
    for s in all {
        total.instances += s.instances;
        total.verified += s.verified;
        total.fixed_point = total.fixed_point.max(s.fixed_point);
        total.one_d = total.one_d.max(s.one_d);
        total.homogeneity = total.homogeneity.max(s.homogeneity);
    }
    Ok(total)
}

/// Worst distance between the limit workload and `Φ(R X̃)` over random
/// critical networks with up to `max_n` nodes on `[0, 10]`.
pub fn reflected_limit_suite(seed: u64, instances: usize, max_n: usize) -> Result<f64> {
    let worst: Vec<f64> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, i);
            let n = rng.random_range(1..=max_n.max(1));
            let inst = random_critical(&mut rng, n, 3, 10.0)?;
            let cd = &inst.cd;
            let x = x_tilde(&inst.a, &inst.s, cd)?;
            let (w, _) = w_tilde_from(&x, cd)?;
            let mut z = Vec::with_capacity(n);
            for h in 0..n {
                let mut acc = PiecewisePath::zero(0.0, 10.0);
                for m in 0..=h {
                    acc = acc.axpby(1.0, &x[m], cd.r[(h, m)])?;
                }
                z.push(acc);
            }
            let sol = skorokhod_phi(&z, &cd.r)?;
            let mut r: f64 = 0.0;
            for h in 0..n {
                r = r.max(sup_distance(&w[h], &sol.w[h])?);
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    Ok(fold_max(worst.into_iter()))
}

#[derive(Clone, Debug, Serialize)]
pub struct VariationalCase {
    pub zeta: f64,
    pub v: f64,
    pub b: f64,
    pub rate: f64,
    pub closed_form: f64,
    pub brute_force: f64,
    pub rel_err: f64,
}

/// One-dimensional variational problems over the grid `values³` of drift,
/// variance and level, against the closed form `2ζb/V` and a brute-force ramp search.
pub fn variational_sweep(values: &[f64]) -> Result<Vec<VariationalCase>> {
    let mut grid = Vec::new();
    for &zeta in values {
        for &v in values {
            for &b in values {
                grid.push((zeta, v, b));
            }
        }
    }
    grid.into_par_iter()
        .map(|(zeta, v, b)| {
            let vp = VariationalProblem::new(0, b, vec![zeta], DMatrix::from_element(1, 1, v), DMatrix::identity(1, 1));
            let rate = variational_rate(&vp)?.rate;
            let closed_form = 2.0 * zeta * b / v;
            Ok(VariationalCase {
                zeta,
                v,
                b,
                rate,
                closed_form,
                brute_force: oracle_rate_1d(zeta, v, b),
                rel_err: (rate - closed_form).abs() / closed_form,
            })
        })
        .collect()
}
