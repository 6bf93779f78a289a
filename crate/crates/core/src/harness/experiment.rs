//! Monte Carlo experiments on renewal inputs: exact network outputs coupled
//! with the reflected heavy-traffic approximation, tail estimates, collapse
//! diagnostics and stationarity tests.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{propagate, NetworkPrimitives, NetworkSpec};
use crate::node::NodeSpec;
use crate::pathcalc::{sup_distance, InvertiblePath, PiecewisePath};
use crate::rates::{build_covariance, variational_rate, CovarianceData, VariationalProblem};
use crate::reflection::{build_critical, skorokhod_phi, verify_skorokhod, w_tilde_from, x_tilde, CriticalData};
use crate::renewal::{check_scaling, service_process, stationary_renewal, Covering, Distribution, ScalingPlan, ScalingRule, Substream};

/// Node entry of the config: priority groups by class index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    #[serde(default)]
    pub high: Vec<usize>,
    #[serde(default)]
    pub low: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub classes: usize,
    pub nodes: Vec<NodeEntry>,
}

/// Inter-event laws. Only the shape matters: means are set by the scaling
/// schedule for every `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSection {
    /// One law per class.
    pub arrival: Vec<Distribution>,
    /// Per node, one entry per class; `null` for classes that do not visit.
    pub service: Vec<Vec<Option<Distribution>>>,
}

/// Critical limits, their offsets and the `k` sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    pub ks: Vec<f64>,
    #[serde(default)]
    pub rule: ScalingRule,
    pub alpha: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub alpha_offset: Vec<f64>,
    pub sigma_offset: Vec<Vec<f64>>,
}

/// Tail event `{d_k·Wᵢ(T) ≥ level}` at node `node` (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub node: usize,
    pub level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Observation window `[0, horizon]` in scaled time units.
    pub horizon: f64,
    /// Length of the warm-up window before time 0; the queues start empty at `−warmup`.
    #[serde(default)]
    pub warmup: f64,
    pub replications: usize,
    /// Upper bound for automatically enlarged replication counts.
    #[serde(default)]
    pub max_replications: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    /// Times in `[0, horizon]` at which `d_k·Wᵢ` is recorded.
    #[serde(default)]
    pub probes: Vec<f64>,
    #[serde(default)]
    pub covering: Covering,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// A complete experiment. Time is measured in the scaled units of the
/// limit (one unit is `k` raw time units); counts are in units of
/// `√(b_k k)` customers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSection,
    pub distributions: DistributionSection,
    pub scaling: ScalingSection,
    pub experiment: ExperimentSection,
}

/// Validated config together with its critical data.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub spec: NetworkSpec,
    pub cd: CriticalData,
    pub plan: ScalingPlan,
    /// Re-solve every coupled reflection with the Skorokhod map and verify it.
    /// On by default in debug builds.
    pub verify_inline: bool,
}

/// Parses a config, reporting the path of the offending field on error.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        Error::schema(if field == "." { "<root>".to_string() } else { field }, e.inner().to_string())
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

impl ExperimentConfig {
    /// Schema checks beyond parsing, the scaling conditions and criticality.
    pub fn prepare(&self) -> Result<Experiment> {
        let m = self.network.classes;
        let n = self.network.nodes.len();
        if m == 0 {
            return Err(Error::schema("network.classes", "must be positive"));
        }
        let nodes = self
            .network
            .nodes
            .iter()
            .enumerate()
            .map(|(i, e)| NodeSpec::new(m, e.high.clone(), e.low.clone()).map_err(|err| Error::schema(format!("network.nodes[{i}]"), err.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let spec = NetworkSpec::new(m, nodes).map_err(|e| Error::schema("network", e.to_string()))?;
        let d = &self.distributions;
        if d.arrival.len() != m {
            return Err(Error::schema("distributions.arrival", format!("expected {m} entries")));
        }
        for (j, dist) in d.arrival.iter().enumerate() {
            dist.validate().map_err(|e| Error::schema(format!("distributions.arrival[{j}]"), e.to_string()))?;
        }
        if d.service.len() != n {
            return Err(Error::schema("distributions.service", format!("expected {n} rows")));
        }
        for (i, row) in d.service.iter().enumerate() {
            if row.len() != m {
                return Err(Error::schema(format!("distributions.service[{i}]"), format!("expected {m} entries")));
            }
            for j in spec.nodes[i].visiting() {
                match &row[j] {
                    Some(dist) => dist.validate().map_err(|e| Error::schema(format!("distributions.service[{i}][{j}]"), e.to_string()))?,
                    None => return Err(Error::schema(format!("distributions.service[{i}][{j}]"), "visiting class needs a law")),
                }
            }
        }
        let s = &self.scaling;
        if s.ks.is_empty() {
            return Err(Error::schema("scaling.ks", "needs at least one value"));
        }
        if let Some(k) = s.ks.iter().find(|&&k| !(k >= 1.0) || k.fract() != 0.0 || k > 9.0e15) {
            return Err(Error::schema("scaling.ks", format!("{k} is not a positive integer")));
        }
        if s.alpha.len() != m || s.alpha_offset.len() != m {
            return Err(Error::schema("scaling.alpha", format!("alpha and alpha_offset need {m} entries")));
        }
        if s.sigma.len() != n || s.sigma_offset.len() != n || s.sigma.iter().chain(&s.sigma_offset).any(|r| r.len() != m) {
            return Err(Error::schema("scaling.sigma", format!("sigma and sigma_offset need {n} rows of {m}")));
        }
        let e = &self.experiment;
        if !(e.horizon > 0.0) || !e.horizon.is_finite() {
            return Err(Error::schema("experiment.horizon", "must be positive"));
        }
        if !(e.warmup >= 0.0) || !e.warmup.is_finite() {
            return Err(Error::schema("experiment.warmup", "must be nonnegative"));
        }
        if e.replications == 0 {
            return Err(Error::schema("experiment.replications", "must be positive"));
        }
        if let Some((i, ev)) = e.events.iter().enumerate().find(|(_, ev)| ev.node == 0 || ev.node > n || !(ev.level >= 0.0)) {
            return Err(Error::schema(format!("experiment.events[{i}]"), format!("node {} / level {} out of range", ev.node, ev.level)));
        }
        if let Some(p) = e.probes.iter().find(|&&p| !(0.0..=e.horizon).contains(&p)) {
            return Err(Error::schema("experiment.probes", format!("{p} outside [0, horizon]")));
        }
        let cd = build_critical(&spec, &s.alpha, &s.sigma, &s.alpha_offset, &s.sigma_offset).map_err(|e| Error::schema("scaling", e.to_string()))?;
        cd.check_drift()?;
        let plan = ScalingPlan { ks: s.ks.clone(), rule: s.rule };
        check_scaling(&plan, &cd).into_result()?;
        Ok(Experiment { cfg: self.clone(), spec, cd, plan, verify_inline: cfg!(debug_assertions) })
    }
}

/// Scaled processes of one replication.
#[derive(Clone, Debug)]
pub struct ReplicationPaths {
    pub k: f64,
    pub d: f64,
    /// `d_k·Wᵢ` over the full window.
    pub w: Vec<PiecewisePath>,
    /// `d_k·Vᵢ`.
    pub v: Vec<PiecewisePath>,
    /// Queue lengths per node and class.
    pub q: Vec<Vec<PiecewisePath>>,
    /// `d_k·(Z_{i,j} − id)` per node and class, on the interval where it is exact.
    pub sojourn: Vec<Vec<Option<PiecewisePath>>>,
    /// Coupled `W̃` from the same input paths.
    pub w_tilde: Vec<PiecewisePath>,
    pub truncation_sensitive: bool,
}

/// Summary of one node in one replication.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeMetrics {
    /// `sup |d_k·Wᵢ − W̃ᵢ|` over `[0, T]`.
    pub coupling: f64,
    /// `max_j sup |Q_{i,j} − α^ℒ_{i,j}·d_k·Wᵢ|` over `[0, T]`.
    pub collapse: f64,
    /// `max_{j∈ℒᵢ} sup |d_k·(Z_{i,j} − id) − e^ℒ_{i,j}·d_k·Wᵢ|`.
    pub snapshot: f64,
    /// `sup d_k·Vᵢ` over `[0, T]`.
    pub v_sup: f64,
    /// `d_k·Wᵢ(T)`.
    pub w_end: f64,
    pub w_tilde_end: f64,
    /// `d_k·Wᵢ` at the configured probe times.
    pub probes: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationResult {
    pub k: f64,
    pub rep: u64,
    pub nodes: Vec<NodeMetrics>,
    /// Indicators of the configured events.
    pub events: Vec<bool>,
    pub truncation_sensitive: bool,
}

impl Experiment {
    fn window(&self) -> (f64, f64) {
        (-self.cfg.experiment.warmup, self.cfg.experiment.horizon)
    }

    fn stream(&self, k: f64, node: usize, class: usize, rep: u64) -> Substream {
        Substream { seed: self.cfg.experiment.seed, k: k as u64, node: node as u64, class: class as u64, rep }
    }

    /// Limiting variances of the inter-event laws at the critical means.
    pub fn covariance(&self) -> Result<CovarianceData> {
        let cd = &self.cd;
        let d = &self.cfg.distributions;
        let u2: Vec<f64> = d.arrival.iter().zip(&cd.alpha).map(|(dist, a)| dist.with_mean(1.0 / a).variance()).collect();
        let v2: Vec<Vec<f64>> = (0..cd.n())
            .map(|i| {
                (0..cd.spec.classes)
                    .map(|j| match (&d.service[i][j], cd.spec.nodes[i].visits(j)) {
                        (Some(dist), true) => dist.with_mean(1.0 / cd.sigma[i][j]).variance(),
                        _ => 0.0,
                    })
                    .collect()
            })
            .collect();
        build_covariance(cd, &u2, &v2)
    }

    /// Generates the renewal inputs for `(k, rep)`, propagates them through
    /// the network and computes the coupled approximation.
    pub fn simulate(&self, k: f64, rep: u64) -> Result<ReplicationPaths> {
        self.simulate_inner(k, rep, self.window(), true).map_err(|e| Error::AtReplication { k: k as u64, rep, source: Box::new(e) })
    }

    /// `d_k·Wᵢ(t)` at `times` for the network started empty at `−warmup`.
    ///
    /// Input paths are drawn from per-direction substreams, so shorter warm-ups
    /// see the same customers as longer ones.
    pub fn workloads_at(&self, k: f64, rep: u64, warmup: f64, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        let p = self
            .simulate_inner(k, rep, (-warmup, self.cfg.experiment.horizon), false)
            .map_err(|e| Error::AtReplication { k: k as u64, rep, source: Box::new(e) })?;
        p.w.iter().map(|w| times.iter().map(|&t| w.eval(t)).collect()).collect()
    }

    fn simulate_inner(&self, k: f64, rep: u64, window: (f64, f64), coupled: bool) -> Result<ReplicationPaths> {
        let cd = &self.cd;
        let (t0, t1) = window;
        let b = self.plan.b(k);
        let d = self.plan.d(k);
        let m = cd.spec.classes;
        let mut a = Vec::with_capacity(m);
        for (j, dist) in self.cfg.distributions.arrival.iter().enumerate() {
            let law = dist.with_mean(self.plan.mean_interarrival(cd, k, j)?);
            a.push(stationary_renewal(&law, k, b, &self.stream(k, 0, j, rep), (t0, t1), self.cfg.experiment.covering)?);
        }
        let mut s: Vec<Vec<Option<InvertiblePath>>> = Vec::with_capacity(cd.n());
        for (i, node) in cd.spec.nodes.iter().enumerate() {
            let mut row = vec![None; m];
            for j in node.visiting() {
                let dist = self.cfg.distributions.service[i][j].as_ref().expect("validated");
                let law = dist.with_mean(self.plan.mean_service(cd, k, i, j)?);
                let ratio = cd.alpha[j] / cd.sigma[i][j];
                let busy = ((ratio * t0).min(0.0), (ratio * t1).max(0.0));
                let reach = (a[j].start_value().min(0.0), a[j].end_value().max(0.0));
                row[j] = Some(service_process(&law, k, b, &self.stream(k, i + 1, j, rep), busy, reach).map_err(|e| e.at_node(i + 1))?);
            }
            s.push(row);
        }
        let mut w_tilde = Vec::new();
        if coupled {
            // centered inputs `â − d_k α id` and `ŝ − d_k σ id` for the coupled map
            let a_c: Vec<PiecewisePath> = a
                .iter()
                .enumerate()
                .map(|(j, p)| p.axpby(1.0, &PiecewisePath::identity(t0, t1), -d * cd.alpha[j]))
                .collect::<Result<_>>()?;
            let s_c: Vec<Vec<Option<PiecewisePath>>> = s
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(j, p)| p.as_ref().map(|p| p.axpby(1.0, &PiecewisePath::identity(p.start(), p.end()), -d * cd.sigma[i][j])).transpose())
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            let x = x_tilde(&a_c, &s_c, cd)?;
            let (wt, _) = w_tilde_from(&x, cd)?;
            if self.verify_inline && t0 == 0.0 {
                let z = mat_paths(&cd.r, &x)?;
                let sol = skorokhod_phi(&z, &cd.r)?;
                // knots closer than the time tolerance are merged, which moves values by up to one customer unit
                let rep = verify_skorokhod(&sol, &z, &cd.r, 1e-6);
                if !rep.passed {
                    return Err(Error::DegenerateInput(format!("coupled reflection failed verification: {rep:?}")));
                }
            }
            w_tilde = wt;
        }
        let np = NetworkPrimitives::new(a, s, &cd.spec)?;
        let out = propagate(&np, &cd.spec)?;
        let mut w = Vec::new();
        let mut v = Vec::new();
        let mut q = Vec::new();
        let mut sojourn = Vec::new();
        for (i, node) in out.nodes.iter().enumerate() {
            w.push(node.w.scale(d));
            v.push(node.v.scale(d));
            q.push(node.q.clone());
            let row = (0..m)
                .map(|j| {
                    if !cd.spec.nodes[i].low.contains(&j) {
                        return Ok(None);
                    }
                    let until = node.z_valid_until[j].min(t1);
                    if until < t0 {
                        return Ok(None);
                    }
                    let z = node.z[j].restrict(t0, until)?;
                    Ok(Some(z.axpby(d, &PiecewisePath::identity(t0, until), -d)?))
                })
                .collect::<Result<Vec<_>>>()?;
            sojourn.push(row);
        }
        let truncation_sensitive = out.nodes.iter().any(|o| o.truncation_sensitive);
        Ok(ReplicationPaths { k, d, w, v, q, sojourn, w_tilde, truncation_sensitive })
    }

    /// One replication reduced to its metrics.
    pub fn run_replication(&self, k: f64, rep: u64) -> Result<ReplicationResult> {
        let paths = self.simulate(k, rep)?;
        self.metrics(&paths, rep).map_err(|e| Error::AtReplication { k: k as u64, rep, source: Box::new(e) })
    }

    fn metrics(&self, p: &ReplicationPaths, rep: u64) -> Result<ReplicationResult> {
        let cd = &self.cd;
        let t1 = self.cfg.experiment.horizon;
        let obs = |x: &PiecewisePath| x.restrict(0.0, t1);
        let mut nodes = Vec::with_capacity(cd.n());
        for i in 0..cd.n() {
            let w = obs(&p.w[i])?;
            let coupling = sup_distance(&w, &p.w_tilde[i])?;
            let mut collapse: f64 = 0.0;
            for j in cd.spec.nodes[i].visiting() {
                let target = w.scale(cd.alpha_low[i][j]);
                collapse = collapse.max(sup_distance(&obs(&p.q[i][j])?, &target)?);
            }
            let mut snapshot: f64 = 0.0;
            for z in p.sojourn[i].iter().enumerate().filter_map(|(j, z)| z.as_ref().map(|z| (j, z))) {
                let (j, z) = z;
                if z.end() >= 0.0 {
                    let zr = z.restrict(0.0, z.end())?;
                    snapshot = snapshot.max(sup_distance(&zr, &w.scale(cd.e_low[i][j]))?);
                }
            }
            let v_sup = obs(&p.v[i])?.max_abs();
            let probes = self.cfg.experiment.probes.iter().map(|&t| w.eval(t)).collect::<Result<Vec<_>>>()?;
            nodes.push(NodeMetrics {
                coupling,
                collapse,
                snapshot,
                v_sup,
                w_end: w.end_value(),
                w_tilde_end: p.w_tilde[i].end_value(),
                probes,
            });
        }
        let events = self.cfg.experiment.events.iter().map(|ev| nodes[ev.node - 1].w_end >= ev.level - EVENT_TOL).collect();
        Ok(ReplicationResult { k: p.k, rep, nodes, events, truncation_sensitive: p.truncation_sensitive })
    }

    /// Replications `0..reps` at `k`, in parallel; the result is ordered by
    /// replication index and independent of scheduling.
    pub fn replicate(&self, k: f64, reps: usize) -> Result<Vec<ReplicationResult>> {
        (0..reps as u64).into_par_iter().map(|r| self.run_replication(k, r)).collect()
    }

    /// All configured replications for every `k` of the sweep.
    pub fn sweep(&self) -> Result<Vec<ReplicationResult>> {
        let mut out = Vec::new();
        for &k in &self.plan.ks {
            out.extend(self.replicate(k, self.cfg.experiment.replications)?);
        }
        Ok(out)
    }
}

/// `R·x` for a vector of paths on one domain.
fn mat_paths(r: &nalgebra::DMatrix<f64>, x: &[PiecewisePath]) -> Result<Vec<PiecewisePath>> {
    let (t0, t1) = (x[0].start(), x[0].end());
    (0..x.len())
        .map(|i| {
            let mut acc = PiecewisePath::zero(t0, t1);
            for (h, xh) in x.iter().enumerate() {
                if r[(i, h)] != 0.0 {
                    acc = acc.axpby(1.0, xh, r[(i, h)])?;
                }
            }
            Ok(acc)
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Medians over replications at one `k`, per node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrendRow {
    pub k: f64,
    pub replications: usize,
    pub coupling: Vec<f64>,
    pub collapse: Vec<f64>,
    pub snapshot: Vec<f64>,
    pub v_sup: Vec<f64>,
}

pub fn trend_row(k: f64, results: &[ReplicationResult], n: usize) -> TrendRow {
    let col = |f: &dyn Fn(&NodeMetrics) -> f64| -> Vec<f64> { (0..n).map(|i| median(&results.iter().map(|r| f(&r.nodes[i])).collect::<Vec<_>>())).collect() };
    TrendRow {
        k,
        replications: results.len(),
        coupling: col(&|m| m.coupling),
        collapse: col(&|m| m.collapse),
        snapshot: col(&|m| m.snapshot),
        v_sup: col(&|m| m.v_sup),
    }
}

/// Median coupling distances per `k`, together with the raw replications.
pub fn coupling_experiment(exp: &Experiment) -> Result<(Vec<TrendRow>, Vec<ReplicationResult>)> {
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &k in &exp.plan.ks {
        let res = exp.replicate(k, exp.cfg.experiment.replications)?;
        rows.push(trend_row(k, &res, exp.cd.n()));
        all.extend(res);
    }
    Ok((rows, all))
}

/// Whether `f(row)` is strictly decreasing along the rows for every node.
pub fn strictly_decreasing(rows: &[TrendRow], f: impl Fn(&TrendRow) -> &[f64]) -> Vec<bool> {
    let n = rows.first().map_or(0, |r| f(r).len());
    (0..n).map(|i| rows.windows(2).all(|w| f(&w[1])[i] < f(&w[0])[i])).collect()
}

/// Collapse and snapshot trends: the same medians as [`coupling_experiment`],
/// read through the `collapse`, `snapshot` and `v_sup` columns.
pub fn collapse_snapshot_check(exp: &Experiment) -> Result<Vec<TrendRow>> {
    Ok(coupling_experiment(exp)?.0)
}

/// Monte Carlo estimate of one event at one `k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailRow {
    pub k: f64,
    pub b_k: f64,
    pub node: usize,
    pub level: f64,
    pub replications: usize,
    pub hits: usize,
    pub p_hat: f64,
    /// Binomial standard error of `p_hat`.
    pub std_err: f64,
    /// `−(1/b_k)·log p̂`; with zero hits, the lower bound from `p ≤ 3/N`.
    pub slope: f64,
    /// Slope interval from `p̂ ± 2·std_err`.
    pub slope_low: f64,
    pub slope_high: f64,
    /// Set when `hits == 0` and `slope` is a one-sided bound.
    pub one_sided: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailReport {
    pub rows: Vec<TailRow>,
    /// Limiting rate per event from the variational solver.
    pub rates: Vec<f64>,
    pub warnings: Vec<String>,
}

pub fn tail_row(k: f64, b_k: f64, ev: &EventSpec, hits: usize, reps: usize) -> TailRow {
    let nf = reps as f64;
    let p = hits as f64 / nf;
    let se = (p * (1.0 - p) / nf).sqrt();
    let slope_of = |q: f64| if q >= 1.0 { 0.0 } else { -q.ln() / b_k };
    let (slope, low, high, one_sided) = if hits == 0 {
        let s = slope_of(3.0 / nf);
        (s, s, f64::INFINITY, true)
    } else {
        let hi_p = (p + 2.0 * se).min(1.0);
        let lo_p = p - 2.0 * se;
        (slope_of(p), slope_of(hi_p), if lo_p > 0.0 { slope_of(lo_p) } else { f64::INFINITY }, false)
    };
    TailRow { k, b_k, node: ev.node, level: ev.level, replications: reps, hits, p_hat: p, std_err: se, slope, slope_low: low, slope_high: high, one_sided }
}

/// Slack for rounding in event indicators.
pub const EVENT_TOL: f64 = 1e-12;

/// Minimum number of hits aimed for when sizing replication counts.
pub const TARGET_HITS: usize = 30;

/// Event frequencies per `k`. Replication counts start at the configured
/// value and are raised so that the rarest event is expected to be hit
/// [`TARGET_HITS`] times according to its limiting rate, capped at
/// `max_replications`.
pub fn tail_estimate(exp: &Experiment) -> Result<TailReport> {
    let events = &exp.cfg.experiment.events;
    if events.is_empty() {
        return Err(Error::schema("experiment.events", "tail estimation needs at least one event"));
    }
    let cov = exp.covariance()?;
    let mut rates = Vec::new();
    for ev in events {
        let mut vp = VariationalProblem::for_network(&exp.cd, &cov, ev.node - 1, ev.level);
        vp.horizon = vp.horizon.max(exp.cfg.experiment.horizon);
        rates.push(variational_rate(&vp)?.rate);
    }
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let base = exp.cfg.experiment.replications;
    let cap = exp.cfg.experiment.max_replications.unwrap_or(base).max(base);
    for &k in &exp.plan.ks {
        let b_k = exp.plan.b(k);
        let rarest = rates.iter().cloned().fold(0.0, f64::max);
        let wanted = (TARGET_HITS as f64 * (b_k * rarest).exp()).ceil();
        let reps = if wanted.is_finite() { (wanted as usize).clamp(base, cap) } else { cap };
        let res = exp.replicate(k, reps)?;
        for (e, ev) in events.iter().enumerate() {
            let hits = res.iter().filter(|r| r.events[e]).count();
            if hits < TARGET_HITS {
                warnings.push(format!("k={k}, node {} level {}: only {hits} hits in {reps} replications", ev.node, ev.level));
            }
            rows.push(tail_row(k, b_k, ev, hits, reps));
        }
    }
    Ok(TailReport { rows, rates, warnings })
}

/// Outcome of a two-sample Kolmogorov-Smirnov comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StationarityReport {
    pub k: f64,
    pub node: usize,
    pub times: [f64; 2],
    pub samples: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub passed: bool,
    /// Fraction of replications whose workload at the first probe changes
    /// when the warm-up window is halved.
    pub start_dependent: f64,
    /// Set when the start condition is not forgotten by the first probe.
    pub inconclusive: bool,
}

/// Largest fraction of start-dependent replications for a conclusive test.
pub const START_DEPENDENT_LIMIT: f64 = 0.05;

/// Asymptotic Kolmogorov distribution tail `P(K > λ)`.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample KS statistic and its asymptotic p-value.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(|p, q| p.total_cmp(q));
    b.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d): (usize, usize, f64) = (0, 0, 0.0);
    while i < n && j < m {
        let v = a[i].min(b[j]);
        while i < n && a[i] <= v {
            i += 1;
        }
        while j < m && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sq = ne.sqrt();
    (d, kolmogorov_tail((sq + 0.12 + 0.11 / sq) * d))
}

/// KS test between `d_k·Wᵢ(t₁)` and `d_k·Wᵢ(t₂)` across replications at the
/// first `k` of the sweep, using the first two probe times. Requires a warm-up
/// window; the test is inconclusive when halving the warm-up changes `Wᵢ(t₁)`
/// in more than [`START_DEPENDENT_LIMIT`] of the replications.
pub fn stationarity_test(exp: &Experiment, node: usize) -> Result<StationarityReport> {
    let e = &exp.cfg.experiment;
    if e.warmup <= 0.0 {
        return Err(Error::schema("experiment.warmup", "stationarity test needs a warm-up window"));
    }
    if e.probes.len() < 2 {
        return Err(Error::schema("experiment.probes", "stationarity test needs two probe times"));
    }
    if node == 0 || node > exp.cd.n() {
        return Err(Error::Input(format!("node {node} out of range")));
    }
    let k = exp.plan.ks[0];
    let times = [e.probes[0], e.probes[1]];
    let full: Vec<Vec<Vec<f64>>> = (0..e.replications as u64).into_par_iter().map(|r| exp.workloads_at(k, r, e.warmup, &times)).collect::<Result<_>>()?;
    let half: Vec<Vec<Vec<f64>>> = (0..e.replications as u64).into_par_iter().map(|r| exp.workloads_at(k, r, 0.5 * e.warmup, &times[..1])).collect::<Result<_>>()?;
    let x: Vec<f64> = full.iter().map(|w| w[node - 1][0]).collect();
    let y: Vec<f64> = full.iter().map(|w| w[node - 1][1]).collect();
    let moved = full.iter().zip(&half).filter(|(f, h)| (f[node - 1][0] - h[node - 1][0]).abs() > 1e-9 * (1.0 + f[node - 1][0].abs())).count();
    let start_dependent = moved as f64 / e.replications as f64;
    let inconclusive = start_dependent > START_DEPENDENT_LIMIT;
    let (statistic, p_value) = ks_two_sample(&x, &y);
    Ok(StationarityReport {
        k,
        node,
        times,
        samples: x.len(),
        statistic,
        p_value,
        passed: !inconclusive && p_value > 0.05,
        start_dependent,
        inconclusive,
    })
}

/// Writes replication metrics in long format `k,rep,node,metric,value`.
pub fn emit_csv<W: Write>(results: &[ReplicationResult], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    wr.write_record(["k", "rep", "node", "metric", "value"]).map_err(io)?;
    for r in results {
        let k = format!("{}", r.k);
        let rep = r.rep.to_string();
        for (i, m) in r.nodes.iter().enumerate() {
            let node = (i + 1).to_string();
            let mut put = |name: &str, v: f64| wr.write_record([k.as_str(), rep.as_str(), node.as_str(), name, &format!("{v}")]).map_err(io);
            put("coupling", m.coupling)?;
            put("collapse", m.collapse)?;
            put("snapshot", m.snapshot)?;
            put("v_sup", m.v_sup)?;
            put("w_end", m.w_end)?;
            put("w_tilde_end", m.w_tilde_end)?;
            for (p, v) in m.probes.iter().enumerate() {
                put(&format!("probe{p}"), *v)?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn emit_csv_file(results: &[ReplicationResult], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    emit_csv(results, std::io::BufWriter::new(f))
}
