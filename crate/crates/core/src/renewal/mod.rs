//! Renewal inputs: partial-sum paths, stationary renewal arrival processes,
//! service processes, the heavy-traffic scaling schedule and the moment
//! generating function certificate for inter-event laws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution as _, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pathcalc::{InvertiblePath, Knot, MonotonePath, PiecewisePath, TIME_TOL};
use crate::reflection::CriticalData;

/// Law of inter-arrival or service times. All kinds have strictly positive
/// support and finite moments of every order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Distribution {
    Exponential { mean: f64 },
    Deterministic { value: f64 },
    Gamma { shape: f64, mean: f64 },
    ShiftedUniform { low: f64, high: f64 },
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Distribution::Exponential { mean } => mean > 0.0 && mean.is_finite(),
            Distribution::Deterministic { value } => value > 0.0 && value.is_finite(),
            Distribution::Gamma { shape, mean } => shape > 0.0 && mean > 0.0 && shape.is_finite() && mean.is_finite(),
            Distribution::ShiftedUniform { low, high } => low > 0.0 && high >= low && high.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid distribution parameters: {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Exponential { mean } | Distribution::Gamma { mean, .. } => mean,
            Distribution::Deterministic { value } => value,
            Distribution::ShiftedUniform { low, high } => 0.5 * (low + high),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Distribution::Exponential { mean } => mean * mean,
            Distribution::Deterministic { .. } => 0.0,
            Distribution::Gamma { shape, mean } => mean * mean / shape,
            Distribution::ShiftedUniform { low, high } => (high - low).powi(2) / 12.0,
        }
    }

    /// The same law rescaled to mean `m`.
    pub fn with_mean(&self, m: f64) -> Self {
        let f = m / self.mean();
        match *self {
            Distribution::Exponential { .. } => Distribution::Exponential { mean: m },
            Distribution::Deterministic { .. } => Distribution::Deterministic { value: m },
            Distribution::Gamma { shape, .. } => Distribution::Gamma { shape, mean: m },
            Distribution::ShiftedUniform { low, high } => Distribution::ShiftedUniform { low: low * f, high: high * f },
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let x = match *self {
            Distribution::Exponential { mean } => mean * rng.sample::<f64, _>(Exp1),
            Distribution::Deterministic { value } => value,
            Distribution::Gamma { shape, mean } => Gamma::new(shape, mean / shape).expect("validated").sample(rng),
            Distribution::ShiftedUniform { low, high } => {
                if high > low {
                    rng.random_range(low..high)
                } else {
                    low
                }
            }
        };
        x.max(f64::MIN_POSITIVE)
    }

    /// Sample from the length-biased law `x·F(dx)/E(X)`: the law of the
    /// interval covering a fixed time in a stationary renewal process.
    pub fn sample_length_biased<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let x = match *self {
            Distribution::Exponential { mean } => Gamma::new(2.0, mean).expect("positive").sample(rng),
            Distribution::Deterministic { value } => value,
            Distribution::Gamma { shape, mean } => Gamma::new(shape + 1.0, mean / shape).expect("validated").sample(rng),
            Distribution::ShiftedUniform { low, high } => {
                let u: f64 = rng.random();
                (low * low + u * (high * high - low * low)).sqrt()
            }
        };
        x.max(f64::MIN_POSITIVE)
    }

    /// `log E exp(y(X − E X))`, or `None` where it diverges.
    pub fn centered_log_mgf(&self, y: f64) -> Option<f64> {
        match *self {
            Distribution::Exponential { mean } => (y * mean < 1.0).then(|| -y * mean - (-y * mean).ln_1p()),
            Distribution::Deterministic { .. } => Some(0.0),
            Distribution::Gamma { shape, mean } => {
                let theta = mean / shape;
                (y * theta < 1.0).then(|| -y * mean - shape * (-y * theta).ln_1p())
            }
            Distribution::ShiftedUniform { low, high } => {
                let h = 0.5 * (high - low) * y.abs();
                Some(if h < 1e-8 { h * h / 6.0 } else { (h.sinh() / h).ln() })
            }
        }
    }
}

/// Checks `log E exp(y(X − E X)) ≤ c y²` on `grid` points spread over `[−δ, δ]`.
pub fn mgf_bound_check(dist: &Distribution, c: f64, delta: f64, grid: usize) -> bool {
    let grid = grid.max(2);
    (0..grid).all(|g| {
        let y = -delta + 2.0 * delta * g as f64 / (grid - 1) as f64;
        match dist.centered_log_mgf(y) {
            Some(l) => l <= c * y * y + 1e-15,
            None => false,
        }
    })
}

/// How the interval straddling time 0 is drawn in [`stationary_renewal`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Covering {
    /// Length-biased, which makes the counting process exactly stationary.
    #[default]
    LengthBiased,
    /// Same law as every other interval.
    Plain,
}

/// Rule producing the normalizing sequence `b_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScalingRule {
    /// `b_k = √k`, so `d_k = k^{1/4}`.
    Sqrt,
    /// `b_k = k^p`.
    Power { exponent: f64 },
    /// `b_k = log k`.
    Log,
    /// `b_k = k`.
    Linear,
}

impl Default for ScalingRule {
    fn default() -> Self {
        ScalingRule::Sqrt
    }
}

impl ScalingRule {
    pub fn b(&self, k: f64) -> f64 {
        match *self {
            ScalingRule::Sqrt => k.sqrt(),
            ScalingRule::Power { exponent } => k.powf(exponent),
            ScalingRule::Log => k.ln(),
            ScalingRule::Linear => k,
        }
    }

    /// `d_k = √(k / b_k)`.
    pub fn d(&self, k: f64) -> f64 {
        (k / self.b(k)).sqrt()
    }
}

/// Sweep over `k` with mean schedules reaching the critical rates at speed `1/d_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPlan {
    pub ks: Vec<f64>,
    #[serde(default)]
    pub rule: ScalingRule,
}

impl ScalingPlan {
    pub fn b(&self, k: f64) -> f64 {
        self.rule.b(k)
    }

    pub fn d(&self, k: f64) -> f64 {
        self.rule.d(k)
    }

    /// `E(A_{k,j,1}) = 1/(α_j + α̃_j/d_k)`, so that `√(k/b_k)(1/E(A) − α_j) = α̃_j` for every `k`.
    pub fn mean_interarrival(&self, cd: &CriticalData, k: f64, j: usize) -> Result<f64> {
        let rate = cd.alpha[j] + cd.alpha_offset[j] / self.d(k);
        if !(rate > 0.0) {
            return Err(Error::Config(format!("k={k}: class {j} arrival rate {rate} is not positive")));
        }
        Ok(1.0 / rate)
    }

    /// `E(S_{k,i,j,1}) = 1/(σ_{i,j} + σ̃_{i,j}/d_k)`.
    pub fn mean_service(&self, cd: &CriticalData, k: f64, i: usize, j: usize) -> Result<f64> {
        let rate = cd.sigma[i][j] + cd.sigma_offset[i][j] / self.d(k);
        if !(rate > 0.0) {
            return Err(Error::Config(format!("k={k}: service rate {rate} of class {j} is not positive")).at_node(i + 1));
        }
        Ok(1.0 / rate)
    }

    /// `α̂_{k,j} = √(k/b_k) / E(A_{k,j,1})`.
    pub fn arrival_rate(&self, cd: &CriticalData, k: f64, j: usize) -> Result<f64> {
        Ok(self.d(k) / self.mean_interarrival(cd, k, j)?)
    }

    /// `σ̂_{k,i,j} = √(k/b_k) / E(S_{k,i,j,1})`.
    pub fn service_rate(&self, cd: &CriticalData, k: f64, i: usize, j: usize) -> Result<f64> {
        Ok(self.d(k) / self.mean_service(cd, k, i, j)?)
    }

    /// `ρ̂_{k,i} = Σ α̂_{k,j}/σ̂_{k,i,j}`.
    pub fn load(&self, cd: &CriticalData, k: f64, i: usize) -> Result<f64> {
        let mut rho = 0.0;
        for j in cd.spec.nodes[i].visiting() {
            rho += self.arrival_rate(cd, k, j)? / self.service_rate(cd, k, i, j)?;
        }
        Ok(rho)
    }
}

/// One named condition of [`check_scaling`].
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingReport {
    pub conditions: Vec<Condition>,
}

impl ScalingReport {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.conditions.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }

    /// Error naming the failed conditions, if any.
    pub fn into_result(self) -> Result<()> {
        if self.passed() {
            Ok(())
        } else {
            let detail: Vec<String> = self.conditions.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect();
            Err(Error::Config(format!("scaling conditions violated: {}", detail.join("; "))))
        }
    }
}

/// Numerical check of the scaling conditions on the sweep: `b_k/k` strictly
/// decreasing, `b_k/log k` strictly increasing, per-node loads below one and
/// mean schedules matching the limiting rates and offsets.
pub fn check_scaling(plan: &ScalingPlan, cd: &CriticalData) -> ScalingReport {
    let mut ks = plan.ks.clone();
    ks.sort_by(|a, b| a.total_cmp(b));
    let mut conditions = Vec::new();
    let positive = !ks.is_empty() && ks.iter().all(|&k| k > 1.0 && plan.b(k) > 0.0 && plan.b(k).is_finite());
    conditions.push(Condition { name: "positive-sequence", passed: positive, detail: format!("need k > 1 and b_k > 0 on {ks:?}") });
    let ratio_k: Vec<f64> = ks.iter().map(|&k| plan.b(k) / k).collect();
    let ratio_log: Vec<f64> = ks.iter().map(|&k| plan.b(k) / k.ln()).collect();
    conditions.push(Condition {
        name: "b_k/k -> 0",
        passed: positive && ratio_k.windows(2).all(|w| w[1] < w[0]) && ratio_k.last().is_some_and(|&r| r < 1.0),
        detail: format!("b_k/k = {ratio_k:?}"),
    });
    conditions.push(Condition {
        name: "b_k/log k -> inf",
        passed: positive && ratio_log.windows(2).all(|w| w[1] > w[0]),
        detail: format!("b_k/log k = {ratio_log:?}"),
    });
    let mut loads_ok = true;
    let mut schedule_ok = true;
    let mut detail = String::new();
    for &k in ks.iter().filter(|_| positive) {
        let d = plan.d(k);
        for i in 0..cd.n() {
            match plan.load(cd, k, i) {
                Ok(rho) if rho < 1.0 => {}
                Ok(rho) => {
                    loads_ok = false;
                    detail += &format!("k={k} node {}: load {rho}; ", i + 1);
                }
                Err(e) => {
                    loads_ok = false;
                    detail += &format!("{e}; ");
                }
            }
            for j in cd.spec.nodes[i].visiting() {
                if let Ok(m) = plan.mean_service(cd, k, i, j) {
                    let off = d * (1.0 / m - cd.sigma[i][j]);
                    schedule_ok &= (off - cd.sigma_offset[i][j]).abs() <= 1e-9 * (1.0 + cd.sigma_offset[i][j].abs() + d * cd.sigma[i][j]);
                }
            }
        }
        for j in 0..cd.spec.classes {
            if let Ok(m) = plan.mean_interarrival(cd, k, j) {
                let off = d * (1.0 / m - cd.alpha[j]);
                schedule_ok &= (off - cd.alpha_offset[j]).abs() <= 1e-9 * (1.0 + cd.alpha_offset[j].abs() + d * cd.alpha[j]);
            }
        }
    }
    conditions.push(Condition { name: "load below one", passed: positive && loads_ok, detail });
    conditions.push(Condition { name: "mean schedule", passed: positive && schedule_ok, detail: "offsets reproduce the declared limits".into() });
    ScalingReport { conditions }
}

/// Seed for one independent random substream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Substream {
    pub seed: u64,
    pub k: u64,
    /// 0 for arrivals, `i + 1` for services at node `i`.
    pub node: u64,
    pub class: u64,
    pub rep: u64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl Substream {
    /// Generator for `lane` of this substream; lanes are independent streams
    /// of one ChaCha key.
    pub fn rng(&self, lane: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        let mut id = splitmix(self.k);
        for part in [self.node, self.class, self.rep, lane] {
            id = splitmix(id ^ part);
        }
        rng.set_stream(id);
        rng
    }
}

fn check_samples(samples: &[f64]) -> Result<()> {
    match samples.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        Some(i) => Err(Error::Input(format!("sample {i} is {} (must be positive)", samples[i]))),
        None if samples.is_empty() => Err(Error::Input("no samples".into())),
        None => Ok(()),
    }
}

/// Partial sums `X(h)` at the integers `first − 1 ..= first − 1 + len`, where
/// `samples[m] = X_{first + m}` and `X(0) = 0`.
fn partial_sums(samples: &[f64], first: i64) -> Result<Vec<(f64, f64)>> {
    check_samples(samples)?;
    let h0 = first - 1;
    let h1 = h0 + samples.len() as i64;
    if h0 > 0 || h1 < 0 {
        return Err(Error::Input(format!("sample window [{h0}, {h1}] must contain 0")));
    }
    let zero = (-h0) as usize;
    let mut out = vec![(0.0, 0.0); samples.len() + 1];
    for idx in zero + 1..out.len() {
        out[idx] = ((h0 + idx as i64) as f64, out[idx - 1].1 + samples[idx - 1]);
    }
    for idx in (0..zero).rev() {
        out[idx] = ((h0 + idx as i64) as f64, out[idx + 1].1 - samples[idx]);
    }
    out[zero].0 = 0.0;
    Ok(out)
}

/// Linearly interpolated partial sums on the index window, `X(0) = 0` and
/// `X(−h) = −(X_0 + … + X_{1−h})`.
pub fn lips(samples: &[f64], first: i64) -> Result<InvertiblePath> {
    let verts = partial_sums(samples, first)?;
    InvertiblePath::new(PiecewisePath::from_vertices(&verts)?)
}

/// Piecewise constant partial sums, `X^pcps(t) = X^lips(⌊t⌋)`.
pub fn pcps(samples: &[f64], first: i64) -> Result<PiecewisePath> {
    let verts = partial_sums(samples, first)?;
    let (start, end) = (verts[0].0, verts[verts.len() - 1].0);
    let knots: Vec<Knot> = verts.iter().map(|&(t, v)| Knot::new(t, v, 0.0)).collect();
    PiecewisePath::new(start, end, knots)
}

/// Scaled stationary renewal counting process on `[t0, t1]`:
/// `(1/√(b_k k))·⌊(A^lips − N·A_1)⁻¹(k t)⌋` with `N` uniform on `[0, 1)`.
///
/// Jumps of size `1/√(b_k k)` sit at the epochs `(A^lips(h) − N·A_1)/k`; the
/// path equals 0 at time 0. Samples are drawn lazily in both directions
/// until the window is covered.
pub fn stationary_renewal(dist: &Distribution, k: f64, b_k: f64, stream: &Substream, window: (f64, f64), covering: Covering) -> Result<MonotonePath> {
    let (epochs, first) = renewal_epochs(dist, k, stream, window, covering, None)?;
    Ok(counting_path(&epochs, first, k, b_k, window))
}

/// Epochs `f(h)/k` for consecutive integers `h` starting at the returned index.
/// With `offset`, that value of `N` is used instead of a fresh draw.
pub(crate) fn renewal_epochs(
    dist: &Distribution,
    k: f64,
    stream: &Substream,
    window: (f64, f64),
    covering: Covering,
    offset: Option<f64>,
) -> Result<(Vec<f64>, i64)> {
    dist.validate()?;
    let (t0, t1) = window;
    if !(t1 > t0) || !(k > 0.0) || t0 > 0.0 {
        return Err(Error::Input(format!("need k > 0 and a window containing 0, got k={k}, [{t0}, {t1}]")));
    }
    let mut head = stream.rng(0);
    let a1 = match covering {
        Covering::LengthBiased => dist.sample_length_biased(&mut head),
        Covering::Plain => dist.sample(&mut head),
    };
    let n: f64 = head.random();
    let n = offset.unwrap_or(n);
    // forward epochs f(1), f(2), … until one exceeds k t1
    let mut fwd_rng = stream.rng(1);
    let mut forward = vec![-n * a1, (1.0 - n) * a1];
    while *forward.last().expect("nonempty") <= k * t1 {
        let next = forward.last().expect("nonempty") + dist.sample(&mut fwd_rng);
        forward.push(next);
    }
    // backward epochs f(−1), f(−2), … until one is at or below k t0
    let mut back_rng = stream.rng(2);
    let mut backward = Vec::new();
    let mut cur = forward[0];
    while cur > k * t0 {
        cur -= dist.sample(&mut back_rng);
        backward.push(cur);
    }
    let first = -(backward.len() as i64);
    let mut epochs: Vec<f64> = backward.into_iter().rev().collect();
    epochs.extend(forward);
    for e in epochs.iter_mut() {
        *e /= k;
    }
    Ok((epochs, first))
}

fn counting_path(epochs: &[f64], first: i64, k: f64, b_k: f64, window: (f64, f64)) -> MonotonePath {
    let (t0, t1) = window;
    let unit = 1.0 / (b_k * k).sqrt();
    // the largest h with epoch ≤ t0 is the history count
    let start_idx = epochs.partition_point(|&e| e <= t0);
    let start_h = first + start_idx as i64 - 1;
    let mut knots = vec![Knot::new(t0, start_h as f64 * unit, 0.0)];
    for (off, &e) in epochs[start_idx..].iter().enumerate() {
        if e > t1 {
            break;
        }
        knots.push(Knot::new(e, (start_h + 1 + off as i64) as f64 * unit, 0.0));
    }
    MonotonePath::trusted(PiecewisePath::from_sorted(t0, t1, knots))
}

/// Smallest scaled service time; shorter ones would be merged into a vertical
/// step by knot canonicalization.
pub const MIN_SERVICE_GAP: f64 = 10.0 * TIME_TOL;

fn service_gap<R: Rng>(dist: &Distribution, rng: &mut R, k: f64) -> f64 {
    (dist.sample(rng) / k).max(MIN_SERVICE_GAP)
}

/// Scaled service process `(1/√(b_k k))·(S^lips)⁻¹(k t)`, a continuous
/// increasing path of busy time. Samples are drawn until the busy-time
/// window `busy` and the value range `reach` (customers, scaled) are covered.
pub fn service_process(dist: &Distribution, k: f64, b_k: f64, stream: &Substream, busy: (f64, f64), reach: (f64, f64)) -> Result<InvertiblePath> {
    dist.validate()?;
    if !(k > 0.0) || busy.0 > 0.0 || busy.1 < 0.0 || reach.0 > 0.0 || reach.1 < 0.0 {
        return Err(Error::Input("service window and reach must contain 0".into()));
    }
    let unit = 1.0 / (b_k * k).sqrt();
    let mut fwd_rng = stream.rng(1);
    let mut forward = vec![(0.0, 0.0)];
    loop {
        let &(t, v) = forward.last().expect("nonempty");
        if t >= busy.1 && v >= reach.1 {
            break;
        }
        forward.push((t + service_gap(dist, &mut fwd_rng, k), v + unit));
    }
    let mut back_rng = stream.rng(2);
    let mut backward = Vec::new();
    let (mut t, mut v) = (0.0, 0.0);
    while t > busy.0 || v > reach.0 {
        t -= service_gap(dist, &mut back_rng, k);
        v -= unit;
        backward.push((t, v));
    }
    let mut verts: Vec<(f64, f64)> = backward.into_iter().rev().collect();
    verts.extend(forward);
    InvertiblePath::new(PiecewisePath::from_vertices(&verts)?)
}
