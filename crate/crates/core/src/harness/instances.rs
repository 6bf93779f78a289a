//! Random model instances for invariant checks.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::Result;
use crate::network::{NetworkPrimitives, NetworkSpec};
use crate::node::{NodePrimitives, NodeSpec};
use crate::pathcalc::{InvertiblePath, Knot, MonotonePath, PiecewisePath};
use crate::reflection::{self, CriticalData};

/// Arrival path on `[t0, t1]` starting at 0, mixing unit-ish jumps and ramps.
pub fn random_arrivals<R: Rng>(rng: &mut R, t0: f64, t1: f64, rate: f64) -> MonotonePath {
    let mut knots = vec![Knot::new(t0, 0.0, 0.0)];
    let mut t = t0;
    let mut level = 0.0;
    loop {
        t += -rng.random::<f64>().max(1e-300).ln() / rate;
        if t >= t1 {
            break;
        }
        if rng.random_bool(0.7) {
            level += rng.random_range(0.2..1.5);
            knots.push(Knot::new(t, level, 0.0));
        } else {
            let slope = rng.random_range(0.2..2.0);
            let dur = rng.random_range(0.1..1.0f64).min(t1 - t);
            knots.push(Knot::new(t, level, slope));
            level += slope * dur;
            t += dur;
            if t >= t1 {
                break;
            }
            knots.push(Knot::new(t, level, 0.0));
        }
    }
    MonotonePath::new(PiecewisePath::from_sorted(t0, t1, knots)).expect("nondecreasing by construction")
}

/// Continuous service-allocation path starting at 0 at busy time `b0`, growing
/// until it exceeds `reach`; slopes in `[lo, hi]`, with occasional flats.
pub fn random_service<R: Rng>(rng: &mut R, b0: f64, reach: f64, lo: f64, hi: f64) -> InvertiblePath {
    let mut verts = vec![(b0, 0.0)];
    let (mut b, mut v) = (b0, 0.0);
    while v <= reach + 1.0 {
        let len = rng.random_range(0.2..2.0);
        let slope = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(lo..hi) };
        b += len;
        v += slope * len;
        verts.push((b, v));
    }
    InvertiblePath::new(PiecewisePath::from_vertices(&verts).unwrap()).expect("continuous increasing")
}

/// Random single node with up to `max_classes` classes on `[t0, t1]`.
pub fn random_node<R: Rng>(rng: &mut R, max_classes: usize, t0: f64, t1: f64) -> Result<(NodeSpec, NodePrimitives)> {
    let classes = rng.random_range(1..=max_classes.max(1));
    let spec = random_groups(rng, classes);
    let mut a = Vec::with_capacity(classes);
    let mut s = Vec::with_capacity(classes);
    for j in 0..classes {
        let rate = rng.random_range(0.3..1.2);
        let aj = random_arrivals(rng, t0, t1, rate);
        let reach = aj.end_value();
        s.push(spec.visits(j).then(|| random_service(rng, t0, reach, 0.6, 4.0)));
        a.push(aj);
    }
    Ok((spec, NodePrimitives::new(a, s)?))
}

fn random_groups<R: Rng>(rng: &mut R, classes: usize) -> NodeSpec {
    let mut high = Vec::new();
    let mut low = Vec::new();
    for j in 0..classes {
        match rng.random_range(0..3) {
            0 => high.push(j),
            1 => low.push(j),
            _ => {}
        }
    }
    if low.is_empty() {
        let j = rng.random_range(0..classes);
        high.retain(|&h| h != j);
        low.push(j);
    }
    NodeSpec { classes, high, low }
}

/// Random feedforward network with `n` nodes on `[t0, t1]`.
pub fn random_network<R: Rng>(
    rng: &mut R,
    n: usize,
    max_classes: usize,
    t0: f64,
    t1: f64,
) -> Result<(NetworkSpec, NetworkPrimitives)> {
    let classes = rng.random_range(1..=max_classes.max(1));
    let nodes: Vec<NodeSpec> = (0..n).map(|_| random_groups(rng, classes)).collect();
    let spec = NetworkSpec::new(classes, nodes)?;
    let mut a: Vec<MonotonePath> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let rate = rng.random_range(0.3..1.0);
        a.push(random_arrivals(rng, t0, t1, rate));
    }
    let mut s = Vec::with_capacity(n);
    for node in &spec.nodes {
        let row = (0..classes)
            .map(|j| node.visits(j).then(|| random_service(rng, t0, a[j].end_value(), 0.8, 4.0)))
            .collect();
        s.push(row);
    }
    Ok((spec.clone(), NetworkPrimitives::new(a, s, &spec)?))
}

/// Random continuous path on `[0, t1]` starting at 0 with `segments` pieces.
pub fn random_continuous<R: Rng>(rng: &mut R, t1: f64, segments: usize, slope: f64) -> PiecewisePath {
    let mut verts = vec![(0.0, 0.0)];
    let mut cuts: Vec<f64> = (0..segments.saturating_sub(1)).map(|_| rng.random_range(0.0..t1)).collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    let mut v = 0.0;
    let mut prev = 0.0;
    for &c in cuts.iter().filter(|&&c| c > 1e-6 && c < t1 - 1e-6).chain(std::iter::once(&t1)) {
        v += rng.random_range(-slope..slope) * (c - prev);
        verts.push((c, v));
        prev = c;
    }
    PiecewisePath::from_vertices(&verts).unwrap()
}

/// Random path on `[0, t1]` starting at 0 with jumps and ramps of either sign.
pub fn random_jumpy<R: Rng>(rng: &mut R, t1: f64, segments: usize, slope: f64) -> PiecewisePath {
    let mut knots = vec![Knot::new(0.0, 0.0, rng.random_range(-slope..slope))];
    let mut times: Vec<f64> = (0..segments.saturating_sub(1)).map(|_| rng.random_range(0.0..t1)).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for t in times {
        let last = *knots.last().unwrap();
        if t - last.t < 1e-6 {
            continue;
        }
        let mut v = last.at(t);
        if rng.random_bool(0.4) {
            v += rng.random_range(-1.0..1.0);
        }
        knots.push(Knot::new(t, v, rng.random_range(-slope..slope)));
    }
    PiecewisePath::from_sorted(0.0, t1, knots)
}

/// Random limit-scale instance for the reflected maps on `[0, t1]`.
///
/// Limiting rates are critical at every node; arrival paths are random
/// counting-like paths and service paths are `σ·id` plus a continuous
/// perturbation, all starting at 0.
pub struct CriticalInstance {
    pub cd: CriticalData,
    pub a: Vec<PiecewisePath>,
    pub s: Vec<Vec<Option<PiecewisePath>>>,
}

pub fn random_critical<R: Rng>(rng: &mut R, n: usize, max_classes: usize, t1: f64) -> Result<CriticalInstance> {
    let classes = rng.random_range(1..=max_classes.max(1));
    let nodes: Vec<NodeSpec> = (0..n).map(|_| random_groups(rng, classes)).collect();
    let spec = NetworkSpec::new(classes, nodes)?;
    let alpha: Vec<f64> = (0..classes).map(|_| rng.random_range(0.3..1.5)).collect();
    let mut sigma = vec![vec![0.0; classes]; n];
    let mut sigma_offset = vec![vec![0.0; classes]; n];
    for (i, node) in spec.nodes.iter().enumerate() {
        let weights: Vec<(usize, f64)> = node.visiting().map(|j| (j, rng.random_range(0.2..1.0))).collect();
        let total: f64 = weights.iter().map(|w| w.1).sum();
        for (j, w) in weights {
            sigma[i][j] = alpha[j] * total / w;
            sigma_offset[i][j] = rng.random_range(-0.5..0.5);
        }
    }
    // Renormalise so the load is exactly 1 up to rounding of a single division.
    for (i, node) in spec.nodes.iter().enumerate() {
        let load: f64 = node.visiting().map(|j| alpha[j] / sigma[i][j]).sum();
        for j in node.visiting() {
            sigma[i][j] *= load;
        }
    }
    let alpha_offset: Vec<f64> = (0..classes).map(|_| rng.random_range(-0.5..0.5)).collect();
    let cd = reflection::build_critical(&spec, &alpha, &sigma, &alpha_offset, &sigma_offset)?;
    let a = alpha.iter().map(|&r| random_arrivals(rng, 0.0, t1, r).into_inner()).collect();
    let s = spec
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| {
            (0..classes)
                .map(|j| {
                    node.visits(j).then(|| {
                        let noise = random_continuous(rng, t1, 8, 1.0);
                        PiecewisePath::identity(0.0, t1).scale(sigma[i][j]).add(&noise).expect("same domain")
                    })
                })
                .collect()
        })
        .collect();
    Ok(CriticalInstance { cd, a, s })
}

/// Random strictly lower triangular `G` with entries in `[0, 1.5)` and
/// density about one half; returns `R = (I + G)⁻¹`.
pub fn random_reflection<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for h in 0..i {
            if rng.random_bool(0.5) {
                g[(i, h)] = rng.random_range(0.0..1.5);
            }
        }
    }
    reflection::unit_lower_inverse(&g)
}
