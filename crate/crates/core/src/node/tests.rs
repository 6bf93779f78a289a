use super::*;
use crate::harness::checks;
use crate::harness::instances::random_node;
use crate::pathcalc::sup_distance;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const T: f64 = 4.0;

fn one_arrival(at: f64) -> MonotonePath {
    MonotonePath::new(PiecewisePath::steps(0.0, T, 0.0, &[(at, 1.0)]).unwrap()).unwrap()
}

fn no_arrivals() -> MonotonePath {
    MonotonePath::new(PiecewisePath::zero(0.0, T)).unwrap()
}

/// Service allocation `s(b) = b / service_time` on busy time `[0, 10]`.
fn service(service_time: f64) -> InvertiblePath {
    InvertiblePath::new(PiecewisePath::linear(0.0, 10.0, 0.0, 1.0 / service_time)).unwrap()
}

fn assert_path(p: &PiecewisePath, expect: &[(f64, f64)]) {
    for &(t, v) in expect {
        let got = p.eval(t).unwrap();
        assert!((got - v).abs() < 1e-12, "at t={t}: got {got}, expected {v}");
    }
}

/// Two classes: class 0 high priority with one arrival at 1, class 1 low and idle.
fn high_example() -> (NodeSpec, NodePrimitives) {
    let spec = NodeSpec::new(2, vec![0], vec![1]).unwrap();
    let np = NodePrimitives::new(vec![one_arrival(1.0), no_arrivals()], vec![Some(service(0.5)), Some(service(1.0))]).unwrap();
    (spec, np)
}

fn low_example() -> (NodeSpec, NodePrimitives) {
    let spec = NodeSpec::new(1, vec![], vec![0]).unwrap();
    let np = NodePrimitives::new(vec![one_arrival(1.0)], vec![Some(service(0.5))]).unwrap();
    (spec, np)
}

#[test]
fn spec_validation() {
    assert!(NodeSpec::new(2, vec![0], vec![]).is_err());
    assert!(NodeSpec::new(2, vec![0], vec![0]).is_err());
    assert!(NodeSpec::new(2, vec![], vec![2]).is_err());
    assert!(NodeSpec::new(2, vec![1], vec![0]).is_ok());
}

#[test]
fn fifo_node_has_identity_idle_high() {
    let (spec, np) = low_example();
    let u = idle_high(&np, &spec).unwrap();
    assert_eq!(*u, PiecewisePath::identity(0.0, T));
    assert_eq!(workload_high(&np, &spec).unwrap(), PiecewisePath::zero(0.0, T));
}

#[test]
fn zero_load_high_class() {
    let spec = NodeSpec::new(2, vec![0], vec![1]).unwrap();
    let np = NodePrimitives::new(vec![no_arrivals(), no_arrivals()], vec![Some(service(0.5)), Some(service(1.0))]).unwrap();
    assert_eq!(*idle_high(&np, &spec).unwrap(), PiecewisePath::identity(0.0, T));
    assert_eq!(*idle_total(&np, &spec).unwrap(), PiecewisePath::identity(0.0, T));
    assert_eq!(workload_low(&np, &spec).unwrap(), PiecewisePath::zero(0.0, T));
}

#[test]
fn single_high_arrival() {
    let (spec, np) = high_example();
    let u = idle_high(&np, &spec).unwrap();
    assert_path(&u, &[(0.5, 0.5), (1.0, 1.0), (1.25, 1.0), (1.5, 1.0), (2.0, 1.5), (3.0, 2.5)]);
    let v = workload_high(&np, &spec).unwrap();
    assert_path(&v, &[(0.9, 0.0), (1.0, 0.5), (1.25, 0.25), (1.5, 0.0), (3.0, 0.0)]);
    assert!((v.left_limit(1.0).unwrap()).abs() < 1e-12);
    let d = departures(&np, &spec).unwrap();
    assert_path(&d[0], &[(1.49, 0.0), (1.5, 1.0)]);
}

#[test]
fn single_low_arrival() {
    let (spec, np) = low_example();
    let out = solve(&np, &spec).unwrap();
    assert_path(&out.w, &[(0.5, 0.0), (1.0, 0.5), (1.2, 0.3), (1.5, 0.0), (3.0, 0.0)]);
    assert_path(&out.d[0], &[(1.0, 0.0), (1.4999, 0.0), (1.5, 1.0), (3.0, 1.0)]);
    assert_path(&out.q[0], &[(0.5, 0.0), (1.0, 1.0), (1.4, 1.0), (1.5, 0.0)]);
    assert_path(&out.z[0], &[(0.5, 0.5), (1.0, 1.5), (1.3, 1.5), (1.5, 1.5), (2.0, 2.0)]);
    assert!((out.z[0].left_limit(1.0).unwrap() - 1.0).abs() < 1e-12);
    assert!((out.z[0].left_limit(1.5).unwrap() - 1.5).abs() < 1e-12);
    assert_eq!(out.z_valid_until[0], T);
}

#[test]
fn idle_node_queues_vanish() {
    let spec = NodeSpec::new(1, vec![], vec![0]).unwrap();
    let np = NodePrimitives::new(vec![no_arrivals()], vec![Some(service(1.0))]).unwrap();
    let out = solve(&np, &spec).unwrap();
    assert_eq!(out.q[0], PiecewisePath::zero(0.0, T));
    assert_eq!(out.z[0], PiecewisePath::identity(0.0, T));
    assert_eq!(*out.y, PiecewisePath::identity(0.0, T));
}

#[test]
fn non_visiting_class_passes_through() {
    let spec = NodeSpec::new(2, vec![], vec![0]).unwrap();
    let a1 = one_arrival(2.0);
    let np = NodePrimitives::new(vec![one_arrival(1.0), a1.clone()], vec![Some(service(0.5)), None]).unwrap();
    let out = solve(&np, &spec).unwrap();
    assert_eq!(out.d[1], a1);
    assert_eq!(out.z[1], PiecewisePath::identity(0.0, T));
    assert_eq!(out.q[1], PiecewisePath::zero(0.0, T));
}

#[test]
fn high_priority_preempts_low() {
    // low customer (work 1) at 0.25, high customer (work 0.5) at 0.5:
    // the high one leaves at 1.0 and the low one at 1.75 instead of 1.25
    let spec = NodeSpec::new(2, vec![1], vec![0]).unwrap();
    let np = NodePrimitives::new(vec![one_arrival(0.25), one_arrival(0.5)], vec![Some(service(1.0)), Some(service(0.5))]).unwrap();
    let out = solve(&np, &spec).unwrap();
    assert_path(&out.d[1], &[(0.99, 0.0), (1.0, 1.0)]);
    assert_path(&out.d[0], &[(1.74, 0.0), (1.75, 1.0)]);
    assert_path(&out.z[0], &[(0.25, 1.75), (1.0, 1.75), (2.0, 2.0)]);
    assert_path(&out.z[1], &[(0.5, 1.0), (0.7, 1.0), (1.0, 1.0)]);
    assert_path(&out.v, &[(0.5, 0.5), (0.75, 0.25), (1.0, 0.0)]);
    assert_path(&out.w, &[(0.25, 1.0), (0.5, 0.75), (1.0, 0.75), (1.5, 0.25)]);
}

#[test]
fn mass_at_domain_start_counts_as_history() {
    // the value at the window start is the reference level, not an arrival
    let spec = NodeSpec::new(1, vec![], vec![0]).unwrap();
    let a = MonotonePath::new(PiecewisePath::constant(0.0, T, 1.0)).unwrap();
    let np = NodePrimitives::new(vec![a], vec![Some(service(1.0))]).unwrap();
    let out = solve(&np, &spec).unwrap();
    assert_eq!(out.w, PiecewisePath::zero(0.0, T));
}

#[test]
fn fifo_order_between_classes_of_one_group() {
    // two low classes, arrivals at 0 (work 1) and 0.2 (work 1): departures 1.0 and 2.0
    let spec = NodeSpec::new(2, vec![], vec![0, 1]).unwrap();
    let np = NodePrimitives::new(
        vec![one_arrival(0.1), one_arrival(0.2)],
        vec![Some(service(1.0)), Some(service(1.0))],
    )
    .unwrap();
    let out = solve(&np, &spec).unwrap();
    assert_path(&out.d[0], &[(1.09, 0.0), (1.1, 1.0)]);
    assert_path(&out.d[1], &[(2.09, 0.0), (2.1, 1.0)]);
    assert_path(&out.z[0], &[(0.15, 1.1), (0.2, 2.1)]);
}

#[test]
fn ramp_arrivals_depart_as_fluid() {
    // fluid arrivals at rate 1 on [0,1], service rate 2: departures follow arrivals
    let spec = NodeSpec::new(1, vec![], vec![0]).unwrap();
    let a = MonotonePath::new(PiecewisePath::from_vertices(&[(0.0, 0.0), (1.0, 1.0), (T, 1.0)]).unwrap()).unwrap();
    let np = NodePrimitives::new(vec![a], vec![Some(service(0.5))]).unwrap();
    let out = solve(&np, &spec).unwrap();
    assert!(out.w.max_abs() < 1e-12);
    assert!(out.q[0].max_abs() < 1e-12);
    assert!(sup_distance(&out.z[0], &PiecewisePath::identity(0.0, T)).unwrap() < 1e-12);
}

#[test]
fn sojourn_is_capped_at_horizon() {
    let spec = NodeSpec::new(1, vec![], vec![0]).unwrap();
    let np = NodePrimitives::new(vec![one_arrival(3.8)], vec![Some(service(0.5))]).unwrap();
    let out = solve(&np, &spec).unwrap();
    assert_eq!(out.z[0].eval(3.9).unwrap(), T);
    assert_eq!(out.z_valid_until[0], 3.8);
}

#[test]
fn regularity_check() {
    let spec = NodeSpec::new(1, vec![], vec![0]).unwrap();
    let r = |a: f64| DeclaredRates { arrival: vec![a], service: vec![1.0] };
    assert!(check_regular(&spec, &r(0.4)).unwrap());
    assert!(!check_regular(&spec, &r(1.0)).unwrap());
    let two = NodeSpec::new(2, vec![0], vec![1]).unwrap();
    assert!(check_regular(&two, &DeclaredRates { arrival: vec![0.3, 0.6], service: vec![1.0, 1.0] }).unwrap());
    assert!(matches!(
        check_regular(&two, &DeclaredRates { arrival: vec![0.3], service: vec![1.0, 1.0] }),
        Err(Error::Config(_))
    ));
}

#[test]
fn missing_service_is_an_error() {
    let spec = NodeSpec::new(1, vec![], vec![0]).unwrap();
    let np = NodePrimitives::new(vec![one_arrival(1.0)], vec![None]).unwrap();
    assert!(solve(&np, &spec).is_err());
}

#[test]
fn scale_examples() {
    let (spec, np) = high_example();
    let base = solve(&np, &spec).unwrap();
    assert!(checks::scale_residual(&np, &spec, &base, 2.0).unwrap() < 1e-12);
    let (spec, np) = low_example();
    let base = solve(&np, &spec).unwrap();
    assert!(checks::scale_residual(&np, &spec, &base, 0.5).unwrap() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn node_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (spec, np) = random_node(&mut rng, 3, 0.0, 20.0).unwrap();
        let out = solve(&np, &spec).unwrap();
        let r = checks::node_residuals(&np, &spec, &out).unwrap();
        prop_assert!(r.complementarity.iter().all(|&c| c <= 1e-9), "{:?}", r);
        prop_assert!(r.min_v >= -1e-12 && r.min_w >= -1e-12 && r.min_q >= -1e-12, "{:?}", r);
        prop_assert!(r.hidden_idle <= 1e-12 && r.hidden_workload <= 1e-12, "{:?}", r);
        prop_assert!(r.departures_excess <= 1e-12 && r.sojourn_deficit <= 1e-12, "{:?}", r);
        for (j, d) in out.d.iter().enumerate() {
            prop_assert!(d.is_nondecreasing(), "class {}", j);
            prop_assert!(out.z[j].is_nondecreasing(), "class {}", j);
        }
    }

    #[test]
    fn node_homogeneity(seed in any::<u64>(), xi in prop::sample::select(vec![0.5, 2.0, 10.0])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (spec, np) = random_node(&mut rng, 3, 0.0, 20.0).unwrap();
        let out = solve(&np, &spec).unwrap();
        prop_assert!(checks::scale_residual(&np, &spec, &out, xi).unwrap() <= 1e-10);
    }

    #[test]
    fn node_shift_identities(seed in any::<u64>(), frac in 0.05f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (spec, np) = random_node(&mut rng, 3, -10.0, 10.0).unwrap();
        let out = solve(&np, &spec).unwrap();
        let t = -10.0 + 20.0 * frac;
        let r = checks::shift_residuals(&np, &spec, &out, t).unwrap();
        // fluid arrivals can make Z steep; its slope amplifies value rounding
        let steep = out.z.iter().flat_map(|z| z.knots().iter().map(|k| k.slope.abs())).fold(1.0, f64::max);
        prop_assert!(r[..4].iter().all(|&x| x <= 1e-12), "{:?}", r);
        prop_assert!(r[4..].iter().all(|&x| x <= 1e-14 * steep.max(100.0)), "{:?}", r);
    }

    #[test]
    fn empty_time_restart(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (spec, np) = random_node(&mut rng, 3, 0.0, 20.0).unwrap();
        let out = solve(&np, &spec).unwrap();
        let candidates: Vec<f64> = out.y.knots().iter().map(|k| k.t).filter(|&t| t > 0.5 && t < 19.5).collect();
        for t in candidates.into_iter().take(3) {
            if let Some(r) = checks::restart_residual(&np, &spec, &out, t).unwrap() {
                prop_assert!(r <= 1e-12, "t={} r={}", t, r);
            }
        }
    }
}
