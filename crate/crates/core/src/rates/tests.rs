use super::*;
use crate::network::NetworkSpec;
use crate::node::NodeSpec;
use crate::pathcalc::Knot;
use crate::reflection::build_critical;
use crate::harness::instances::random_continuous;
use proptest::prelude::*;

fn ramp(c: f64, t1: f64) -> PiecewisePath {
    PiecewisePath::linear(0.0, t1, 0.0, c)
}

fn one_d(zeta: f64, v: f64, b: f64) -> VariationalProblem {
    VariationalProblem::new(0, b, vec![zeta], DMatrix::from_element(1, 1, v), DMatrix::identity(1, 1))
}

fn single_queue() -> CriticalData {
    let spec = NetworkSpec::new(1, vec![NodeSpec::new(1, vec![], vec![0]).unwrap()]).unwrap();
    build_critical(&spec, &[1.0], &[vec![1.0]], &[0.0], &[vec![1.0]]).unwrap()
}

fn tandem(u2: f64) -> (CriticalData, CovarianceData) {
    let node = NodeSpec::new(1, vec![], vec![0]).unwrap();
    let spec = NetworkSpec::new(1, vec![node.clone(), node]).unwrap();
    let cd = build_critical(&spec, &[1.0], &[vec![1.0], vec![1.0]], &[0.0], &[vec![1.0], vec![1.0]]).unwrap();
    let cov = build_covariance(&cd, &[u2], &[vec![1.0], vec![2.0]]).unwrap();
    (cd, cov)
}

#[test]
fn i_brown_examples() {
    assert_eq!(i_brown(&ramp(3.0, 2.0)), 9.0);
    assert_eq!(i_brown(&PiecewisePath::zero(0.0, 4.0)), 0.0);
    assert_eq!(i_brown(&PiecewisePath::steps(0.0, 2.0, 0.0, &[(1.0, 0.5)]).unwrap()), f64::INFINITY);
    assert_eq!(i_brown(&PiecewisePath::constant(0.0, 1.0, 1.0)), f64::INFINITY);
    let v = PiecewisePath::from_vertices(&[(0.0, 0.0), (1.0, 2.0), (3.0, 0.0)]).unwrap();
    assert_eq!(i_brown(&v), 4.0 / 2.0 + 2.0 / 2.0);
    // anchored at time 0 inside a warm-up window
    let w = PiecewisePath::from_vertices(&[(-1.0, -1.0), (0.0, 0.0), (1.0, 1.0)]).unwrap();
    assert_eq!(i_brown(&w), 1.0);
}

#[test]
fn i_renewal_examples() {
    let cd = single_queue();
    let cov = build_covariance(&cd, &[1.0], &[vec![1.0]]).unwrap();
    let zero = vec![PiecewisePath::zero(0.0, 1.0)];
    let szero = vec![vec![Some(PiecewisePath::zero(0.0, 1.0))]];
    assert_eq!(i_renewal(&zero, &szero, &cd, &cov).unwrap(), 0.0);
    assert_eq!(i_renewal(&[ramp(1.0, 1.0)], &szero, &cd, &cov).unwrap(), 0.5);

    let degenerate = build_covariance(&cd, &[0.0], &[vec![1.0]]).unwrap();
    assert_eq!(i_renewal(&[ramp(1.0, 1.0)], &szero, &cd, &degenerate).unwrap(), f64::INFINITY);
    assert_eq!(i_renewal(&zero, &szero, &cd, &degenerate).unwrap(), 0.0);
    assert!(i_renewal(&zero, &[vec![None]], &cd, &cov).is_err());
}

#[test]
fn i_renewal_weights_rates() {
    // α = 2 and σ = 2 with variances 4 and 8: α³/u² = 2, σ³/v² = 1
    let spec = NetworkSpec::new(1, vec![NodeSpec::new(1, vec![], vec![0]).unwrap()]).unwrap();
    let cd = build_critical(&spec, &[2.0], &[vec![2.0]], &[0.0], &[vec![0.0]]).unwrap();
    let cov = build_covariance(&cd, &[4.0], &[vec![8.0]]).unwrap();
    let r = i_renewal(&[ramp(1.0, 1.0)], &[vec![Some(ramp(2.0, 1.0))]], &cd, &cov).unwrap();
    assert_eq!(r, 2.0 * 0.5 + 1.0 * 2.0);
}

#[test]
fn i_v_brown_examples() {
    let x = vec![ramp(1.0, 1.0), PiecewisePath::zero(0.0, 1.0)];
    assert!((i_v_brown(&x, &DMatrix::identity(2, 2)).unwrap() - 0.5).abs() < 1e-15);
    let degenerate = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]));
    assert_eq!(i_v_brown(&[ramp(1.0, 1.0), ramp(1.0, 1.0)], &degenerate).unwrap(), f64::INFINITY);
    assert_eq!(i_v_brown(&[PiecewisePath::zero(0.0, 1.0), ramp(1.0, 1.0)], &degenerate).unwrap(), 0.5);
    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(matches!(i_v_brown(&x, &bad), Err(Error::Config(_))));
    let jumpy = vec![PiecewisePath::steps(0.0, 1.0, 0.0, &[(0.5, 1.0)]).unwrap(), PiecewisePath::zero(0.0, 1.0)];
    assert_eq!(i_v_brown(&jumpy, &DMatrix::identity(2, 2)).unwrap(), f64::INFINITY);
}

#[test]
fn i_v_brown_matches_direct_inverse() {
    let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let inv = v.clone().cholesky().unwrap().inverse();
    let x = vec![
        PiecewisePath::from_vertices(&[(0.0, 0.0), (1.0, 1.0), (3.0, 0.0)]).unwrap(),
        PiecewisePath::from_vertices(&[(0.0, 0.0), (2.0, 2.0), (3.0, 1.0)]).unwrap(),
    ];
    // slopes (1, 1) on [0,1], (−½, 1) on [1,2], (−½, −1) on [2,3]
    let q = |a: f64, b: f64| {
        let d = DVector::from_vec(vec![a, b]);
        (d.transpose() * &inv * &d)[(0, 0)] / 2.0
    };
    let expect = q(1.0, 1.0) + q(-0.5, 1.0) + q(-0.5, -1.0);
    assert!((i_v_brown(&x, &v).unwrap() - expect).abs() < 1e-13);
}

#[test]
fn covariance_examples() {
    let cd = single_queue();
    let cov = build_covariance(&cd, &[1.0], &[vec![1.0]]).unwrap();
    assert_eq!(cov.u, DMatrix::from_element(1, 1, 2.0));
    assert_eq!(cov.v, DMatrix::from_element(1, 1, 2.0));

    let (_, cov) = tandem(0.5);
    assert_eq!(cov.u, DMatrix::from_row_slice(2, 2, &[1.5, 0.5, 0.5, 2.5]));
    assert_eq!(cov.v, DMatrix::from_row_slice(2, 2, &[1.5, -1.0, -1.0, 3.0]));

    let n1 = NodeSpec::new(2, vec![], vec![0]).unwrap();
    let n2 = NodeSpec::new(2, vec![], vec![1]).unwrap();
    let spec = NetworkSpec::new(2, vec![n1, n2]).unwrap();
    let cd = build_critical(&spec, &[1.0, 2.0], &[vec![1.0, 0.0], vec![0.0, 2.0]], &[0.0; 2], &[vec![0.0; 2], vec![0.0; 2]]).unwrap();
    let cov = build_covariance(&cd, &[1.0, 1.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert_eq!(cov.u[(0, 1)], 0.0);
    assert_eq!(cov.u[(1, 0)], 0.0);
    assert!(build_covariance(&cd, &[1.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).is_err());
}

#[test]
fn oracle_examples() {
    assert!((oracle_rate_1d(1.0, 2.0, 1.0) - 1.0).abs() < 0.01);
    assert_eq!(oracle_rate_1d(1.0, 2.0, 0.0), 0.0);
    let one = oracle_rate_1d(0.7, 1.3, 1.0);
    let two = oracle_rate_1d(0.7, 1.3, 2.0);
    assert!((two / one - 2.0).abs() < 0.01);
}

#[test]
fn variational_matches_closed_form() {
    let res = variational_rate(&one_d(1.0, 2.0, 1.0)).unwrap();
    assert!((res.rate - 1.0).abs() < 0.02, "{}", res.rate);
    assert!(res.terminal >= 1.0 - 1e-9);
    // the reported rate is the action of the reported path
    assert!((i_v_brown(&res.z, &DMatrix::from_element(1, 1, 2.0)).unwrap() - res.rate).abs() < 1e-9 * res.rate);
}

#[test]
fn variational_zero_level_and_monotonicity() {
    let res = variational_rate(&one_d(1.0, 2.0, 0.0)).unwrap();
    assert_eq!(res.rate, 0.0);
    assert_eq!(res.z[0].max_abs(), 0.0);
    let mut p1 = one_d(0.5, 1.0, 1.0);
    let mut p2 = one_d(0.5, 1.0, 2.0);
    // common horizon so the feasible sets are nested
    p1.horizon = p2.horizon;
    p1.cells = 64;
    p2.cells = 64;
    let r1 = variational_rate(&p1).unwrap().rate;
    let r2 = variational_rate(&p2).unwrap().rate;
    assert!(r2 >= r1);
}

#[test]
fn refinement_never_increases_rate() {
    let mut coarse = one_d(2.0, 0.5, 1.0);
    coarse.cells = 8;
    coarse.refine = false;
    let mut fine = coarse.clone();
    fine.refine = true;
    assert!(variational_rate(&fine).unwrap().rate <= variational_rate(&coarse).unwrap().rate);
}

#[test]
fn decoupled_nodes_reduce_to_one_dimension() {
    let v = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5]));
    let vp = VariationalProblem::new(1, 1.0, vec![2.0, 1.0], v, DMatrix::identity(2, 2));
    let res = variational_rate(&vp).unwrap();
    let expect = 2.0 * 1.0 * 1.0 / 0.5;
    assert!((res.rate - expect).abs() < 0.02 * expect, "{}", res.rate);
}

#[test]
fn tandem_rate_is_feasible_and_consistent() {
    let (cd, cov) = tandem(1.0);
    let vp = VariationalProblem::for_network(&cd, &cov, 1, 1.0);
    let res = variational_rate(&vp).unwrap();
    assert!(res.rate.is_finite() && res.rate > 0.0);
    let net: Vec<PiecewisePath> =
        res.z.iter().zip(&cd.zeta_tilde).map(|(p, &c)| p.sub(&ramp(c, vp.horizon)).unwrap()).collect();
    let w = skorokhod_phi(&net, &cd.r).unwrap().w;
    assert!(w[1].end_value() >= 1.0 - 1e-9);
    assert!((i_v_brown(&res.z, &cov.v).unwrap() - res.rate).abs() < 1e-9 * res.rate);
}

#[test]
fn unreachable_level_is_infinite() {
    let vp = VariationalProblem::new(0, 1.0, vec![1.0], DMatrix::zeros(1, 1), DMatrix::identity(1, 1));
    let res = variational_rate(&vp).unwrap();
    assert_eq!(res.rate, f64::INFINITY);
    assert!(!res.diagnostics.is_empty());
}

#[test]
fn invalid_problem_is_config_error() {
    let mut vp = one_d(1.0, 1.0, 1.0);
    vp.cells = 1;
    assert!(matches!(variational_rate(&vp), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn rate_functions_are_quadratic(seed in any::<u64>(), c in 0.1f64..5.0) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = random_continuous(&mut rng, 3.0, 6, 2.0);
        let y = random_continuous(&mut rng, 3.0, 6, 2.0);
        let base = i_brown(&x);
        prop_assert!((i_brown(&x.scale(c)) - c * c * base).abs() <= 1e-12 * c * c * base.max(1.0));
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let iv = i_v_brown(&[x.clone(), y.clone()], &v).unwrap();
        let ivc = i_v_brown(&[x.scale(c), y.scale(c)], &v).unwrap();
        prop_assert!((ivc - c * c * iv).abs() <= 1e-10 * c * c * iv.max(1.0));
        let scalar = 1.7;
        let diag = DMatrix::identity(2, 2) * scalar;
        let sum = (i_brown(&x) + i_brown(&y)) / scalar;
        prop_assert!((i_v_brown(&[x, y], &diag).unwrap() - sum).abs() <= 1e-12 * sum.max(1.0));
    }
}

#[test]
fn knots_with_jump_at_end_are_discontinuous() {
    let p = PiecewisePath::new(0.0, 1.0, vec![Knot::new(0.0, 0.0, 1.0), Knot::new(1.0, 3.0, 0.0)]).unwrap();
    assert_eq!(i_brown(&p), f64::INFINITY);
}
