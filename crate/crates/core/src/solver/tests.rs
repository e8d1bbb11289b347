use super::*;
use approx::assert_relative_eq;
use nalgebra::{dmatrix, dvector};
use proptest::prelude::*;

fn box_rows(n: usize, lo: f64, hi: f64) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(2 * n, n);
    let mut b = DVector::zeros(2 * n);
    for i in 0..n {
        a[(2 * i, i)] = 1.0;
        b[2 * i] = hi;
        a[(2 * i + 1, i)] = -1.0;
        b[2 * i + 1] = -lo;
    }
    (a, b)
}

#[test]
fn lp_interval_maximum() {
    let p = LpProblem::new(dvector![-1.0], dmatrix![1.0; -1.0], dvector![1.0, 1.0]);
    let r = solve_lp(&p).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert_relative_eq!(r.primal[0], 1.0, epsilon = 1e-12);
    assert_relative_eq!(r.objective, -1.0, epsilon = 1e-12);
    assert_relative_eq!(r.dual_ub[0], 1.0, epsilon = 1e-12);
    assert_relative_eq!(r.dual_ub[1], 0.0, epsilon = 1e-12);
}

#[test]
fn lp_rate_box_minimum() {
    let (a, b) = box_rows(2, -0.05, 0.05);
    let p = LpProblem::new(dvector![1.0, 0.0], a, b);
    let r = solve_lp(&p).unwrap();
    assert_relative_eq!(r.objective, -0.05, epsilon = 1e-12);
}

#[test]
fn lp_infeasible_pair() {
    let p = LpProblem::new(dvector![0.0], dmatrix![1.0; -1.0], dvector![0.0, -1.0]);
    assert_eq!(solve_lp(&p).unwrap().status, SolveStatus::Infeasible);
}

#[test]
fn lp_unbounded_ray() {
    let p = LpProblem::new(dvector![-1.0, 0.0], dmatrix![0.0, 1.0], dvector![1.0]);
    assert_eq!(solve_lp(&p).unwrap().status, SolveStatus::Unbounded);
}

#[test]
fn lp_equality_and_bounds() {
    // min x + 2y  s.t. x + y = 1, x, y >= 0  ->  (1, 0)
    let p = LpProblem::new(dvector![1.0, 2.0], DMatrix::zeros(0, 2), DVector::zeros(0))
        .with_eq(dmatrix![1.0, 1.0], dvector![1.0])
        .with_lower(vec![0.0, 0.0]);
    let r = solve_lp(&p).unwrap();
    assert_relative_eq!(r.primal, dvector![1.0, 0.0], epsilon = 1e-12);
    assert_relative_eq!(r.dual_eq[0], -1.0, epsilon = 1e-12);
}

#[test]
fn lp_shifted_lower_bound() {
    let p = LpProblem::new(dvector![1.0], DMatrix::zeros(0, 1), DVector::zeros(0)).with_lower(vec![-3.0]);
    let r = solve_lp(&p).unwrap();
    assert_relative_eq!(r.primal[0], -3.0);
}

#[test]
fn lp_redundant_equalities() {
    let p = LpProblem::new(dvector![1.0, 1.0], DMatrix::zeros(0, 2), DVector::zeros(0))
        .with_eq(dmatrix![1.0, -1.0; 2.0, -2.0], dvector![0.5, 1.0])
        .with_lower(vec![0.0, 0.0]);
    let r = solve_lp(&p).unwrap();
    assert_relative_eq!(r.primal, dvector![0.5, 0.0], epsilon = 1e-12);
}

#[test]
fn lp_dimension_mismatch() {
    let p = LpProblem::new(dvector![1.0, 2.0], dmatrix![1.0], dvector![1.0]);
    assert!(matches!(solve_lp(&p), Err(SolverError::DimensionMismatch(_))));
}

#[test]
fn qp_scalar_lower_bound() {
    // min z^2 s.t. z >= 1
    let p = QpProblem::new(dmatrix![2.0], dvector![0.0], dmatrix![-1.0], dvector![-1.0]);
    let r = solve_qp(&p).unwrap();
    assert_relative_eq!(r.primal[0], 1.0, epsilon = 1e-10);
    assert_relative_eq!(r.dual_ub[0], 2.0, epsilon = 1e-10);
}

#[test]
fn qp_projection_onto_box() {
    let (a, b) = box_rows(2, -1.0, 1.0);
    let p = QpProblem::new(DMatrix::identity(2, 2) * 2.0, dvector![-4.0, 0.0], a, b);
    let r = solve_qp(&p).unwrap();
    assert_relative_eq!(r.primal, dvector![1.0, 0.0], epsilon = 1e-10);
}

#[test]
fn qp_projection_onto_offset_box_matches_clip() {
    let (a, b) = box_rows(2, -0.5, 0.5);
    let target = dvector![0.7, 0.2];
    let p = QpProblem::new(DMatrix::identity(2, 2) * 2.0, -2.0 * &target, a, b);
    let r = solve_qp(&p).unwrap();
    let clipped = target.map(|v: f64| v.clamp(-0.5, 0.5));
    assert_relative_eq!(r.primal, clipped, epsilon = 1e-10);
}

#[test]
fn qp_unconstrained_minimum_interior() {
    let (a, b) = box_rows(3, -10.0, 10.0);
    let h = dmatrix![4.0, 1.0, 0.0; 1.0, 3.0, 0.5; 0.0, 0.5, 2.0];
    let f = dvector![1.0, -2.0, 0.5];
    let r = solve_qp(&QpProblem::new(h.clone(), f.clone(), a, b)).unwrap();
    let expect = -h.lu().solve(&f).unwrap();
    assert_relative_eq!(r.primal, expect, epsilon = 1e-9);
}

#[test]
fn qp_with_linear_only_variables() {
    // min x^2 + y  s.t. y >= 1 - x, y >= 0: optimum x = 1/2, y = 1/2.
    let p = QpProblem::new(
        dmatrix![2.0, 0.0; 0.0, 0.0],
        dvector![0.0, 1.0],
        dmatrix![-1.0, -1.0; 0.0, -1.0],
        dvector![-1.0, 0.0],
    );
    let r = solve_qp(&p).unwrap();
    assert_relative_eq!(r.primal, dvector![0.5, 0.5], epsilon = 1e-10);
}

#[test]
fn qp_rejects_asymmetric_hessian() {
    let p = QpProblem::new(dmatrix![1.0, 1.0; 0.0, 1.0], dvector![0.0, 0.0], DMatrix::zeros(0, 2), DVector::zeros(0));
    assert!(solve_qp(&p).is_err());
}

#[test]
fn qp_infeasible() {
    let p = QpProblem::new(dmatrix![2.0], dvector![0.0], dmatrix![1.0; -1.0], dvector![0.0, -1.0]);
    assert_eq!(solve_qp(&p).unwrap().status, SolveStatus::Infeasible);
}

/// Fixed-point oracle for the scalar Riccati equation.
fn scalar_riccati(a: f64, b: f64, q: f64, r: f64) -> f64 {
    let mut p = q;
    for _ in 0..100_000 {
        let next = q + a * a * p - (a * p * b).powi(2) / (r + b * b * p);
        if (next - p).abs() < 1e-15 {
            return next;
        }
        p = next;
    }
    p
}

fn riccati_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let s = r + b.transpose() * p * b;
    let t = b.transpose() * p * a;
    let rhs = q + a.transpose() * p * a - t.transpose() * s.try_inverse().unwrap() * &t;
    (rhs - p).amax()
}

#[test]
fn dare_scalar_matches_fixed_point() {
    let (a, b, q, r) = (dmatrix![0.5], dmatrix![1.0], dmatrix![1.0], dmatrix![1.0]);
    let lqr = solve_dare(&a, &b, &q, &r, &TOL).unwrap();
    assert_relative_eq!(lqr.p_f[(0, 0)], scalar_riccati(0.5, 1.0, 1.0, 1.0), epsilon = 1e-10);
    assert!(riccati_residual(&a, &b, &q, &r, &lqr.p_f) <= 1e-9);
}

#[test]
fn dare_benchmark_is_stabilizing() {
    let a = dmatrix![1.2, 1.5; 0.0, 1.3];
    let b = dmatrix![0.0; 1.0];
    let q = DMatrix::identity(2, 2);
    let r = dmatrix![10.0];
    let lqr = solve_dare(&a, &b, &q, &r, &TOL).unwrap();
    assert!(riccati_residual(&a, &b, &q, &r, &lqr.p_f) <= 1e-9);
    let acl = &a + &b * &lqr.k;
    let rho = acl.complex_eigenvalues().iter().fold(0.0f64, |m, e| m.max(e.norm()));
    assert!(rho < 1.0, "spectral radius {rho}");
    // Closed-loop Lyapunov identity.
    let lyap = acl.transpose() * &lqr.p_f * &acl - &lqr.p_f + &q + lqr.k.transpose() * &r * &lqr.k;
    assert!(lyap.amax() <= 1e-8, "{}", lyap.amax());
}

#[test]
fn dare_without_input_is_lyapunov() {
    let a = dmatrix![0.5, 0.1; 0.0, 0.3];
    let b = DMatrix::zeros(2, 1);
    let q = DMatrix::identity(2, 2);
    let r = dmatrix![1.0];
    let lqr = solve_dare(&a, &b, &q, &r, &TOL).unwrap();
    assert_eq!(lqr.k.amax(), 0.0);
    let lyap = a.transpose() * &lqr.p_f * &a - &lqr.p_f + &q;
    assert!(lyap.amax() <= 1e-9);
}

#[test]
fn lyapunov_matches_riccati_cost() {
    let a = dmatrix![1.2, 1.5; 0.0, 1.3];
    let b = dmatrix![0.0; 1.0];
    let q = DMatrix::identity(2, 2);
    let r = dmatrix![10.0];
    let lqr = solve_dare(&a, &b, &q, &r, &TOL).unwrap();
    let acl = &a + &b * &lqr.k;
    let p = solve_lyapunov(&acl, &(&q + lqr.k.transpose() * &r * &lqr.k)).unwrap();
    assert!((&p - &lqr.p_f).amax() <= 1e-8 * lqr.p_f.amax());
    let scalar = solve_lyapunov(&dmatrix![0.5], &dmatrix![1.0]).unwrap();
    assert_relative_eq!(scalar[(0, 0)], 1.0 / 0.75, epsilon = 1e-14);
}

#[test]
fn dare_unstabilizable_fails() {
    let a = dmatrix![2.0];
    let b = dmatrix![0.0];
    let err = solve_dare(&a, &b, &dmatrix![1.0], &dmatrix![1.0], &TOL).unwrap_err();
    assert!(matches!(err, SolverError::NoConvergence { .. }));
}

fn random_polytope_lp() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    (2usize..5, 3usize..9).prop_flat_map(|(n, extra)| {
        (
            proptest::collection::vec(-1.0f64..1.0, extra * n),
            proptest::collection::vec(0.1f64..2.0, extra),
            proptest::collection::vec(-1.0f64..1.0, n),
        )
            .prop_map(move |(a, b, c)| {
                // Box keeps the LP bounded; extra rows cut it.
                let (bx, bb) = box_rows(n, -3.0, 3.0);
                let extra_a = DMatrix::from_row_slice(extra, n, &a);
                let mut a_all = DMatrix::zeros(2 * n + extra, n);
                a_all.rows_mut(0, 2 * n).copy_from(&bx);
                a_all.rows_mut(2 * n, extra).copy_from(&extra_a);
                let mut b_all = DVector::zeros(2 * n + extra);
                b_all.rows_mut(0, 2 * n).copy_from(&bb);
                b_all.rows_mut(2 * n, extra).copy_from(&DVector::from_vec(b));
                (a_all, b_all, DVector::from_vec(c))
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lp_strong_duality((a, b, c) in random_polytope_lp()) {
        let r = solve_lp(&LpProblem::new(c.clone(), a.clone(), b.clone())).unwrap();
        prop_assert_eq!(r.status, SolveStatus::Optimal);
        let slack = &b - &a * &r.primal;
        prop_assert!(slack.min() >= -1e-8);
        prop_assert!(r.dual_ub.min() >= -1e-8);
        prop_assert!((r.objective + b.dot(&r.dual_ub)).abs() <= 1e-6);
        // Stationarity and complementary slackness.
        let stat = &c + a.transpose() * &r.dual_ub;
        prop_assert!(stat.amax() <= 1e-8);
        prop_assert!(slack.component_mul(&r.dual_ub).amax() <= 1e-6);
    }

    #[test]
    fn qp_beats_random_feasible_points(
        (a, b, c) in random_polytope_lp(),
        seed in proptest::collection::vec(-1.0f64..1.0, 16),
        samples in proptest::collection::vec(-3.0f64..3.0, 2000),
    ) {
        let n = c.len();
        let l = DMatrix::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()]);
        let h = &l * l.transpose() + DMatrix::identity(n, n) * 1e-3;
        let p = QpProblem::new(h, c, a.clone(), b.clone());
        let r = solve_qp(&p).unwrap();
        prop_assert_eq!(r.status, SolveStatus::Optimal);
        prop_assert!((&b - &a * &r.primal).min() >= -1e-8);
        let stat = &p.hq * &r.primal + &p.f + a.transpose() * &r.dual_ub;
        prop_assert!(stat.amax() <= 1e-6, "stationarity {}", stat.amax());
        let best = r.objective;
        for chunk in samples.chunks(n) {
            if chunk.len() < n { break; }
            let z = DVector::from_column_slice(chunk);
            if (&b - &a * &z).min() >= 0.0 {
                prop_assert!(best <= p.objective(&z) + 1e-8);
            }
        }
    }
}
