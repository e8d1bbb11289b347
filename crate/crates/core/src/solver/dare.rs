use nalgebra::DMatrix;

use crate::error::SolverError;
use crate::tolerance::Tolerances;

/// Infinite-horizon LQR solution: `u = K x` with cost-to-go `x' P_f x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lqr {
    pub k: DMatrix<f64>,
    pub p_f: DMatrix<f64>,
    pub iterations: usize,
}

/// Solves `P = Q + A'PA - A'PB (R + B'PB)^-1 B'PA` by fixed-point iteration
/// from `P = Q` and returns `K = -(R + B'PB)^-1 B'PA`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<Lqr, SolverError> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(SolverError::DimensionMismatch(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    let gain = |p: &DMatrix<f64>| -> Result<DMatrix<f64>, SolverError> {
        let s = r + b.transpose() * p * b;
        let rhs = b.transpose() * p * a;
        s.lu()
            .solve(&rhs)
            .map(|x| -x)
            .ok_or_else(|| SolverError::NumericalFailure("R + B'PB is singular".into()))
    };
    let mut p = q.clone();
    let mut change = f64::INFINITY;
    for it in 1..=tol.riccati_max_iterations {
        let k = gain(&p)?;
        // A'PA + A'PB K equals the subtracted Riccati term with K substituted.
        let mut next = q + a.transpose() * &p * a + a.transpose() * &p * b * &k;
        next = (&next + next.transpose()) * 0.5;
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        change = (&next - &p).amax();
        p = next;
        if change <= tol.riccati * (1.0 + p.amax()) {
            let k = gain(&p)?;
            return Ok(Lqr { k, p_f: p, iterations: it });
        }
    }
    Err(SolverError::NoConvergence {
        iterations: tol.riccati_max_iterations,
        last_change: change,
    })
}

/// Solves `Acl' P Acl - P = -Q` for a Schur-stable `Acl` through the
/// Kronecker form `(I - Acl' (x) Acl') vec(P) = vec(Q)`.
pub fn solve_lyapunov(acl: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, SolverError> {
    let n = acl.nrows();
    if acl.ncols() != n || q.shape() != (n, n) {
        return Err(SolverError::DimensionMismatch(format!(
            "Acl {:?}, Q {:?}",
            acl.shape(),
            q.shape()
        )));
    }
    let at = acl.transpose();
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - at.kronecker(&at);
    let rhs = nalgebra::DVector::from_column_slice(q.as_slice());
    let vec_p = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| SolverError::NumericalFailure("closed loop has an eigenvalue pair on the unit circle".into()))?;
    let p = DMatrix::from_column_slice(n, n, vec_p.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}
