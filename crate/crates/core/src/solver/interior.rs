//! Sparse interior-point path for large convex QPs, backed by Clarabel.
//!
//! The dense tableau stays the reference; this path exists because the MPC
//! programs carry several hundred variables and the active-set method can
//! stall on their degenerate vertices.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::{DMatrix, DVector};

use super::{check_dims, QpProblem, SolveResult, SolveStatus};
use crate::error::SolverError;

/// Termination tolerance on gap and feasibility.
pub const INTERIOR_TOL: f64 = 1e-10;

/// Column-compressed copy of the nonzeros of `rows` stacked dense blocks.
fn stacked_csc(blocks: &[(&DMatrix<f64>, f64)], extra: &[(usize, usize, f64)], rows: usize, cols: usize) -> CscMatrix<f64> {
    let mut colptr = Vec::with_capacity(cols + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    let mut extra = extra.to_vec();
    extra.sort_by_key(|&(_, c, _)| c);
    let mut next_extra = 0;
    colptr.push(0);
    for c in 0..cols {
        let mut offset = 0;
        for (block, sign) in blocks {
            for r in 0..block.nrows() {
                let v = block[(r, c)];
                if v != 0.0 {
                    rowval.push(offset + r);
                    nzval.push(sign * v);
                }
            }
            offset += block.nrows();
        }
        while next_extra < extra.len() && extra[next_extra].1 == c {
            let (r, _, v) = extra[next_extra];
            rowval.push(r);
            nzval.push(v);
            next_extra += 1;
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(rows, cols, colptr, rowval, nzval)
}

fn upper_triangle(h: &DMatrix<f64>) -> CscMatrix<f64> {
    let n = h.nrows();
    let mut colptr = vec![0];
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    for c in 0..n {
        for r in 0..=c {
            let v = 0.5 * (h[(r, c)] + h[(c, r)]);
            if v != 0.0 {
                rowval.push(r);
                nzval.push(v);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(n, n, colptr, rowval, nzval)
}

/// Solves a convex QP with a primal-dual interior-point method.
///
/// Statuses map as: solved (also at reduced accuracy) to `Optimal`, primal
/// infeasible to `Infeasible`, dual infeasible to `Unbounded`, the iteration
/// cap to `MaxIter`. Anything else is a `NumericalFailure`. Duals follow the
/// same sign convention as the dense path.
pub fn solve_qp_interior(p: &QpProblem) -> Result<SolveResult, SolverError> {
    let n = p.f.len();
    check_dims(n, &p.a_ub, &p.b_ub, &p.a_eq, &p.b_eq, &p.lower)?;
    if p.hq.shape() != (n, n) {
        return Err(SolverError::DimensionMismatch(format!("H is {:?}, expected {n} x {n}", p.hq.shape())));
    }
    if p.f.iter().chain(p.hq.iter()).any(|v| !v.is_finite()) {
        return Err(SolverError::NumericalFailure("non-finite cost".into()));
    }
    let (n_ub, n_eq) = (p.a_ub.nrows(), p.a_eq.nrows());
    let bounded: Vec<usize> = (0..n).filter(|&j| p.lower[j].is_finite()).collect();
    let rows = n_eq + n_ub + bounded.len();
    let extra: Vec<(usize, usize, f64)> = bounded.iter().enumerate().map(|(k, &j)| (n_eq + n_ub + k, j, -1.0)).collect();
    let a = stacked_csc(&[(&p.a_eq, 1.0), (&p.a_ub, 1.0)], &extra, rows, n);
    let mut b: Vec<f64> = p.b_eq.iter().chain(p.b_ub.iter()).copied().collect();
    b.extend(bounded.iter().map(|&j| -p.lower[j]));
    let mut cones = Vec::new();
    if n_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_eq));
    }
    if n_ub + bounded.len() > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_ub + bounded.len()));
    }
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(INTERIOR_TOL)
        .tol_gap_rel(INTERIOR_TOL)
        .tol_feas(INTERIOR_TOL)
        .build()
        .map_err(|e| SolverError::NumericalFailure(format!("interior-point settings: {e}")))?;
    let f: Vec<f64> = p.f.iter().copied().collect();
    let mut solver = DefaultSolver::new(&upper_triangle(&p.hq), &f, &a, &b, &cones, settings)
        .map_err(|e| SolverError::NumericalFailure(format!("interior-point setup: {e}")))?;
    solver.solve();
    let sol = &solver.solution;
    let iterations = sol.iterations as usize;
    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        SolverStatus::MaxIterations => SolveStatus::MaxIter,
        other => {
            return Err(SolverError::NumericalFailure(format!(
                "interior-point method stopped with {other:?} after {iterations} iterations"
            )))
        }
    };
    if status != SolveStatus::Optimal {
        return Ok(SolveResult::failed(status, n, n_ub, n_eq, iterations));
    }
    let x = DVector::from_column_slice(&sol.x);
    let objective = p.objective(&x);
    Ok(SolveResult {
        status,
        primal: x,
        dual_ub: DVector::from_column_slice(&sol.z[n_eq..n_eq + n_ub]),
        dual_eq: DVector::from_column_slice(&sol.z[..n_eq]),
        objective,
        iterations,
    })
}
