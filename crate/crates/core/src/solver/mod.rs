//! Dense LP and convex QP solvers and the discrete algebraic Riccati equation.
//!
//! Both programs are written as
//!
//! ```text
//! minimize    1/2 x' H x + f' x
//! subject to  A_ub x <= b_ub,  A_eq x = b_eq,  x >= lower
//! ```
//!
//! where `lower` defaults to `-inf` (free variables). The LP path runs a
//! two-phase tableau simplex; the QP path runs the same phase one and then a
//! reduced-gradient active-set method on the resulting basis. Large QPs can
//! go through [`solve_qp_interior`] instead.

mod dare;
mod interior;
mod tableau;

pub use dare::{solve_dare, solve_lyapunov, Lqr};
pub use interior::{solve_qp_interior, INTERIOR_TOL};
pub use tableau::PricingRule;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::tolerance::{Tolerances, TOL};
use tableau::{PhaseOne, QpOutcome, QuadForm, SimplexOutcome, Tableau};

/// Linear program `min c'x` over `A_ub x <= b_ub, A_eq x = b_eq, x >= lower`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub c: DVector<f64>,
    pub a_ub: DMatrix<f64>,
    pub b_ub: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    /// Per-variable lower bounds; `-inf` marks a free variable.
    pub lower: Vec<f64>,
}

impl LpProblem {
    /// LP with free variables and no equality constraints.
    pub fn new(c: DVector<f64>, a_ub: DMatrix<f64>, b_ub: DVector<f64>) -> Self {
        let n = c.len();
        Self {
            c,
            a_ub,
            b_ub,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            lower: vec![f64::NEG_INFINITY; n],
        }
    }

    pub fn with_eq(mut self, a_eq: DMatrix<f64>, b_eq: DVector<f64>) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    pub fn with_lower(mut self, lower: Vec<f64>) -> Self {
        self.lower = lower;
        self
    }
}

/// Convex quadratic program `min 1/2 x'Hq x + f'x` under the same constraints
/// as [`LpProblem`].
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hq: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_ub: DMatrix<f64>,
    pub b_ub: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lower: Vec<f64>,
}

impl QpProblem {
    pub fn new(hq: DMatrix<f64>, f: DVector<f64>, a_ub: DMatrix<f64>, b_ub: DVector<f64>) -> Self {
        let n = f.len();
        Self {
            hq,
            f,
            a_ub,
            b_ub,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            lower: vec![f64::NEG_INFINITY; n],
        }
    }

    pub fn with_eq(mut self, a_eq: DMatrix<f64>, b_eq: DVector<f64>) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    pub fn with_lower(mut self, lower: Vec<f64>) -> Self {
        self.lower = lower;
        self
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hq * x)) + self.f.dot(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

/// Solver output. `primal`, the duals, and `objective` are meaningful only
/// when `status` is `Optimal`.
///
/// Duals follow the Lagrangian convention `grad f + A_ub' y_ub + A_eq' y_eq = 0`
/// on the free variables, so `dual_ub >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub primal: DVector<f64>,
    pub dual_ub: DVector<f64>,
    pub dual_eq: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl SolveResult {
    fn failed(status: SolveStatus, n: usize, n_ub: usize, n_eq: usize, iterations: usize) -> Self {
        Self {
            status,
            primal: DVector::zeros(n),
            dual_ub: DVector::zeros(n_ub),
            dual_eq: DVector::zeros(n_eq),
            objective: f64::NAN,
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Converts a non-optimal status into the corresponding error.
    pub fn require_optimal(self) -> Result<Self, SolverError> {
        match self.status {
            SolveStatus::Optimal => Ok(self),
            SolveStatus::Infeasible => Err(SolverError::Infeasible),
            SolveStatus::Unbounded => Err(SolverError::Unbounded),
            SolveStatus::MaxIter => Err(SolverError::NumericalFailure(format!(
                "iteration cap reached after {} iterations",
                self.iterations
            ))),
        }
    }
}

/// Knobs shared by both solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub rule: PricingRule,
    pub tol: Tolerances,
    /// Overrides the default iteration cap.
    pub max_iter: Option<usize>,
    pub compute_duals: bool,
}

impl SolverSettings {
    pub const LP: SolverSettings = SolverSettings {
        rule: PricingRule::Bland,
        tol: TOL,
        max_iter: None,
        compute_duals: true,
    };
    pub const QP: SolverSettings = SolverSettings {
        rule: PricingRule::Dantzig,
        tol: TOL,
        max_iter: None,
        compute_duals: true,
    };
}

fn check_dims(
    n: usize,
    a_ub: &DMatrix<f64>,
    b_ub: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    lower: &[f64],
) -> Result<(), SolverError> {
    let err = |m: String| Err(SolverError::DimensionMismatch(m));
    if a_ub.ncols() != n {
        return err(format!("A_ub has {} columns, expected {n}", a_ub.ncols()));
    }
    if a_eq.ncols() != n {
        return err(format!("A_eq has {} columns, expected {n}", a_eq.ncols()));
    }
    if a_ub.nrows() != b_ub.len() {
        return err(format!("A_ub has {} rows but b_ub has {}", a_ub.nrows(), b_ub.len()));
    }
    if a_eq.nrows() != b_eq.len() {
        return err(format!("A_eq has {} rows but b_eq has {}", a_eq.nrows(), b_eq.len()));
    }
    if lower.len() != n {
        return err(format!("lower has {} entries, expected {n}", lower.len()));
    }
    let finite = a_ub.iter().chain(b_ub.iter()).chain(a_eq.iter()).chain(b_eq.iter());
    if finite.into_iter().any(|v| !v.is_finite()) || lower.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(SolverError::NumericalFailure("non-finite problem data".into()));
    }
    Ok(())
}

/// Solves an LP with Bland's rule.
pub fn solve_lp(p: &LpProblem) -> Result<SolveResult, SolverError> {
    solve_lp_with(p, &SolverSettings::LP)
}

pub fn solve_lp_with(p: &LpProblem, s: &SolverSettings) -> Result<SolveResult, SolverError> {
    let n = p.c.len();
    check_dims(n, &p.a_ub, &p.b_ub, &p.a_eq, &p.b_eq, &p.lower)?;
    if p.c.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NumericalFailure("non-finite cost".into()));
    }
    let (n_ub, n_eq) = (p.a_ub.nrows(), p.a_eq.nrows());
    let mut tab = Tableau::build(&p.a_ub, &p.b_ub, &p.a_eq, &p.b_eq, &p.lower);
    let cap = s.max_iter.unwrap_or(10 * (tab.rows + tab.cols).max(1));
    match tab.phase_one(s.rule, &s.tol, cap) {
        PhaseOne::Infeasible => return Ok(SolveResult::failed(SolveStatus::Infeasible, n, n_ub, n_eq, 0)),
        PhaseOne::MaxIter => return Ok(SolveResult::failed(SolveStatus::MaxIter, n, n_ub, n_eq, cap)),
        PhaseOne::Feasible => {}
    }
    let cost: Vec<f64> = (0..tab.cols)
        .map(|j| tab.structural[j].map_or(0.0, |k| p.c[k]))
        .collect();
    let iterations = match tab.simplex(&cost, s.rule, &s.tol, cap) {
        SimplexOutcome::Optimal { iterations } => iterations,
        SimplexOutcome::Unbounded => return Ok(SolveResult::failed(SolveStatus::Unbounded, n, n_ub, n_eq, 0)),
        SimplexOutcome::MaxIter => return Ok(SolveResult::failed(SolveStatus::MaxIter, n, n_ub, n_eq, cap)),
    };
    let x = recover_primal(&tab, &tab.basic_solution(), &p.lower);
    let objective = p.c.dot(&x);
    let (dual_ub, dual_eq) = if s.compute_duals {
        duals(&tab, &p.a_ub, &p.a_eq, &p.c)?
    } else {
        (DVector::zeros(n_ub), DVector::zeros(n_eq))
    };
    Ok(SolveResult {
        status: SolveStatus::Optimal,
        primal: x,
        dual_ub,
        dual_eq,
        objective,
        iterations,
    })
}

/// Solves a convex QP.
pub fn solve_qp(p: &QpProblem) -> Result<SolveResult, SolverError> {
    solve_qp_with(p, &SolverSettings::QP)
}

pub fn solve_qp_with(p: &QpProblem, s: &SolverSettings) -> Result<SolveResult, SolverError> {
    let n = p.f.len();
    check_dims(n, &p.a_ub, &p.b_ub, &p.a_eq, &p.b_eq, &p.lower)?;
    if p.hq.nrows() != n || p.hq.ncols() != n {
        return Err(SolverError::DimensionMismatch(format!(
            "Hq is {}x{}, expected {n}x{n}",
            p.hq.nrows(),
            p.hq.ncols()
        )));
    }
    if p.hq.iter().chain(p.f.iter()).any(|v| !v.is_finite()) {
        return Err(SolverError::NumericalFailure("non-finite objective".into()));
    }
    let hscale = 1.0 + p.hq.amax();
    if (&p.hq - p.hq.transpose()).amax() > 1e-10 * hscale {
        return Err(SolverError::NumericalFailure("Hq is not symmetric".into()));
    }
    let (n_ub, n_eq) = (p.a_ub.nrows(), p.a_eq.nrows());
    let mut tab = Tableau::build(&p.a_ub, &p.b_ub, &p.a_eq, &p.b_eq, &p.lower);
    let cap = s.max_iter.unwrap_or(20 * (tab.rows + tab.cols).max(1));
    match tab.phase_one(PricingRule::Dantzig, &s.tol, cap) {
        PhaseOne::Infeasible => return Ok(SolveResult::failed(SolveStatus::Infeasible, n, n_ub, n_eq, 0)),
        PhaseOne::MaxIter => return Ok(SolveResult::failed(SolveStatus::MaxIter, n, n_ub, n_eq, cap)),
        PhaseOne::Feasible => {}
    }

    // Objective in the shifted variables x' = x - lower.
    let shift: Vec<f64> = p.lower.iter().map(|&l| if l.is_finite() { l } else { 0.0 }).collect();
    let shift_v = DVector::from_vec(shift);
    let f_shift = &p.f + &p.hq * &shift_v;
    let idx: Vec<usize> = (0..n)
        .filter(|&j| (0..n).any(|k| p.hq[(j, k)] != 0.0))
        .collect();
    let h = DMatrix::from_fn(idx.len(), idx.len(), |a, b| p.hq[(idx[a], idx[b])]);
    let quad = QuadForm { idx, h };
    let f_tab: Vec<f64> = (0..tab.cols)
        .map(|j| tab.structural[j].map_or(0.0, |k| f_shift[k]))
        .collect();
    let (outcome, xt) = tab.reduced_gradient(&quad, &f_tab, s.rule, &s.tol, cap);
    let iterations = match outcome {
        QpOutcome::Optimal { iterations } => iterations,
        QpOutcome::Unbounded => return Ok(SolveResult::failed(SolveStatus::Unbounded, n, n_ub, n_eq, 0)),
        QpOutcome::MaxIter => return Ok(SolveResult::failed(SolveStatus::MaxIter, n, n_ub, n_eq, cap)),
    };
    let x = recover_primal(&tab, &xt, &p.lower);
    let objective = p.objective(&x);
    let (dual_ub, dual_eq) = if s.compute_duals {
        let g = &p.hq * &x + &p.f;
        duals(&tab, &p.a_ub, &p.a_eq, &g)?
    } else {
        (DVector::zeros(n_ub), DVector::zeros(n_eq))
    };
    Ok(SolveResult {
        status: SolveStatus::Optimal,
        primal: x,
        dual_ub,
        dual_eq,
        objective,
        iterations,
    })
}

fn recover_primal(tab: &Tableau, xt: &[f64], lower: &[f64]) -> DVector<f64> {
    let mut x = DVector::zeros(lower.len());
    for (j, s) in tab.structural.iter().enumerate() {
        if let Some(k) = s {
            let shift = if lower[*k].is_finite() { lower[*k] } else { 0.0 };
            x[*k] = xt[j] + shift;
        }
    }
    x
}

/// Constraint multipliers from the final basis: solves `B' pi = g_B` in the
/// caller's coordinates.
fn duals(
    tab: &Tableau,
    a_ub: &DMatrix<f64>,
    a_eq: &DMatrix<f64>,
    g: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), SolverError> {
    use tableau::RowOrigin;
    let m = tab.rows;
    if m == 0 {
        return Ok((DVector::zeros(a_ub.nrows()), DVector::zeros(a_eq.nrows())));
    }
    let mut slack_row = vec![usize::MAX; a_ub.nrows()];
    for (r, o) in tab.origin.iter().enumerate() {
        if let RowOrigin::Ub(i) = o {
            slack_row[*i] = r;
        }
    }
    let mut bmat = DMatrix::<f64>::zeros(m, m);
    let mut gb = DVector::<f64>::zeros(m);
    for (c, &col) in tab.basis.iter().enumerate() {
        match tab.structural[col] {
            Some(k) => {
                for (r, o) in tab.origin.iter().enumerate() {
                    bmat[(r, c)] = match o {
                        RowOrigin::Ub(i) => a_ub[(*i, k)],
                        RowOrigin::Eq(i) => a_eq[(*i, k)],
                    };
                }
                gb[c] = g[k];
            }
            None => {
                let i = tab
                    .slack_col
                    .iter()
                    .position(|&s| s == col)
                    .expect("nonstructural basic column is a slack");
                bmat[(slack_row[i], c)] = 1.0;
            }
        }
    }
    let pi = bmat
        .transpose()
        .lu()
        .solve(&gb)
        .ok_or_else(|| SolverError::NumericalFailure("singular final basis".into()))?;
    let mut y_ub = DVector::zeros(a_ub.nrows());
    let mut y_eq = DVector::zeros(a_eq.nrows());
    for (r, o) in tab.origin.iter().enumerate() {
        match o {
            RowOrigin::Ub(i) => y_ub[*i] = -pi[r],
            RowOrigin::Eq(i) => y_eq[*i] = -pi[r],
        }
    }
    Ok((y_ub, y_eq))
}

#[cfg(test)]
mod tests;
