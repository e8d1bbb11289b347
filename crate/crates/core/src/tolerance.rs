//! Numeric tolerances shared across the crate.

/// Tolerances used by the solvers and the set operations.
///
/// The defaults are the values every public entry point uses; they are kept in
/// one record so the interfaces between modules agree on what "feasible" and
/// "equal" mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Smallest admissible pivot magnitude in the simplex tableau.
    pub pivot: f64,
    /// Primal feasibility tolerance of the simplex (relative to `1 + |rhs|`).
    pub feasibility: f64,
    /// Reduced-cost optimality tolerance.
    pub optimality: f64,
    /// Absolute tolerance on `Hz <= h + tol` in polytope membership tests.
    pub containment: f64,
    /// A row is redundant when its LP maximum is within this of its offset.
    pub redundancy: f64,
    /// Riccati fixed-point stopping threshold (max-norm change).
    pub riccati: f64,
    pub riccati_max_iterations: usize,
    /// Invariant-set iteration cap.
    pub invariant_max_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        TOL
    }
}

pub const TOL: Tolerances = Tolerances {
    pivot: 1e-9,
    feasibility: 1e-9,
    optimality: 1e-10,
    containment: 1e-9,
    redundancy: 1e-9,
    riccati: 1e-12,
    riccati_max_iterations: 10_000,
    invariant_max_iterations: 200,
};
