//! Online MPC under affine disturbance feedback, robust or chance
//! constrained, with the offset uncertainty taken from the predicted feasible
//! parameter sets.

pub mod program;
pub mod quantile;
pub mod stacked;
pub mod uncertainty;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::adaptation::FeasibleParameterSet;
use crate::error::ControllerError;
use crate::model::SystemConfig;
use crate::solver::{solve_qp, solve_qp_interior, SolveStatus};
use crate::synthesis::TerminalIngredients;

pub use program::{assemble_program, NominalCost, PolicyDecision, Program, DUAL_REGULARIZATION};
pub use stacked::{build_stacked_model, RowKind, StackedModel};
pub use uncertainty::UncertaintyStack;

/// Curvature added to the feedback gains and multipliers on the sparse path so
/// that their optimal set stays bounded when the uncertainty degenerates to a
/// point; the nominal cost never sees it.
pub const PROGRAM_RIDGE: f64 = 1e-9;

/// Which QP solver handles the per-step program.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpBackend {
    /// Sparse interior point; fast on full horizons.
    #[default]
    Sparse,
    /// Dense active set; exact vertex solutions, practical for short horizons.
    Dense,
}

/// Per-step solver information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub variables: usize,
    pub rows: usize,
    pub dual_pairs: usize,
    /// Rows whose slack is below `1e-7`.
    pub active_rows: usize,
    pub policy: PolicyDecision,
    /// Certified worst case of the uncertain part of every stacked row.
    pub row_bounds: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// First auxiliary input, applied to the plant.
    pub u: DVector<f64>,
    /// Optimal nominal cost, without the dual regularization.
    pub j_star: f64,
    pub diagnostics: StepDiagnostics,
}

/// Everything that does not change along a trajectory.
#[derive(Debug, Clone)]
pub struct Controller {
    pub sys: SystemConfig,
    pub terminal: TerminalIngredients,
    pub stacked: StackedModel,
    pub eps: f64,
    pub backend: QpBackend,
}

impl Controller {
    pub fn new(sys: &SystemConfig, terminal: &TerminalIngredients) -> Result<Self, ControllerError> {
        let stacked = build_stacked_model(sys, terminal)?;
        Ok(Self {
            sys: sys.clone(),
            terminal: terminal.clone(),
            stacked,
            eps: DUAL_REGULARIZATION,
            backend: QpBackend::default(),
        })
    }

    pub fn with_backend(mut self, backend: QpBackend) -> Self {
        self.backend = backend;
        self
    }

    /// The program at state `x` with feasible parameter set `fps`.
    pub fn program(&self, x: &DVector<f64>, fps: &FeasibleParameterSet) -> Result<(Program, UncertaintyStack), ControllerError> {
        let predicted = fps.predict(self.sys.horizon, &self.sys.omega);
        let us = UncertaintyStack::new(&self.sys, &predicted)?;
        let cost = NominalCost::new(&self.stacked, &self.sys.cost.state, &self.sys.cost.input, &self.terminal.p_f, x);
        let program = assemble_program(&self.stacked, &us, cost, x, self.eps)?;
        Ok((program, us))
    }

    /// Solves the program and returns the first auxiliary input; step `t` is
    /// only used to label an infeasible step.
    pub fn step(&self, t: usize, x: &DVector<f64>, fps: &FeasibleParameterSet) -> Result<StepOutcome, ControllerError> {
        if x.len() != self.sys.n() {
            return Err(ControllerError::DimensionMismatch(format!(
                "state of length {} for n = {}",
                x.len(),
                self.sys.n()
            )));
        }
        let (program, _) = self.program(x, fps)?;
        let res = match self.backend {
            QpBackend::Dense => solve_qp(&program.qp)?,
            QpBackend::Sparse => {
                let mut qp = program.qp.clone();
                let mn = self.sys.m() * self.sys.horizon;
                for i in mn..qp.f.len() {
                    qp.hq[(i, i)] += PROGRAM_RIDGE;
                }
                solve_qp_interior(&qp)?
            }
        };
        match res.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => return Err(ControllerError::InfeasibleStep { t }),
            other => {
                return Err(ControllerError::Solver(crate::error::SolverError::NumericalFailure(format!(
                    "MPC program ended with status {other:?} at step {t}"
                ))))
            }
        }
        let policy = program.decode(&res.primal);
        let row_bounds = program.row_bounds(&res.primal);
        let lhs = &program.qp.a_ub * &res.primal;
        let active_rows = (0..lhs.len())
            .filter(|&i| program.qp.b_ub[i] - lhs[i] <= 1e-7)
            .count();
        let m = self.sys.m();
        let u = policy.v.rows(0, m).into_owned();
        // The expanded quadratic can dip below zero by rounding at the origin.
        let j_star = program.cost.value(&policy.v).max(0.0);
        Ok(StepOutcome {
            u,
            j_star,
            diagnostics: StepDiagnostics {
                status: res.status,
                iterations: res.iterations,
                variables: program.num_vars(),
                rows: self.stacked.rows(),
                dual_pairs: program.pairs.len(),
                active_rows,
                policy,
                row_bounds,
            },
        })
    }
}

/// One MPC step at `x` from scratch; see [`Controller::step`].
pub fn mpc_step(
    sys: &SystemConfig,
    x: &DVector<f64>,
    fps: &FeasibleParameterSet,
    terminal: &TerminalIngredients,
) -> Result<StepOutcome, ControllerError> {
    Controller::new(sys, terminal)?.step(fps.t(), x, fps)
}
