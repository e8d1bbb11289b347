use thiserror::Error;

/// Errors raised by the LP/QP/Riccati solvers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("problem is infeasible")]
    Infeasible,
    #[error("problem is unbounded")]
    Unbounded,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("Riccati iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },
}

/// Errors raised by polytope operations.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeometryError {
    #[error("set is empty")]
    EmptySet,
    #[error("set is unbounded")]
    Unbounded,
    #[error("operation supports dimension 2 only, got {0}")]
    DimUnsupported(usize),
    #[error("invalid polytope: {0}")]
    Invalid(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AdaptationError {
    #[error("feasible parameter set became empty at t = {t}; noise or rate bounds were violated")]
    EmptySetAfterUpdate { t: usize },
    #[error("invalid adaptation input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SynthesisError {
    #[error("invariant-set iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("terminal set is empty: the disturbance is too large for the constraints")]
    EmptyTerminalSet,
    #[error("terminal set does not contain the origin")]
    OriginExcluded,
    #[error("closed loop is not stable (spectral radius {0})")]
    UnstableClosedLoop(f64),
    #[error("invalid synthesis input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ControllerError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("MPC program infeasible at t = {t}")]
    InfeasibleStep { t: usize },
    #[error("unsupported noise model: {0}")]
    UnsupportedModel(String),
    #[error("invalid controller input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("invalid offset schedule: {0}")]
    InvalidOffsetSchedule(String),
    #[error("trajectory {trajectory}: {source}")]
    Trajectory {
        trajectory: usize,
        #[source]
        source: Box<SimError>,
    },
    #[error("campaigns are not comparable: {0}")]
    SeedMismatch(String),
    #[error("invalid simulation input: {0}")]
    Invalid(String),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Adaptation(#[from] AdaptationError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl SimError {
    /// Process exit status used by the CLI: infeasible MPC steps and emptied
    /// parameter sets are reported with distinct codes.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Trajectory { source, .. } => source.exit_code(),
            SimError::Controller(ControllerError::InfeasibleStep { .. }) => 3,
            SimError::Adaptation(AdaptationError::EmptySetAfterUpdate { .. }) => 4,
            _ => 1,
        }
    }
}
