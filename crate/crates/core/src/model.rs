//! System description shared by synthesis, control, and simulation.

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{BoxSet, Polytope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Robust,
    Stochastic,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Robust => "robust",
            Mode::Stochastic => "stochastic",
        })
    }
}

/// Distribution of the process noise on its box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// Independent components, each uniform on its interval.
    #[default]
    Uniform,
}

/// Hard mixed constraints `C x + D u <= b`, imposed for every admissible
/// noise and offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedConstraints {
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Chance constraints `P(g_j' x <= h_j) >= 1 - alpha_j` on the state with hard
/// input constraints `H_u u <= h_u`.
///
/// Rows are grouped: each group is one constraint in the Bonferroni split and
/// owns a risk level. A two-sided bound on one coordinate is a single group of
/// two rows, and every row uses its group's level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChanceConstraints {
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    /// Group index of each row of `g`.
    pub row_group: Vec<usize>,
    /// Risk level of each group; they sum to the total level.
    pub group_alpha: Vec<f64>,
    pub h_u: DMatrix<f64>,
    pub h_u_bound: DVector<f64>,
}

impl ChanceConstraints {
    pub fn total_alpha(&self) -> f64 {
        self.group_alpha.iter().sum()
    }

    /// Risk level of each row.
    pub fn row_alpha(&self) -> Vec<f64> {
        self.row_group.iter().map(|&g| self.group_alpha[g]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Constraints {
    Robust(MixedConstraints),
    Stochastic(ChanceConstraints),
}

/// Stage cost `x'Px + v'Rv` and the LQR weights of the terminal controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub state: DMatrix<f64>,
    pub input: DMatrix<f64>,
    pub lqr_state: DMatrix<f64>,
    pub lqr_input: DMatrix<f64>,
}

/// `x+ = A x + B u + E theta + w` with `w` in a box, `theta` in `omega`, and
/// offset increments in `rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub noise: BoxSet,
    pub noise_kind: NoiseKind,
    pub omega: Polytope,
    pub rate: Polytope,
    pub constraints: Constraints,
    pub cost: CostWeights,
    pub horizon: usize,
}

impl SystemConfig {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.e.ncols()
    }

    pub fn mode(&self) -> Mode {
        match self.constraints {
            Constraints::Robust(_) => Mode::Robust,
            Constraints::Stochastic(_) => Mode::Stochastic,
        }
    }

    /// The state constraint rows `G x <= h` whose violations are counted in
    /// simulation: rows of `C` with a zero `D` row in robust mode, the chance
    /// rows in stochastic mode.
    pub fn state_rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        match &self.constraints {
            Constraints::Robust(mc) => {
                let keep: Vec<usize> = (0..mc.b.len())
                    .filter(|&i| mc.d.row(i).iter().all(|v| *v == 0.0))
                    .collect();
                (mc.c.select_rows(keep.iter()), mc.b.select_rows(keep.iter()))
            }
            Constraints::Stochastic(cc) => (cc.g.clone(), cc.h.clone()),
        }
    }

    /// Input rows `H u <= h` that hold for every realization.
    pub fn input_rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        match &self.constraints {
            Constraints::Robust(mc) => {
                let keep: Vec<usize> = (0..mc.b.len())
                    .filter(|&i| mc.c.row(i).iter().all(|v| *v == 0.0))
                    .collect();
                (mc.d.select_rows(keep.iter()), mc.b.select_rows(keep.iter()))
            }
            Constraints::Stochastic(cc) => (cc.h_u.clone(), cc.h_u_bound.clone()),
        }
    }

    /// Every dimension and sign invariant, reported together with the field
    /// path that breaks it.
    pub fn validate(&self) -> Vec<(String, String)> {
        let mut errs = Vec::new();
        let mut push = |path: &str, msg: String| errs.push((path.to_string(), msg));
        let n = self.a.nrows();
        let m = self.b.ncols();
        let p = self.e.ncols();
        if n == 0 || self.a.ncols() != n {
            push("system.a", format!("must be square and nonempty, got {:?}", self.a.shape()));
        }
        if self.b.nrows() != n || m == 0 {
            push("system.b", format!("expected {n} rows and at least one column, got {:?}", self.b.shape()));
        }
        if self.e.nrows() != n || p == 0 {
            push("system.e", format!("expected {n} rows and at least one column, got {:?}", self.e.shape()));
        }
        if self.noise.dim() != n {
            push("noise.w_bar", format!("expected dimension {n}, got {}", self.noise.dim()));
        }
        if self.noise.lower.iter().chain(self.noise.upper.iter()).any(|v| !v.is_finite()) {
            push("noise.w_bar", "entries must be finite".into());
        } else if self.noise.lower.iter().any(|v| *v > 0.0) || self.noise.upper.iter().any(|v| *v < 0.0) {
            push("noise.w_bar", "noise box must contain the origin".into());
        }
        if self.omega.dim() != p {
            push("offset.omega", format!("expected dimension {p}, got {}", self.omega.dim()));
        } else if !self.omega.contains(&DVector::zeros(p)) {
            push("offset.omega", "must contain the origin".into());
        }
        if self.rate.dim() != p {
            push("offset.rate", format!("expected dimension {p}, got {}", self.rate.dim()));
        } else if !self.rate.contains(&DVector::zeros(p)) {
            push("offset.rate", "must contain the origin".into());
        }
        if self.horizon == 0 {
            push("horizon", "must be at least 1".into());
        }
        let sq = |mat: &DMatrix<f64>, k: usize| mat.shape() == (k, k);
        let sym = |mat: &DMatrix<f64>| (mat - mat.transpose()).amax() <= 1e-10 * (1.0 + mat.amax());
        for (path, mat, k) in [
            ("cost.state", &self.cost.state, n),
            ("cost.input", &self.cost.input, m),
            ("cost.lqr_state", &self.cost.lqr_state, n),
            ("cost.lqr_input", &self.cost.lqr_input, m),
        ] {
            if !sq(mat, k) {
                push(path, format!("expected {k}x{k}, got {:?}", mat.shape()));
            } else if !sym(mat) {
                push(path, "must be symmetric".into());
            } else {
                let min_eig = mat.clone().symmetric_eigenvalues().min();
                let positive = path.ends_with("input");
                if positive && min_eig <= 0.0 {
                    push(path, format!("must be positive definite (min eigenvalue {min_eig:e})"));
                } else if !positive && min_eig < -1e-12 {
                    push(path, format!("must be positive semidefinite (min eigenvalue {min_eig:e})"));
                }
            }
        }
        match &self.constraints {
            Constraints::Robust(mc) => {
                let s = mc.b.len();
                if mc.c.shape() != (s, n) {
                    push("constraints.robust.c", format!("expected {s}x{n}, got {:?}", mc.c.shape()));
                }
                if mc.d.shape() != (s, m) {
                    push("constraints.robust.d", format!("expected {s}x{m}, got {:?}", mc.d.shape()));
                }
                if mc.b.iter().any(|v| *v < 0.0) {
                    push("constraints.robust.b", "constraint set must contain the origin".into());
                }
            }
            Constraints::Stochastic(cc) => {
                let s = cc.h.len();
                if cc.g.shape() != (s, n) {
                    push("constraints.stochastic.g", format!("expected {s}x{n}, got {:?}", cc.g.shape()));
                }
                if cc.h.iter().any(|v| *v < 0.0) {
                    push("constraints.stochastic.h", "constraint set must contain the origin".into());
                }
                if cc.row_group.len() != s {
                    push(
                        "constraints.stochastic.row_groups",
                        format!("expected {s} entries, got {}", cc.row_group.len()),
                    );
                }
                if let Some(g) = cc.row_group.iter().find(|&&g| g >= cc.group_alpha.len()) {
                    push(
                        "constraints.stochastic.row_groups",
                        format!("group {g} has no entry in group_alpha"),
                    );
                }
                if cc.group_alpha.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
                    push("constraints.stochastic.group_alpha", "every level must lie in (0, 1)".into());
                }
                if cc.total_alpha() >= 1.0 {
                    push(
                        "constraints.stochastic.group_alpha",
                        format!("levels sum to {} but the total must be below 1", cc.total_alpha()),
                    );
                }
                let o = cc.h_u_bound.len();
                if cc.h_u.shape() != (o, m) {
                    push("constraints.stochastic.h_u", format!("expected {o}x{m}, got {:?}", cc.h_u.shape()));
                }
                if cc.h_u_bound.iter().any(|v| *v < 0.0) {
                    push("constraints.stochastic.h_u_bound", "input set must contain the origin".into());
                }
            }
        }
        errs
    }

    /// The two-state benchmark: unstable plant, unit offset map, box noise of
    /// radius 0.1, offset box of radius 0.5 with rate 0.05, horizon 6.
    pub fn benchmark(mode: Mode) -> Self {
        let constraints = match mode {
            Mode::Robust => Constraints::Robust(MixedConstraints {
                c: dmatrix![1.0, 0.0; 0.0, 1.0; -1.0, 0.0; 0.0, -1.0; 0.0, 0.0; 0.0, 0.0],
                d: dmatrix![0.0; 0.0; 0.0; 0.0; 1.0; -1.0],
                b: dvector![5.0, 2.5, 5.0, 2.5, 4.0, 4.0],
            }),
            Mode::Stochastic => Constraints::Stochastic(benchmark_chance_constraints(0.2)),
        };
        Self {
            a: dmatrix![1.2, 1.5; 0.0, 1.3],
            b: dmatrix![0.0; 1.0],
            e: DMatrix::identity(2, 2),
            noise: BoxSet::symmetric(dvector![0.1, 0.1]).expect("valid box"),
            noise_kind: NoiseKind::Uniform,
            omega: Polytope::from_box(dvector![-0.5, -0.5], dvector![0.5, 0.5]).expect("valid box"),
            rate: Polytope::from_box(dvector![-0.05, -0.05], dvector![0.05, 0.05]).expect("valid box"),
            constraints,
            cost: CostWeights {
                state: DMatrix::identity(2, 2),
                input: dmatrix![10.0],
                lqr_state: DMatrix::identity(2, 2),
                lqr_input: dmatrix![BENCHMARK_TERMINAL_INPUT_WEIGHT],
            },
            horizon: 6,
        }
    }
}

/// Input weight of the benchmark's terminal LQR gain. The stage input weight
/// of 10 yields a gain whose minimal invariant spread under the offset box
/// leaves the state box, so the terminal gain is tuned more aggressively.
pub const BENCHMARK_TERMINAL_INPUT_WEIGHT: f64 = 1.0;

/// Benchmark state box as chance constraints, one group per coordinate, each
/// with risk level `alpha_each`.
pub fn benchmark_chance_constraints(alpha_each: f64) -> ChanceConstraints {
    ChanceConstraints {
        g: dmatrix![1.0, 0.0; 0.0, 1.0; -1.0, 0.0; 0.0, -1.0],
        h: dvector![5.0, 2.5, 5.0, 2.5],
        row_group: vec![0, 1, 0, 1],
        group_alpha: vec![alpha_each, alpha_each],
        h_u: dmatrix![1.0; -1.0],
        h_u_bound: dvector![4.0, 4.0],
    }
}

/// Initial state of the benchmark runs.
pub fn benchmark_start() -> DVector<f64> {
    dvector![-3.21, -0.25]
}
