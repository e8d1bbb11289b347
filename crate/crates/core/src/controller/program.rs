//! The dualized MPC program: nominal cost in `v`, robust rows through LP
//! duality on every (row, stage) pair of the lifted uncertainty.
//!
//! For row `i` and stage `j` the uncertain coefficient of `w_j` is
//! `a = (F_i M)_j + Gd_ij` and that of `theta_j` is `E'a + Gtheta_ij`. Its
//! maximum is replaced by `w_hi'l+ - w_lo'l- + h_j'l_theta` under
//! `l+ - l- = a`, `H_j' l_theta = E'a + Gtheta_ij`, all multipliers
//! nonnegative. Pairs whose coefficient does not involve `M` are evaluated
//! directly and moved to the right-hand side.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ControllerError;
use crate::solver::QpProblem;

use super::stacked::StackedModel;
use super::uncertainty::UncertaintyStack;

/// Weight of the dual objectives added to the cost so that every row bound
/// settles on the exact worst case instead of any larger dual certificate.
pub const DUAL_REGULARIZATION: f64 = 1e-6;

/// The planned policy `u = M (w + E theta) + v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDecision {
    /// Block strictly lower triangular gains (mN x nN).
    pub m: DMatrix<f64>,
    pub v: DVector<f64>,
}

/// Multipliers of one dualized (row, stage) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DualPair {
    pub row: usize,
    pub stage: usize,
    /// First index of `l+`, followed by `l-` and `l_theta`.
    pub offset: usize,
    pub theta_len: usize,
}

/// Nominal cost `1/2 v'Hv + f'v + constant` of the auxiliary inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalCost {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl NominalCost {
    /// `sum_k x_k'P x_k + v_k'R v_k + x_N'P_f x_N` along
    /// `x_{k+1} = A x_k + B v_k`, `x_0 = x`.
    pub fn new(sm: &StackedModel, p: &DMatrix<f64>, r: &DMatrix<f64>, p_f: &DMatrix<f64>, x: &DVector<f64>) -> Self {
        let (m, horizon) = (sm.m, sm.horizon);
        let pred = &sm.prediction;
        let mn = m * horizon;
        let mut hessian = DMatrix::zeros(mn, mn);
        let mut linear = DVector::zeros(mn);
        let mut constant = 0.0;
        for k in 0..=horizon {
            let w = if k == horizon { p_f } else { p };
            let bk = &pred.b_k[k];
            let free = &pred.a_pow[k] * x;
            hessian += 2.0 * bk.transpose() * w * bk;
            linear += 2.0 * bk.transpose() * w * &free;
            constant += free.dot(&(w * &free));
        }
        for k in 0..horizon {
            let mut block = hessian.view_mut((k * m, k * m), (m, m));
            block += 2.0 * r;
        }
        Self { hessian, linear, constant }
    }

    pub fn value(&self, v: &DVector<f64>) -> f64 {
        0.5 * v.dot(&(&self.hessian * v)) + self.linear.dot(v) + self.constant
    }
}

/// An assembled program together with the map from its variables back to the
/// policy and the row bounds.
#[derive(Debug, Clone)]
pub struct Program {
    pub qp: QpProblem,
    pub cost: NominalCost,
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    /// `(k, j)` of every feedback block, in variable order after `v`.
    pub m_blocks: Vec<(usize, usize)>,
    pub pairs: Vec<DualPair>,
    /// Sum of the directly evaluated pairs of every row.
    pub constant_terms: DVector<f64>,
    /// Dual objective coefficients, one per variable (zero outside pairs).
    pub dual_weights: DVector<f64>,
}

impl Program {
    pub fn num_vars(&self) -> usize {
        self.qp.f.len()
    }

    fn m_offset(&self) -> usize {
        self.m * self.horizon
    }

    fn m_index(&self, block: usize, r: usize, c: usize) -> usize {
        self.m_offset() + block * self.m * self.n + r * self.n + c
    }

    pub fn decode(&self, z: &DVector<f64>) -> PolicyDecision {
        let (m, n) = (self.m, self.n);
        let v = z.rows(0, m * self.horizon).into_owned();
        let mut gains = DMatrix::zeros(m * self.horizon, n * self.horizon);
        for (b, &(k, j)) in self.m_blocks.iter().enumerate() {
            for r in 0..m {
                for c in 0..n {
                    gains[(k * m + r, j * n + c)] = z[self.m_index(b, r, c)];
                }
            }
        }
        PolicyDecision { m: gains, v }
    }

    /// Certified worst case of the uncertain part of every row: the dual
    /// objectives of its pairs plus its directly evaluated pairs.
    pub fn row_bounds(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = self.constant_terms.clone();
        for pair in &self.pairs {
            let len = 2 * self.n + pair.theta_len;
            let w = self.dual_weights.rows(pair.offset, len);
            out[pair.row] += w.dot(&z.rows(pair.offset, len));
        }
        out
    }
}

/// Builds the dualized program at state `x`.
pub fn assemble_program(
    sm: &StackedModel,
    us: &UncertaintyStack,
    cost: NominalCost,
    x: &DVector<f64>,
    eps: f64,
) -> Result<Program, ControllerError> {
    let (n, m, p, horizon) = (sm.n, sm.m, sm.p, sm.horizon);
    if us.horizon() != horizon || us.noise.dim() != n || us.e.shape() != (n, p) || x.len() != n {
        return Err(ControllerError::DimensionMismatch(format!(
            "stack of {} stages with noise dimension {} for n = {n}, p = {p}, N = {horizon}, state of length {}",
            us.horizon(),
            us.noise.dim(),
            x.len()
        )));
    }
    let rows = sm.rows();
    let mn = m * horizon;
    let m_blocks: Vec<(usize, usize)> = (1..horizon).flat_map(|k| (0..k).map(move |j| (k, j))).collect();
    let block_index = |k: usize, j: usize| k * (k - 1) / 2 + j;
    let mut next = mn + m_blocks.len() * m * n;

    let mut pairs = Vec::new();
    let mut constant_terms = DVector::zeros(rows);
    for i in 0..rows {
        for j in 0..horizon {
            let g_d = DVector::from_iterator(n, (0..n).map(|c| sm.g_d[(i, j * n + c)]));
            let g_th = DVector::from_iterator(p, (0..p).map(|c| sm.g_theta[(i, j * p + c)]));
            if sm.depends_on_feedback(i, j) {
                let theta_len = us.stages[j].rows();
                pairs.push(DualPair { row: i, stage: j, offset: next, theta_len });
                next += 2 * n + theta_len;
            } else if g_d.iter().chain(g_th.iter()).any(|v| *v != 0.0) {
                constant_terms[i] += us.stage_support(j, &g_d, &g_th)?;
            }
        }
    }
    let nv = next;
    let neq = pairs.len() * (n + p);

    let mut a_ub = DMatrix::zeros(rows, nv);
    let b_ub = sm.rhs(x) - &constant_terms;
    a_ub.view_mut((0, 0), (rows, mn)).copy_from(&sm.f);
    let mut a_eq = DMatrix::zeros(neq, nv);
    let mut b_eq = DVector::zeros(neq);
    let mut dual_weights = DVector::zeros(nv);
    let mut lower = vec![f64::NEG_INFINITY; nv];

    for (q, pair) in pairs.iter().enumerate() {
        let (i, j) = (pair.row, pair.stage);
        let theta = &us.stages[j];
        let plus = pair.offset;
        let minus = plus + n;
        let lt = minus + n;
        for c in 0..n {
            dual_weights[plus + c] = us.noise.upper[c];
            dual_weights[minus + c] = -us.noise.lower[c];
        }
        for l in 0..pair.theta_len {
            dual_weights[lt + l] = theta.offsets()[l];
        }
        for v in lower.iter_mut().skip(plus).take(2 * n + pair.theta_len) {
            *v = 0.0;
        }
        for t in plus..lt + pair.theta_len {
            a_ub[(i, t)] = dual_weights[t];
        }

        let w_row = q * (n + p);
        let th_row = w_row + n;
        // l+ - l- - (F_i M)_j = Gd_ij
        for c in 0..n {
            a_eq[(w_row + c, plus + c)] = 1.0;
            a_eq[(w_row + c, minus + c)] = -1.0;
            b_eq[w_row + c] = sm.g_d[(i, j * n + c)];
        }
        // H_j' l_theta - E'(F_i M)_j = E' Gd_ij + Gtheta_ij
        for qq in 0..p {
            for l in 0..pair.theta_len {
                a_eq[(th_row + qq, lt + l)] = theta.normals()[(l, qq)];
            }
            let mut rhs = sm.g_theta[(i, j * p + qq)];
            for c in 0..n {
                rhs += us.e[(c, qq)] * sm.g_d[(i, j * n + c)];
            }
            b_eq[th_row + qq] = rhs;
        }
        for k in (j + 1)..horizon {
            let b = block_index(k, j);
            for r in 0..m {
                let fi = sm.f[(i, k * m + r)];
                if fi == 0.0 {
                    continue;
                }
                for c in 0..n {
                    let col = mn + b * m * n + r * n + c;
                    a_eq[(w_row + c, col)] -= fi;
                    for qq in 0..p {
                        a_eq[(th_row + qq, col)] -= us.e[(c, qq)] * fi;
                    }
                }
            }
        }
    }

    let mut hq = DMatrix::zeros(nv, nv);
    hq.view_mut((0, 0), (mn, mn)).copy_from(&cost.hessian);
    let mut f = DVector::zeros(nv);
    f.rows_mut(0, mn).copy_from(&cost.linear);
    f += eps * &dual_weights;
    let qp = QpProblem::new(hq, f, a_ub, b_ub).with_eq(a_eq, b_eq).with_lower(lower);
    Ok(Program {
        qp,
        cost,
        n,
        m,
        horizon,
        m_blocks,
        pairs,
        constant_terms,
        dual_weights,
    })
}
