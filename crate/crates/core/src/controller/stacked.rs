//! Horizon-stacked constraint rows under affine disturbance feedback.
//!
//! Every row has the form
//!
//! ```text
//! F_i v + max over (w, theta) of [ (F_i M + Gd_i) d + Gtheta_i theta ] <= c_i + Hx_i x_t
//! ```
//!
//! with `d_j = w_j + E theta_j` the lumped uncertainty of stage `j`. The same
//! `F` multiplies the auxiliary inputs `v` and the feedback `M` because both
//! enter the predicted inputs identically.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ControllerError;
use crate::model::{Constraints, SystemConfig};
use crate::synthesis::TerminalIngredients;

/// Origin of a stacked row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    /// Mixed row `row` of `C x_k + D u_k <= b` at stage `k`.
    Mixed { k: usize, row: usize },
    /// Chance row `row` tightened for `x_{k+1}`, imposed at stage `k`.
    Chance { k: usize, row: usize },
    /// Hard input row `row` at stage `k`.
    Input { k: usize, row: usize },
    /// Terminal-set row `row` on `x_N`.
    Terminal { row: usize },
}

/// `A^k`, `B_k = [A^(k-1) B, ..., B, 0, ...]`, and `C_k = [A^(k-1), ..., I, 0, ...]`
/// for `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub a_pow: Vec<DMatrix<f64>>,
    pub b_k: Vec<DMatrix<f64>>,
    pub c_k: Vec<DMatrix<f64>>,
}

impl Prediction {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, horizon: usize) -> Self {
        let n = a.nrows();
        let m = b.ncols();
        let mut a_pow = vec![DMatrix::identity(n, n)];
        for k in 1..=horizon {
            let next = a * &a_pow[k - 1];
            a_pow.push(next);
        }
        let mut b_k = Vec::with_capacity(horizon + 1);
        let mut c_k = Vec::with_capacity(horizon + 1);
        for k in 0..=horizon {
            let mut bk = DMatrix::zeros(n, m * horizon);
            let mut ck = DMatrix::zeros(n, n * horizon);
            for j in 0..k {
                let ap = &a_pow[k - 1 - j];
                bk.view_mut((0, j * m), (n, m)).copy_from(&(ap * b));
                ck.view_mut((0, j * n), (n, n)).copy_from(ap);
            }
            b_k.push(bk);
            c_k.push(ck);
        }
        Self { a_pow, b_k, c_k }
    }
}

/// All constraint rows of one MPC program.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedModel {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub horizon: usize,
    /// Coefficients of `v` and, through `M`, of the fed-back uncertainty (rows x mN).
    pub f: DMatrix<f64>,
    /// Direct coefficients of `d = w + E theta` (rows x nN).
    pub g_d: DMatrix<f64>,
    /// Extra coefficients of `theta` alone (rows x pN); nonzero only on chance rows.
    pub g_theta: DMatrix<f64>,
    pub c: DVector<f64>,
    /// Right-hand side dependence on the measured state (rows x n).
    pub h_x: DMatrix<f64>,
    pub kinds: Vec<RowKind>,
    pub prediction: Prediction,
}

impl StackedModel {
    pub fn rows(&self) -> usize {
        self.c.len()
    }

    /// Right-hand side `c + Hx x`.
    pub fn rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c + &self.h_x * x
    }

    /// Whether the stage-`j` uncertainty of row `i` is fed back through `M`,
    /// that is, whether some later stage `k > j` has a nonzero block in `F_i`.
    pub fn depends_on_feedback(&self, i: usize, j: usize) -> bool {
        ((j + 1)..self.horizon).any(|k| (0..self.m).any(|r| self.f[(i, k * self.m + r)] != 0.0))
    }
}

struct Builder {
    n: usize,
    m: usize,
    p: usize,
    horizon: usize,
    f: Vec<DVector<f64>>,
    g_d: Vec<DVector<f64>>,
    g_theta: Vec<DVector<f64>>,
    c: Vec<f64>,
    h_x: Vec<DVector<f64>>,
    kinds: Vec<RowKind>,
}

impl Builder {
    fn push_block(
        &mut self,
        f: DMatrix<f64>,
        g_d: DMatrix<f64>,
        g_theta: Option<DMatrix<f64>>,
        c: &DVector<f64>,
        h_x: DMatrix<f64>,
        kind: impl Fn(usize) -> RowKind,
    ) {
        for i in 0..c.len() {
            self.f.push(f.row(i).transpose());
            self.g_d.push(g_d.row(i).transpose());
            self.g_theta.push(match &g_theta {
                Some(g) => g.row(i).transpose(),
                None => DVector::zeros(self.p * self.horizon),
            });
            self.c.push(c[i]);
            self.h_x.push(h_x.row(i).transpose());
            self.kinds.push(kind(i));
        }
    }

    fn finish(self, prediction: Prediction) -> StackedModel {
        let stack = |rows: &[DVector<f64>], cols: usize| {
            let mut out = DMatrix::zeros(rows.len(), cols);
            for (i, r) in rows.iter().enumerate() {
                out.row_mut(i).copy_from(&r.transpose());
            }
            out
        };
        StackedModel {
            n: self.n,
            m: self.m,
            p: self.p,
            horizon: self.horizon,
            f: stack(&self.f, self.m * self.horizon),
            g_d: stack(&self.g_d, self.n * self.horizon),
            g_theta: stack(&self.g_theta, self.p * self.horizon),
            c: DVector::from_vec(self.c),
            h_x: stack(&self.h_x, self.n),
            kinds: self.kinds,
            prediction,
        }
    }
}

/// Selector of the stage-`k` input block: `u_k = sel_k u`.
fn input_selector(m: usize, horizon: usize, k: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(m, m * horizon);
    s.view_mut((0, k * m), (m, m)).fill_with_identity();
    s
}

/// Stacks the mode's constraint rows over the horizon followed by the
/// terminal rows.
///
/// Robust rows at stage `k` constrain `C x_k + D u_k`. Chance rows at stage
/// `k` constrain `g_j'(A x_k + B u_k + E theta_k)` against `h_j - q_j`, the
/// noise `w_k` being accounted for by the quantile `q_j`; the hard input rows
/// follow them. Terminal rows constrain `x_N`.
pub fn build_stacked_model(sys: &SystemConfig, terminal: &TerminalIngredients) -> Result<StackedModel, ControllerError> {
    let (n, m, p, horizon) = (sys.n(), sys.m(), sys.p(), sys.horizon);
    if terminal.k.shape() != (m, n) || terminal.set.dim() != n {
        return Err(ControllerError::DimensionMismatch(format!(
            "terminal gain {:?} and set of dimension {} for n = {n}, m = {m}",
            terminal.k.shape(),
            terminal.set.dim()
        )));
    }
    if horizon == 0 {
        return Err(ControllerError::Invalid("horizon must be at least 1".into()));
    }
    let pred = Prediction::new(&sys.a, &sys.b, horizon);
    let mut b = Builder {
        n,
        m,
        p,
        horizon,
        f: Vec::new(),
        g_d: Vec::new(),
        g_theta: Vec::new(),
        c: Vec::new(),
        h_x: Vec::new(),
        kinds: Vec::new(),
    };
    match (&sys.constraints, terminal.kind) {
        (Constraints::Robust(mc), crate::model::Mode::Robust) => {
            for k in 0..horizon {
                let f = &mc.c * &pred.b_k[k] + &mc.d * input_selector(m, horizon, k);
                let g_d = &mc.c * &pred.c_k[k];
                let h_x = -(&mc.c * &pred.a_pow[k]);
                b.push_block(f, g_d, None, &mc.b, h_x, |row| RowKind::Mixed { k, row });
            }
        }
        (Constraints::Stochastic(cc), crate::model::Mode::Stochastic) => {
            if terminal.quantiles.len() != cc.h.len() {
                return Err(ControllerError::DimensionMismatch(format!(
                    "{} quantiles for {} chance rows",
                    terminal.quantiles.len(),
                    cc.h.len()
                )));
            }
            let tightened = DVector::from_iterator(cc.h.len(), cc.h.iter().zip(&terminal.quantiles).map(|(h, q)| h - q.value));
            let ge = &cc.g * &sys.e;
            for k in 0..horizon {
                let f = &cc.g * &pred.b_k[k + 1];
                let g_d = &cc.g * &sys.a * &pred.c_k[k];
                let mut g_theta = DMatrix::zeros(cc.h.len(), p * horizon);
                g_theta.view_mut((0, k * p), (cc.h.len(), p)).copy_from(&ge);
                let h_x = -(&cc.g * &pred.a_pow[k + 1]);
                b.push_block(f, g_d, Some(g_theta), &tightened, h_x, |row| RowKind::Chance { k, row });
            }
            for k in 0..horizon {
                let o = cc.h_u_bound.len();
                let f = &cc.h_u * input_selector(m, horizon, k);
                b.push_block(
                    f,
                    DMatrix::zeros(o, n * horizon),
                    None,
                    &cc.h_u_bound,
                    DMatrix::zeros(o, n),
                    |row| RowKind::Input { k, row },
                );
            }
        }
        (_, kind) => {
            return Err(ControllerError::Invalid(format!(
                "terminal ingredients for {kind} mode do not match the configured constraints"
            )))
        }
    }
    let y = terminal.set.normals();
    let f = y * &pred.b_k[horizon];
    let g_d = y * &pred.c_k[horizon];
    let h_x = -(y * &pred.a_pow[horizon]);
    b.push_block(f, g_d, None, terminal.set.offsets(), h_x, |row| RowKind::Terminal { row });
    Ok(b.finish(pred))
}
