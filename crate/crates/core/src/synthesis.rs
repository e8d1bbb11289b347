//! Offline terminal ingredients: LQR gain and cost, invariant terminal sets,
//! and the chance-constraint quantiles.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::adaptation::{rate_bounds, RateBounds};
use crate::controller::quantile::{quantile_linear, Quantile};
use crate::error::{GeometryError, SynthesisError};
use crate::geometry::{BoxSet, Polytope, Support};
use crate::model::{Constraints, Mode, SystemConfig};
use crate::solver::{solve_dare, solve_lyapunov, Lqr};
use crate::tolerance::TOL;

/// Everything the online controller needs besides the current state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalIngredients {
    pub kind: Mode,
    /// Terminal feedback `u = K x`.
    pub k: DMatrix<f64>,
    /// Terminal cost `x' P_f x`.
    pub p_f: DMatrix<f64>,
    pub set: Polytope,
    /// `F^-1(1 - alpha_j)` of `g_j' w` per chance row; empty in robust mode.
    pub quantiles: Vec<Quantile>,
    pub rate_bounds: RateBounds,
    /// Iterations of the invariant-set recursion.
    pub iterations: usize,
}

/// LQR gain for `x+ = A x + B u` under the LQR weights, rejected unless the
/// closed loop is stable.
pub fn lqr(sys: &SystemConfig) -> Result<Lqr, SynthesisError> {
    let l = solve_dare(&sys.a, &sys.b, &sys.cost.lqr_state, &sys.cost.lqr_input, &TOL)?;
    let rho = spectral_radius(&(&sys.a + &sys.b * &l.k));
    if rho >= 1.0 {
        return Err(SynthesisError::UnstableClosedLoop(rho));
    }
    Ok(l)
}

/// Terminal cost for the gain `k`: the solution of
/// `(A+BK)' P_f (A+BK) - P_f = -(P + K'RK)` with the stage weights, so the
/// terminal cost decreases by at least the stage cost under `u = Kx`. It
/// equals the Riccati solution when the LQR and stage weights coincide.
pub fn terminal_cost(sys: &SystemConfig, k: &DMatrix<f64>) -> Result<DMatrix<f64>, SynthesisError> {
    let acl = &sys.a + &sys.b * k;
    let q = &sys.cost.state + k.transpose() * &sys.cost.input * k;
    Ok(solve_lyapunov(&acl, &q)?)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().fold(0.0f64, |r, e| r.max(e.norm()))
}

/// Quantile of `g_j' w` at level `1 - alpha_j` for every chance row.
pub fn chance_quantiles(sys: &SystemConfig) -> Result<Vec<Quantile>, SynthesisError> {
    let Constraints::Stochastic(cc) = &sys.constraints else {
        return Ok(Vec::new());
    };
    cc.row_alpha()
        .iter()
        .enumerate()
        .map(|(j, alpha)| {
            let g = cc.g.row(j).transpose();
            quantile_linear(&g, &sys.noise, sys.noise_kind, 1.0 - alpha)
                .map_err(|e| SynthesisError::Invalid(format!("quantile of row {j}: {e}")))
        })
        .collect()
}

/// LQR gain, terminal cost, terminal set, and quantiles for the configured
/// mode.
pub fn synthesize(sys: &SystemConfig) -> Result<TerminalIngredients, SynthesisError> {
    let errs = sys.validate();
    if !errs.is_empty() {
        let msg: Vec<String> = errs.iter().map(|(p, m)| format!("{p}: {m}")).collect();
        return Err(SynthesisError::Invalid(msg.join("; ")));
    }
    let l = lqr(sys)?;
    let rb = rate_bounds(&sys.rate, &sys.e).map_err(|e| SynthesisError::Invalid(e.to_string()))?;
    let quantiles = chance_quantiles(sys)?;
    let (set, iterations) = match sys.mode() {
        Mode::Robust => robust_terminal_set(sys, &l.k)?,
        Mode::Stochastic => {
            let q: Vec<f64> = quantiles.iter().map(|q| q.value).collect();
            stochastic_terminal_set(sys, &l.k, &q)?
        }
    };
    let p_f = terminal_cost(sys, &l.k)?;
    Ok(TerminalIngredients {
        kind: sys.mode(),
        k: l.k,
        p_f,
        set,
        quantiles,
        rate_bounds: rb,
        iterations,
    })
}

/// Maximal robust positive invariant set of `x+ = (A + BK) x + w + E theta`
/// inside `{x : (C + DK) x <= b}` for `w` in the noise box and `theta` in
/// `Omega`. Robust mode only.
pub fn robust_terminal_set(sys: &SystemConfig, k: &DMatrix<f64>) -> Result<(Polytope, usize), SynthesisError> {
    let Constraints::Robust(mc) = &sys.constraints else {
        return Err(SynthesisError::Invalid("robust terminal set needs mixed constraints".into()));
    };
    let initial = Polytope::new(&mc.c + &mc.d * k, mc.b.clone())?;
    invariant_set(initial, sys, k)
}

/// Invariant set for the chance-constrained problem: hard input rows
/// `H_u K x <= h_u` and one-step tightened rows
/// `g_j'(A + BK) x <= h_j - q_j - max_{theta in Omega} g_j' E theta`, made
/// robustly invariant.
pub fn stochastic_terminal_set(
    sys: &SystemConfig,
    k: &DMatrix<f64>,
    quantiles: &[f64],
) -> Result<(Polytope, usize), SynthesisError> {
    let Constraints::Stochastic(cc) = &sys.constraints else {
        return Err(SynthesisError::Invalid("stochastic terminal set needs chance constraints".into()));
    };
    if quantiles.len() != cc.h.len() {
        return Err(SynthesisError::Invalid(format!(
            "{} quantiles for {} chance rows",
            quantiles.len(),
            cc.h.len()
        )));
    }
    let acl = &sys.a + &sys.b * k;
    let s = cc.h.len();
    let o = cc.h_u_bound.len();
    let n = sys.n();
    let mut normals = DMatrix::zeros(o + s, n);
    let mut offsets = DVector::zeros(o + s);
    normals.rows_mut(0, o).copy_from(&(&cc.h_u * k));
    offsets.rows_mut(0, o).copy_from(&cc.h_u_bound);
    for j in 0..s {
        let g = cc.g.row(j);
        normals.row_mut(o + j).copy_from(&(g * &acl));
        let offset_worst = support_value(&sys.omega, &(sys.e.transpose() * g.transpose()))?;
        offsets[o + j] = cc.h[j] - quantiles[j] - offset_worst;
    }
    invariant_set(Polytope::new(normals, offsets)?, sys, k)
}

/// Greatest fixed point of `X -> X ∩ Pre(X)` starting from `initial`, with
/// `Pre(X) = {x : (A+BK) x + w + E theta in X for all w, theta}`.
fn invariant_set(initial: Polytope, sys: &SystemConfig, k: &DMatrix<f64>) -> Result<(Polytope, usize), SynthesisError> {
    let acl = &sys.a + &sys.b * k;
    let rho = spectral_radius(&acl);
    if rho >= 1.0 {
        return Err(SynthesisError::UnstableClosedLoop(rho));
    }
    let mut cur = prune(&initial)?;
    for it in 0..TOL.invariant_max_iterations {
        let (pre_h, pre_o) = pre_rows(&cur, &acl, &sys.noise, &sys.e, &sys.omega)?;
        let mut invariant = true;
        for i in 0..pre_o.len() {
            let row = pre_h.row(i).transpose();
            match cur.support(&row)? {
                Support::Bounded(v) if v <= pre_o[i] + TOL.containment => {}
                _ => {
                    invariant = false;
                    break;
                }
            }
        }
        if invariant {
            if !cur.contains(&DVector::zeros(sys.n())) {
                return Err(SynthesisError::OriginExcluded);
            }
            return Ok((cur, it));
        }
        cur = prune(&cur.intersect_rows(&pre_h, &pre_o)?)?;
    }
    Err(SynthesisError::NoConvergence(TOL.invariant_max_iterations))
}

fn prune(p: &Polytope) -> Result<Polytope, SynthesisError> {
    match p.remove_redundant() {
        Err(GeometryError::EmptySet) => Err(SynthesisError::EmptyTerminalSet),
        other => Ok(other?),
    }
}

/// Rows `Y_i (A+BK) x <= z_i - max_w Y_i w - max_theta Y_i E theta`.
fn pre_rows(
    set: &Polytope,
    acl: &DMatrix<f64>,
    noise: &BoxSet,
    e: &DMatrix<f64>,
    omega: &Polytope,
) -> Result<(DMatrix<f64>, DVector<f64>), SynthesisError> {
    let normals = set.normals() * acl;
    let mut offsets = set.offsets().clone();
    for i in 0..set.rows() {
        let y = set.normals().row(i).transpose();
        offsets[i] -= box_support(noise, &y) + support_value(omega, &(e.transpose() * &y))?;
    }
    Ok((normals, offsets))
}

/// `max_{w in box} y'w` in closed form.
pub fn box_support(b: &BoxSet, y: &DVector<f64>) -> f64 {
    y.iter()
        .enumerate()
        .map(|(i, yi)| if *yi >= 0.0 { yi * b.upper[i] } else { yi * b.lower[i] })
        .sum()
}

fn support_value(p: &Polytope, c: &DVector<f64>) -> Result<f64, SynthesisError> {
    if c.amax() == 0.0 {
        return Ok(0.0);
    }
    Ok(p.support(c)?.value()?)
}
