//! Oracles shared by the integration tests and the acceptance suite. Each one
//! rebuilds its answer from the system data instead of reusing the stacked
//! model or the dualized program.
#![allow(dead_code)]

use adaptive_mpc::adaptation::FeasibleParameterSet;
use adaptive_mpc::controller::{Controller, QpBackend};
use adaptive_mpc::error::ControllerError;
use adaptive_mpc::geometry::{BoxSet, Polytope};
use adaptive_mpc::model::{Constraints, Mode, SystemConfig};
use adaptive_mpc::solver::{solve_qp, QpProblem, SolveStatus};
use adaptive_mpc::synthesis::{synthesize, TerminalIngredients};
use adaptive_mpc::verification::{robustify_by_vertices, Block};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// The benchmark with a point noise set and a point offset set.
pub fn zero_uncertainty(mode: Mode) -> SystemConfig {
    let mut sys = SystemConfig::benchmark(mode);
    let zero = DVector::zeros(2);
    sys.noise = BoxSet::new(zero.clone(), zero.clone()).unwrap();
    sys.omega = Polytope::from_box(zero.clone(), zero.clone()).unwrap();
    sys.rate = Polytope::from_box(zero.clone(), zero).unwrap();
    sys
}

/// Predicted state `x_k` as an affine map `x_k = Phi x + Gamma v`, built by
/// stepping the model.
fn rollout(sys: &SystemConfig, k: usize, horizon: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (sys.n(), sys.m());
    let mut phi = DMatrix::identity(n, n);
    let mut gamma = DMatrix::zeros(n, m * horizon);
    for s in 0..k {
        phi = &sys.a * phi;
        gamma = &sys.a * gamma;
        let mut col = gamma.view_mut((0, s * m), (n, m));
        col += &sys.b;
    }
    (phi, gamma)
}

/// First input of the certainty-equivalent MPC at `x`: nominal predictions,
/// the mode's constraints without any tightening, and the terminal set.
pub fn nominal_first_input(sys: &SystemConfig, terminal: &TerminalIngredients, x: &DVector<f64>) -> Option<DVector<f64>> {
    let (m, horizon) = (sys.m(), sys.horizon);
    let nv = m * horizon;
    let mut h = DMatrix::zeros(nv, nv);
    let mut f = DVector::zeros(nv);
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for k in 0..=horizon {
        let (phi, gamma) = rollout(sys, k, horizon);
        let free = &phi * x;
        let w = if k == horizon { &terminal.p_f } else { &sys.cost.state };
        h += 2.0 * gamma.transpose() * w * &gamma;
        f += 2.0 * gamma.transpose() * w * &free;
        let mut push = |lhs: DMatrix<f64>, rhs: DVector<f64>| {
            for i in 0..rhs.len() {
                rows.push((lhs.row(i).transpose(), rhs[i]));
            }
        };
        let sel = |k: usize| {
            let mut s = DMatrix::zeros(m, nv);
            s.view_mut((0, k * m), (m, m)).fill_with_identity();
            s
        };
        if k == horizon {
            let y = terminal.set.normals();
            push(y * &gamma, terminal.set.offsets() - y * &free);
            continue;
        }
        match &sys.constraints {
            Constraints::Robust(mc) => push(&mc.c * &gamma + &mc.d * sel(k), &mc.b - &mc.c * &free),
            Constraints::Stochastic(cc) => {
                let (phi1, gamma1) = rollout(sys, k + 1, horizon);
                let q = DVector::from_iterator(cc.h.len(), terminal.quantiles.iter().map(|q| q.value));
                push(&cc.g * &gamma1, &cc.h - q - &cc.g * (phi1 * x));
                push(&cc.h_u * sel(k), cc.h_u_bound.clone());
            }
        }
    }
    for k in 0..horizon {
        let mut block = h.view_mut((k * m, k * m), (m, m));
        block += 2.0 * &sys.cost.input;
    }
    let a = DMatrix::from_fn(rows.len(), nv, |i, j| rows[i].0[j]);
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let r = solve_qp(&QpProblem::new(h, f, a, b)).ok()?;
    (r.status == SolveStatus::Optimal).then(|| r.primal.rows(0, m).into_owned())
}

/// A short-horizon perturbation of the benchmark with a feasible parameter set
/// after a few random measurements, and a state at which to solve.
pub struct Instance {
    pub controller: Controller,
    pub fps: FeasibleParameterSet,
    pub x: DVector<f64>,
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(lo.len(), |i, _| rng.gen_range(lo[i]..=hi[i]))
}

/// Draws instances until synthesis succeeds.
pub fn random_instance(rng: &mut ChaCha8Rng, mode: Mode, max_horizon: usize) -> Instance {
    loop {
        let mut sys = SystemConfig::benchmark(mode);
        sys.horizon = rng.gen_range(1..=max_horizon);
        sys.a[(0, 1)] += rng.gen_range(-0.3..0.3);
        sys.a[(1, 1)] += rng.gen_range(-0.2..0.1);
        let wb = rng.gen_range(0.02..0.1);
        sys.noise = BoxSet::symmetric(DVector::from_element(2, wb)).unwrap();
        let ob = rng.gen_range(0.1..0.5);
        sys.omega = Polytope::from_box(DVector::from_element(2, -ob), DVector::from_element(2, ob)).unwrap();
        let rate = rng.gen_range(0.01..0.05);
        sys.rate = Polytope::from_box(DVector::from_element(2, -rate), DVector::from_element(2, rate)).unwrap();
        let Ok(terminal) = synthesize(&sys) else { continue };
        let controller = Controller::new(&sys, &terminal).unwrap().with_backend(QpBackend::Dense);
        let mut fps = FeasibleParameterSet::initial(&sys.omega);
        let theta = uniform_in(rng, &DVector::from_element(2, -ob), &DVector::from_element(2, ob));
        for _ in 0..rng.gen_range(0..4) {
            let x_prev = uniform_in(rng, &DVector::from_element(2, -1.0), &DVector::from_element(2, 1.0));
            let u_prev = DVector::from_element(1, rng.gen_range(-1.0..1.0));
            let w = uniform_in(rng, &sys.noise.lower, &sys.noise.upper);
            let x_now = &sys.a * &x_prev + &sys.b * &u_prev + &sys.e * &theta + w;
            fps = fps.update(&x_prev, &u_prev, &x_now, &sys, &terminal.rate_bounds).unwrap();
        }
        let x = uniform_in(rng, &DVector::from_element(2, -0.8), &DVector::from_element(2, 0.8));
        return Instance { controller, fps, x };
    }
}

/// Largest gap between the dual row bounds of the solved program and the
/// vertex-enumerated worst case of the returned policy, over all rows. `None`
/// when the program is infeasible at the drawn state.
pub fn duality_gap(inst: &Instance) -> Result<Option<f64>, ControllerError> {
    let ctrl = &inst.controller;
    let out = match ctrl.step(inst.fps.t(), &inst.x, &inst.fps) {
        Ok(o) => o,
        Err(ControllerError::InfeasibleStep { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let sys = &ctrl.sys;
    let sm = &ctrl.stacked;
    let (n, p, horizon) = (sys.n(), sys.p(), sys.horizon);
    let predicted = inst.fps.predict(horizon, &sys.omega);
    let mut blocks = Vec::new();
    for j in 0..horizon {
        blocks.push(Block::Box { coords: (j * n..(j + 1) * n).collect(), set: sys.noise.clone() });
        blocks.push(Block::Polygon {
            coords: (n * horizon + j * p..n * horizon + (j + 1) * p).collect(),
            set: predicted.sets[j].clone(),
        });
    }
    let gains = &out.diagnostics.policy.m;
    let mut worst = 0.0f64;
    for i in 0..sm.rows() {
        let a_w = sm.f.row(i) * gains + sm.g_d.row(i);
        let mut lifted = DVector::zeros((n + p) * horizon);
        for j in 0..horizon {
            let aj = a_w.columns(j * n, n).transpose();
            lifted.rows_mut(j * n, n).copy_from(&aj);
            let th = sys.e.transpose() * &aj + sm.g_theta.row(i).columns(j * p, p).transpose();
            lifted.rows_mut(n * horizon + j * p, p).copy_from(&th);
        }
        let exact = robustify_by_vertices(&lifted, &blocks).map_err(ControllerError::Geometry)?;
        worst = worst.max((out.diagnostics.row_bounds[i] - exact).abs());
    }
    Ok(Some(worst))
}
