//! Seeded closed-loop simulation: noise and offset generation, single runs,
//! Monte Carlo campaigns, and their comparison.

mod records;

pub use records::{write_campaign, write_fps_sidecar, write_trajectory_csv, trajectory_csv_header, METRICS_SCHEMA_VERSION};

use nalgebra::DVector;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{prediction_error_ratio, rate_bounds, FeasibleParameterSet, FpsSnapshot, LmsEstimate};
use crate::controller::Controller;
use crate::error::SimError;
use crate::geometry::BoxSet;
use crate::model::{Mode, NoiseKind, SystemConfig};

/// ChaCha words reserved per time step; every draw of one step fits in it.
const WORDS_PER_STEP: u128 = 64;

/// Process noise generator.
///
/// A sample is a pure function of `(seed, trajectory, t)`: the trajectory
/// selects the ChaCha stream and the step selects the word position, so
/// trajectories never share draws and can be generated in any order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub bounds: BoxSet,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, bounds: BoxSet, seed: u64) -> Result<Self, SimError> {
        if 2 * bounds.dim() as u128 > WORDS_PER_STEP {
            return Err(SimError::Invalid(format!("noise dimension {} is too large", bounds.dim())));
        }
        Ok(Self { kind, bounds, seed })
    }

    pub fn sample(&self, trajectory: u64, t: usize) -> DVector<f64> {
        let NoiseKind::Uniform = self.kind;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trajectory);
        rng.set_word_pos(t as u128 * WORDS_PER_STEP);
        let n = self.bounds.dim();
        DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let (lo, hi) = (self.bounds.lower[i], self.bounds.upper[i]);
                if hi > lo {
                    Uniform::new_inclusive(lo, hi).sample(&mut rng)
                } else {
                    lo
                }
            }),
        )
    }
}

/// Offset schedule with a constant increment per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetSchedule {
    pub theta0: DVector<f64>,
    pub delta: DVector<f64>,
}

/// True offsets `theta_0, ..., theta_T`, one more than the number of steps so
/// that the set after the last measurement can be checked against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetTrajectory {
    pub values: Vec<DVector<f64>>,
}

impl OffsetTrajectory {
    /// Validates explicit offsets: every value in `Omega`, every increment in
    /// the rate set.
    pub fn new(sys: &SystemConfig, values: Vec<DVector<f64>>) -> Result<Self, SimError> {
        let bad = |m: String| Err(SimError::InvalidOffsetSchedule(m));
        if values.is_empty() {
            return bad("no offsets".into());
        }
        for (t, v) in values.iter().enumerate() {
            if v.len() != sys.p() {
                return bad(format!("offset {t} has dimension {}, expected {}", v.len(), sys.p()));
            }
            if !v.iter().all(|x| x.is_finite()) || !sys.omega.contains(v) {
                return bad(format!("offset {t} = {:?} leaves the offset set", v.as_slice()));
            }
            if t > 0 {
                let d = v - &values[t - 1];
                if !sys.rate.contains(&d) {
                    return bad(format!("increment {t} = {:?} leaves the rate set", d.as_slice()));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }
}

/// `theta_t = theta_0 + t delta` for `t = 0..=steps`. Schedules that leave
/// the offset set are rejected, never clipped.
pub fn gen_offset(sys: &SystemConfig, schedule: &OffsetSchedule, steps: usize) -> Result<OffsetTrajectory, SimError> {
    if schedule.theta0.len() != sys.p() || schedule.delta.len() != sys.p() {
        return Err(SimError::InvalidOffsetSchedule(format!(
            "schedule dimensions ({}, {}) for p = {}",
            schedule.theta0.len(),
            schedule.delta.len(),
            sys.p()
        )));
    }
    let values = (0..=steps).map(|t| &schedule.theta0 + &schedule.delta * t as f64).collect();
    OffsetTrajectory::new(sys, values)
}

/// Everything a campaign shares across trajectories.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub controller: Controller,
    pub noise: NoiseModel,
    pub offset: OffsetTrajectory,
    pub x0: DVector<f64>,
    /// LMS step size; `None` leaves the point estimate off.
    pub lms_mu: Option<f64>,
}

impl Experiment {
    pub fn sys(&self) -> &SystemConfig {
        &self.controller.sys
    }

    pub fn steps(&self) -> usize {
        self.offset.steps()
    }
}

/// LMS estimates along a run and the resulting prediction-error ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmsTrace {
    pub mu: f64,
    /// `theta_bar_0, ..., theta_bar_T`.
    pub theta_bar: Vec<DVector<f64>>,
    /// `x_{t+1} - w_t - (A x_t + B u_t + E theta_bar_t)`.
    pub prediction_errors: Vec<DVector<f64>>,
    pub ratio: f64,
}

/// One closed-loop run. Step `t` maps `x_t` to `x_{t+1}`; violation flags of
/// step `t` refer to `x_{t+1}` (state rows) and `u_t` (input rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub trajectory: u64,
    pub seed: u64,
    /// `x_0, ..., x_T`.
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub noise: Vec<DVector<f64>>,
    /// `theta_0, ..., theta_T`.
    pub offsets: Vec<DVector<f64>>,
    /// `x_t'P x_t + u_t'R u_t`.
    pub stage_costs: Vec<f64>,
    pub j_star: Vec<f64>,
    /// `Theta_0, ..., Theta_T`.
    pub fps: Vec<FpsSnapshot>,
    pub state_violations: Vec<Vec<bool>>,
    pub input_violations: Vec<Vec<bool>>,
    pub lms: Option<LmsTrace>,
}

impl TrajectoryRecord {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn total_cost(&self) -> f64 {
        self.stage_costs.iter().sum()
    }

    /// Steps whose successor state breaks at least one state row.
    pub fn violating_steps(&self) -> usize {
        self.state_violations.iter().filter(|f| f.iter().any(|v| *v)).count()
    }

    pub fn input_violation_count(&self) -> usize {
        self.input_violations.iter().filter(|f| f.iter().any(|v| *v)).count()
    }
}

/// Runs the adaptive MPC loop: solve at `x_t` with `Theta_t`, apply the first
/// input, step the plant with the true offset and sampled noise, update the
/// parameter set with the new measurement.
pub fn run_closed_loop(exp: &Experiment, trajectory: u64) -> Result<TrajectoryRecord, SimError> {
    let sys = exp.sys();
    let steps = exp.steps();
    if exp.x0.len() != sys.n() {
        return Err(SimError::Invalid(format!("initial state of length {} for n = {}", exp.x0.len(), sys.n())));
    }
    if exp.noise.bounds.dim() != sys.n() {
        return Err(SimError::Invalid("noise model does not match the state dimension".into()));
    }
    let rb = rate_bounds(&sys.rate, &sys.e)?;
    let (g, h) = sys.state_rows();
    let (hu, hu_b) = sys.input_rows();
    let mut lms = match exp.lms_mu {
        Some(mu) => Some((LmsEstimate::new(DVector::zeros(sys.p()), mu, &sys.e)?, Vec::new(), Vec::new())),
        None => None,
    };

    let mut fps = FeasibleParameterSet::initial(&sys.omega);
    let mut x = exp.x0.clone();
    let mut rec = TrajectoryRecord {
        trajectory,
        seed: exp.noise.seed,
        states: vec![x.clone()],
        inputs: Vec::with_capacity(steps),
        noise: Vec::with_capacity(steps),
        offsets: exp.offset.values.clone(),
        stage_costs: Vec::with_capacity(steps),
        j_star: Vec::with_capacity(steps),
        fps: vec![fps.snapshot()],
        state_violations: Vec::with_capacity(steps),
        input_violations: Vec::with_capacity(steps),
        lms: None,
    };
    for t in 0..steps {
        let out = exp.controller.step(t, &x, &fps)?;
        let u = out.u;
        let w = exp.noise.sample(trajectory, t);
        let theta = &exp.offset.values[t];
        let x_next = &sys.a * &x + &sys.b * &u + &sys.e * theta + &w;

        if let Some((est, thetas, errors)) = lms.as_mut() {
            let pred = est.predict(sys, &x, &u);
            errors.push(&x_next - &w - &pred);
            thetas.push(est.theta_bar.clone());
            *est = est.update(&x_next, &pred, &sys.e, &sys.omega)?;
        }

        let gx = &g * &x_next;
        let hu_u = &hu * &u;
        rec.state_violations.push((0..h.len()).map(|i| gx[i] > h[i]).collect());
        rec.input_violations.push((0..hu_b.len()).map(|i| hu_u[i] > hu_b[i]).collect());
        rec.stage_costs.push(x.dot(&(&sys.cost.state * &x)) + u.dot(&(&sys.cost.input * &u)));
        rec.j_star.push(out.j_star);

        fps = fps.update(&x, &u, &x_next, sys, &rb)?;
        rec.fps.push(fps.snapshot());
        rec.inputs.push(u);
        rec.noise.push(w);
        rec.states.push(x_next.clone());
        x = x_next;
    }
    if let Some((est, mut thetas, errors)) = lms {
        thetas.push(est.theta_bar.clone());
        let mu = est.mu;
        let ratio = prediction_error_ratio(&errors, &rec.noise, &thetas[0], &exp.offset.values[0], mu);
        rec.lms = Some(LmsTrace { mu, theta_bar: thetas, prediction_errors: errors, ratio });
    }
    Ok(rec)
}

/// Aggregate results of a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignMetrics {
    pub schema_version: u32,
    pub mode: Mode,
    pub n_traj: usize,
    pub steps: usize,
    pub horizon: usize,
    pub base_seed: u64,
    pub x0: Vec<f64>,
    /// True offsets `theta_0, ..., theta_T`.
    pub offsets: Vec<Vec<f64>>,
    /// Fraction of (trajectory, step) pairs whose successor state breaks a
    /// state row.
    pub violation_rate: f64,
    pub violating_steps: usize,
    /// Steps applying an input outside the hard input rows.
    pub input_violations: usize,
    pub infeasible_count: usize,
    pub mean_cost: f64,
    pub costs: Vec<f64>,
    /// Stage costs per trajectory and step.
    pub stage_costs: Vec<Vec<f64>>,
}

/// Aggregates records in trajectory order.
pub fn metrics(exp: &Experiment, records: &[TrajectoryRecord]) -> Result<CampaignMetrics, SimError> {
    if records.is_empty() {
        return Err(SimError::Invalid("no trajectories".into()));
    }
    let steps = exp.steps();
    let costs: Vec<f64> = records.iter().map(TrajectoryRecord::total_cost).collect();
    let violating_steps: usize = records.iter().map(TrajectoryRecord::violating_steps).sum();
    let pairs = records.len() * steps;
    Ok(CampaignMetrics {
        schema_version: METRICS_SCHEMA_VERSION,
        mode: exp.sys().mode(),
        n_traj: records.len(),
        steps,
        horizon: exp.sys().horizon,
        base_seed: exp.noise.seed,
        x0: exp.x0.iter().copied().collect(),
        offsets: exp.offset.values.iter().map(|v| v.iter().copied().collect()).collect(),
        violation_rate: if pairs == 0 { 0.0 } else { violating_steps as f64 / pairs as f64 },
        violating_steps,
        input_violations: records.iter().map(TrajectoryRecord::input_violation_count).sum(),
        infeasible_count: 0,
        mean_cost: costs.iter().sum::<f64>() / costs.len() as f64,
        costs,
        stage_costs: records.iter().map(|r| r.stage_costs.clone()).collect(),
    })
}

/// Records and metrics of one campaign.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub records: Vec<TrajectoryRecord>,
    pub metrics: CampaignMetrics,
}

/// Runs trajectories `0..n` in parallel. The first failing trajectory aborts
/// the campaign with its id; an infeasible step is never absorbed into the
/// metrics.
pub fn monte_carlo(exp: &Experiment, n: usize) -> Result<Campaign, SimError> {
    if n == 0 {
        return Err(SimError::Invalid("a campaign needs at least one trajectory".into()));
    }
    let results: Vec<Result<TrajectoryRecord, SimError>> =
        (0..n as u64).into_par_iter().map(|i| run_closed_loop(exp, i)).collect();
    let mut records = Vec::with_capacity(n);
    for (i, r) in results.into_iter().enumerate() {
        records.push(r.map_err(|e| SimError::Trajectory { trajectory: i, source: Box::new(e) })?);
    }
    let metrics = metrics(exp, &records)?;
    Ok(Campaign { records, metrics })
}

/// Robust against stochastic under identical noise, offsets, start, and
/// horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub mean_robust: f64,
    pub mean_stochastic: f64,
    /// `(mean_robust - mean_stochastic) / mean_robust`.
    pub reduction: f64,
    /// Per trajectory `(robust, stochastic)` closed-loop cost.
    pub cost_pairs: Vec<(f64, f64)>,
    /// Fraction of trajectories where the stochastic cost does not exceed the
    /// robust one.
    pub stochastic_not_worse: f64,
    /// Mean stage cost per step over all trajectories.
    pub stage_cost_robust: Vec<f64>,
    pub stage_cost_stochastic: Vec<f64>,
}

pub fn compare_campaigns(robust: &CampaignMetrics, stochastic: &CampaignMetrics) -> Result<Comparison, SimError> {
    let mismatch = |what: &str| Err(SimError::SeedMismatch(format!("{what} differs between the campaigns")));
    if robust.base_seed != stochastic.base_seed {
        return mismatch("base seed");
    }
    if robust.n_traj != stochastic.n_traj {
        return mismatch("trajectory count");
    }
    if robust.steps != stochastic.steps {
        return mismatch("step count");
    }
    if robust.horizon != stochastic.horizon {
        return mismatch("horizon");
    }
    if robust.offsets != stochastic.offsets {
        return mismatch("offset trajectory");
    }
    if robust.x0 != stochastic.x0 {
        return mismatch("initial state");
    }
    let mean_step = |m: &CampaignMetrics| -> Vec<f64> {
        (0..m.steps)
            .map(|t| m.stage_costs.iter().map(|c| c[t]).sum::<f64>() / m.n_traj as f64)
            .collect()
    };
    let cost_pairs: Vec<(f64, f64)> = robust.costs.iter().copied().zip(stochastic.costs.iter().copied()).collect();
    let not_worse = cost_pairs.iter().filter(|(r, s)| s <= r).count();
    Ok(Comparison {
        schema_version: METRICS_SCHEMA_VERSION,
        mean_robust: robust.mean_cost,
        mean_stochastic: stochastic.mean_cost,
        reduction: (robust.mean_cost - stochastic.mean_cost) / robust.mean_cost,
        stochastic_not_worse: not_worse as f64 / cost_pairs.len() as f64,
        cost_pairs,
        stage_cost_robust: mean_step(robust),
        stage_cost_stochastic: mean_step(stochastic),
    })
}

/// Offsets in `Theta_t` for every recorded step; returns the steps where the
/// true offset was not contained or the set was empty.
pub fn offset_containment_failures(rec: &TrajectoryRecord, tol: f64) -> Result<Vec<usize>, SimError> {
    let mut failures = Vec::new();
    for (t, snap) in rec.fps.iter().enumerate() {
        let fps = FeasibleParameterSet::from_snapshot(snap)?;
        if fps.set().is_empty()? || !fps.set().contains_with_tol(&rec.offsets[t], tol) {
            failures.push(t);
        }
    }
    Ok(failures)
}
