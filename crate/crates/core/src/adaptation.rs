//! Set-membership adaptation of the offset: the feasible parameter set, its
//! predicted inflation over the horizon, and an optional LMS point estimate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{AdaptationError, GeometryError};
use crate::geometry::{Polytope, Support};
use crate::model::SystemConfig;
use crate::solver::{solve_lp, solve_qp, LpProblem, QpProblem, SolveStatus};
use crate::tolerance::TOL;

/// Componentwise range of `E nu` over the rate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBounds {
    pub nu_lower: DVector<f64>,
    pub nu_upper: DVector<f64>,
}

/// Minimizes and maximizes each component of `E nu` over `rate` (2n LPs).
pub fn rate_bounds(rate: &Polytope, e: &DMatrix<f64>) -> Result<RateBounds, AdaptationError> {
    if e.ncols() != rate.dim() {
        return Err(AdaptationError::Invalid(format!(
            "E has {} columns but the rate set has dimension {}",
            e.ncols(),
            rate.dim()
        )));
    }
    let n = e.nrows();
    let mut lo = DVector::zeros(n);
    let mut hi = DVector::zeros(n);
    for i in 0..n {
        let row = e.row(i).transpose();
        hi[i] = rate.support(&row)?.value()?;
        lo[i] = -rate.support(&-row)?.value()?;
    }
    Ok(RateBounds { nu_lower: lo, nu_upper: hi })
}

/// `Theta_t` together with the per-step growth of each row's offset.
///
/// The first `r0` rows are the rows of `Omega` and never grow. Every other row
/// comes from a measurement and grows by `-nu_lower_i` (rows with normal
/// `-E_i`) or `nu_upper_i` (rows with normal `E_i`) per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleParameterSet {
    set: Polytope,
    growth: DVector<f64>,
    t: usize,
    r0: usize,
}

/// Serializable copy of a feasible parameter set at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpsSnapshot {
    pub t: usize,
    pub r0: usize,
    pub normals: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    pub growth: Vec<f64>,
}

/// `Theta_{t|t}, ..., Theta_{t+N|t}`; the last entry is `Omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedFps {
    pub sets: Vec<Polytope>,
}

impl FeasibleParameterSet {
    /// `Theta_0 = Omega`.
    pub fn initial(omega: &Polytope) -> Self {
        Self {
            set: omega.clone(),
            growth: DVector::zeros(omega.rows()),
            t: 0,
            r0: omega.rows(),
        }
    }

    pub fn from_parts(set: Polytope, growth: DVector<f64>, t: usize, r0: usize) -> Result<Self, AdaptationError> {
        if growth.len() != set.rows() || r0 > set.rows() {
            return Err(AdaptationError::Invalid(format!(
                "{} rows, {} growth entries, r0 = {r0}",
                set.rows(),
                growth.len()
            )));
        }
        if growth.rows(0, r0).iter().any(|g| *g != 0.0) || growth.iter().any(|g| *g < 0.0) {
            return Err(AdaptationError::Invalid(
                "leading rows must not grow and growth must be nonnegative".into(),
            ));
        }
        Ok(Self { set, growth, t, r0 })
    }

    pub fn set(&self) -> &Polytope {
        &self.set
    }

    pub fn growth(&self) -> &DVector<f64> {
        &self.growth
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn r0(&self) -> usize {
        self.r0
    }

    /// The set after `steps` rate-bound inflations without new data.
    pub fn inflate(&self, steps: usize) -> Polytope {
        let mut h = self.set.offsets().clone();
        for _ in 0..steps {
            h += &self.growth;
        }
        Polytope::new(self.set.normals().clone(), h).expect("inflation keeps the shape")
    }

    /// Predicted sets over a horizon of `horizon` steps; the terminal entry is
    /// `omega` itself.
    pub fn predict(&self, horizon: usize, omega: &Polytope) -> PredictedFps {
        let mut sets = Vec::with_capacity(horizon + 1);
        sets.push(self.set.clone());
        for k in 1..horizon {
            sets.push(self.inflate(k));
        }
        sets.push(omega.clone());
        PredictedFps { sets }
    }

    /// Rows added by the measurement `(x_prev, u_prev, x_now)`, already
    /// inflated by one step: `-E theta <= -r + w_hi - nu_lo` and
    /// `E theta <= r - w_lo + nu_hi` with `r = x_now - A x_prev - B u_prev`.
    fn measurement_rows(
        x_prev: &DVector<f64>,
        u_prev: &DVector<f64>,
        x_now: &DVector<f64>,
        sys: &SystemConfig,
        rb: &RateBounds,
    ) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let n = sys.n();
        let p = sys.p();
        let r = x_now - &sys.a * x_prev - &sys.b * u_prev;
        let mut normals = DMatrix::zeros(2 * n, p);
        normals.rows_mut(0, n).copy_from(&(-&sys.e));
        normals.rows_mut(n, n).copy_from(&sys.e);
        let mut offsets = DVector::zeros(2 * n);
        let mut growth = DVector::zeros(2 * n);
        for i in 0..n {
            offsets[i] = -r[i] + sys.noise.upper[i] - rb.nu_lower[i];
            offsets[n + i] = r[i] - sys.noise.lower[i] + rb.nu_upper[i];
            growth[i] = -rb.nu_lower[i];
            growth[n + i] = rb.nu_upper[i];
        }
        (normals, offsets, growth)
    }

    /// Recursion without any row removal.
    pub fn update_unpruned(
        &self,
        x_prev: &DVector<f64>,
        u_prev: &DVector<f64>,
        x_now: &DVector<f64>,
        sys: &SystemConfig,
        rb: &RateBounds,
    ) -> Result<Self, AdaptationError> {
        self.check_dims(x_prev, u_prev, x_now, sys)?;
        let (hn, on, gn) = Self::measurement_rows(x_prev, u_prev, x_now, sys, rb);
        let inflated = self.inflate(1);
        let set = inflated.intersect_rows(&hn, &on)?;
        let mut growth = DVector::zeros(set.rows());
        growth.rows_mut(0, self.set.rows()).copy_from(&self.growth);
        growth.rows_mut(self.set.rows(), gn.len()).copy_from(&gn);
        let next = Self { set, growth, t: self.t + 1, r0: self.r0 };
        if next.set.is_empty()? {
            return Err(AdaptationError::EmptySetAfterUpdate { t: next.t });
        }
        Ok(next)
    }

    /// Recursion followed by removal of measurement rows that are redundant
    /// now and stay redundant under every future inflation, so pruned and
    /// unpruned recursions describe the same sets at all times.
    pub fn update(
        &self,
        x_prev: &DVector<f64>,
        u_prev: &DVector<f64>,
        x_now: &DVector<f64>,
        sys: &SystemConfig,
        rb: &RateBounds,
    ) -> Result<Self, AdaptationError> {
        let next = self.update_unpruned(x_prev, u_prev, x_now, sys, rb)?;
        next.prune()
    }

    /// Drops measurement rows that are permanently redundant.
    pub fn prune(&self) -> Result<Self, AdaptationError> {
        let rows = self.set.rows();
        let mut keep = vec![true; rows];
        for i in self.r0..rows {
            let others: Vec<usize> = (0..rows).filter(|&k| k != i && keep[k]).collect();
            if permanently_redundant(&self.set, &self.growth, i, &others)? {
                keep[i] = false;
            }
        }
        let idx: Vec<usize> = (0..rows).filter(|&k| keep[k]).collect();
        Ok(Self {
            set: self.set.select_rows(&idx),
            growth: self.growth.select_rows(idx.iter()),
            t: self.t,
            r0: self.r0,
        })
    }

    pub fn snapshot(&self) -> FpsSnapshot {
        let h = self.set.normals();
        FpsSnapshot {
            t: self.t,
            r0: self.r0,
            normals: (0..h.nrows()).map(|i| h.row(i).iter().copied().collect()).collect(),
            offsets: self.set.offsets().iter().copied().collect(),
            growth: self.growth.iter().copied().collect(),
        }
    }

    pub fn from_snapshot(s: &FpsSnapshot) -> Result<Self, AdaptationError> {
        let rows = s.normals.len();
        let dim = s.normals.first().map_or(0, |r| r.len());
        if s.normals.iter().any(|r| r.len() != dim) {
            return Err(AdaptationError::Invalid("ragged normals".into()));
        }
        let normals = DMatrix::from_fn(rows, dim, |i, j| s.normals[i][j]);
        let set = Polytope::new(normals, DVector::from_vec(s.offsets.clone()))?;
        Self::from_parts(set, DVector::from_vec(s.growth.clone()), s.t, s.r0)
    }

    fn check_dims(
        &self,
        x_prev: &DVector<f64>,
        u_prev: &DVector<f64>,
        x_now: &DVector<f64>,
        sys: &SystemConfig,
    ) -> Result<(), AdaptationError> {
        if x_prev.len() != sys.n() || x_now.len() != sys.n() || u_prev.len() != sys.m() || self.set.dim() != sys.p() {
            return Err(AdaptationError::Invalid("measurement dimensions do not match the system".into()));
        }
        Ok(())
    }
}

/// Row `i` is redundant with respect to `others` for every number of future
/// inflations `s >= 0`.
///
/// With `v(s) = max { H_i z : H_k z <= h_k + s g_k, k in others }`, the row is
/// permanently redundant iff `v(0) <= h_i` and the right derivative of the
/// concave function `v(s) - s g_i` at zero is nonpositive. That derivative is
/// the smallest `y'g` over the optimal dual multipliers `y`.
fn permanently_redundant(set: &Polytope, growth: &DVector<f64>, i: usize, others: &[usize]) -> Result<bool, GeometryError> {
    if others.is_empty() {
        return Ok(false);
    }
    let rest = set.select_rows(others);
    let c = set.normals().row(i).transpose();
    let value = match rest.support(&c)? {
        Support::Bounded(v) => v,
        Support::Unbounded => return Ok(false),
    };
    let h_i = set.offsets()[i];
    if value > h_i + TOL.redundancy {
        return Ok(false);
    }
    let g_rest = growth.select_rows(others.iter());
    // min g'y  s.t.  H_rest' y = H_i', h_rest' y <= v(0) + tol, y >= 0.
    let k = others.len();
    let h_rest = rest.offsets();
    let a_eq = rest.normals().transpose();
    let slack = TOL.redundancy * (1.0 + value.abs());
    let lp = LpProblem::new(
        g_rest.clone(),
        DMatrix::from_row_slice(1, k, h_rest.as_slice()),
        DVector::from_element(1, value + slack),
    )
    .with_eq(a_eq, c)
    .with_lower(vec![0.0; k]);
    let r = solve_lp(&lp)?;
    if r.status != SolveStatus::Optimal {
        return Ok(false);
    }
    Ok(r.objective <= growth[i] + TOL.redundancy)
}

/// Largest growth, over `directions`, of the support of a predicted set when
/// the prediction is redone one step later: `max h_{k|t+1}(c) - h_{k|t}(c)`
/// over the stages `k = t+1, ..., t+N` both predictions cover. Nested
/// predictions give a value of at most zero.
pub fn nesting_residual(
    earlier: &PredictedFps,
    later: &PredictedFps,
    directions: &[DVector<f64>],
) -> Result<f64, AdaptationError> {
    let horizon = earlier.sets.len() - 1;
    if later.sets.len() != horizon + 1 {
        return Err(AdaptationError::Invalid("predictions of different horizons".into()));
    }
    let mut worst = f64::NEG_INFINITY;
    for k in 1..=horizon {
        for c in directions {
            let before = earlier.sets[k].support(c)?.value()?;
            let after = later.sets[k - 1].support(c)?.value()?;
            worst = worst.max(after - before);
        }
    }
    Ok(worst)
}

/// `k` unit vectors evenly spaced on the circle.
pub fn compass_directions(k: usize) -> Vec<DVector<f64>> {
    (0..k)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / k as f64;
            DVector::from_row_slice(&[a.cos(), a.sin()])
        })
        .collect()
}

/// LMS point estimate of the offset, kept inside `Omega`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmsEstimate {
    pub theta_bar: DVector<f64>,
    pub mu: f64,
}

impl LmsEstimate {
    /// Requires `mu ||E||^2 < 1`.
    pub fn new(theta_bar: DVector<f64>, mu: f64, e: &DMatrix<f64>) -> Result<Self, AdaptationError> {
        let norm = e.singular_values().max();
        if !(mu > 0.0) || mu * norm * norm >= 1.0 {
            return Err(AdaptationError::Invalid(format!(
                "step size {mu} violates mu * ||E||^2 < 1 (||E|| = {norm})"
            )));
        }
        Ok(Self { theta_bar, mu })
    }

    /// One-step prediction `A x + B u + E theta_bar`.
    pub fn predict(&self, sys: &SystemConfig, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &sys.a * x + &sys.b * u + &sys.e * &self.theta_bar
    }

    /// Gradient step on the innovation `x_now - xbar_pred`, then Euclidean
    /// projection onto `omega`.
    pub fn update(
        &self,
        x_now: &DVector<f64>,
        xbar_pred: &DVector<f64>,
        e: &DMatrix<f64>,
        omega: &Polytope,
    ) -> Result<Self, AdaptationError> {
        let step = &self.theta_bar + e.transpose() * (x_now - xbar_pred) * self.mu;
        let theta_bar = project(&step, omega)?;
        Ok(Self { theta_bar, mu: self.mu })
    }
}

/// Euclidean projection onto a polytope.
pub fn project(z: &DVector<f64>, set: &Polytope) -> Result<DVector<f64>, AdaptationError> {
    if set.contains_with_tol(z, 0.0) {
        return Ok(z.clone());
    }
    let p = z.len();
    let qp = QpProblem::new(DMatrix::identity(p, p), -z, set.normals().clone(), set.offsets().clone());
    let r = solve_qp(&qp).map_err(GeometryError::from)?;
    let r = r.require_optimal().map_err(GeometryError::from)?;
    Ok(r.primal)
}

/// `sum ||e_t||^2 / ((1/mu) ||theta_bar_0 - theta_a_0||^2 + sum ||w_t||^2)`,
/// or 0 when the denominator vanishes.
pub fn prediction_error_ratio(
    errors: &[DVector<f64>],
    noise: &[DVector<f64>],
    theta_bar0: &DVector<f64>,
    theta_a0: &DVector<f64>,
    mu: f64,
) -> f64 {
    let num: f64 = errors.iter().map(|e| e.norm_squared()).sum();
    let den = (theta_bar0 - theta_a0).norm_squared() / mu + noise.iter().map(|w| w.norm_squared()).sum::<f64>();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn bench() -> (SystemConfig, RateBounds) {
        let sys = SystemConfig::benchmark(Mode::Robust);
        let rb = rate_bounds(&sys.rate, &sys.e).unwrap();
        (sys, rb)
    }

    fn compass(k: usize) -> Vec<DVector<f64>> {
        (0..k)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / k as f64;
                dvector![a.cos(), a.sin()]
            })
            .collect()
    }

    fn supports(p: &Polytope, dirs: &[DVector<f64>]) -> Vec<f64> {
        dirs.iter().map(|c| p.support(c).unwrap().value().unwrap()).collect()
    }

    #[test]
    fn rate_bound_examples() {
        let (_, rb) = bench();
        assert_eq!(rb.nu_lower, dvector![-0.05, -0.05]);
        assert_eq!(rb.nu_upper, dvector![0.05, 0.05]);

        let rate = Polytope::from_box(dvector![-0.05, -0.05], dvector![0.05, 0.05]).unwrap();
        let rb = rate_bounds(&rate, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(rb.nu_lower.amax(), 0.0);
        assert_eq!(rb.nu_upper.amax(), 0.0);

        let e = dmatrix![1.0, 1.0];
        let rb = rate_bounds(&rate, &e).unwrap();
        let corners = [(-0.05, -0.05), (-0.05, 0.05), (0.05, -0.05), (0.05, 0.05)];
        let vals: Vec<f64> = corners.iter().map(|(a, b)| a + b).collect();
        assert_relative_eq!(rb.nu_lower[0], vals.iter().cloned().fold(f64::INFINITY, f64::min), epsilon = 1e-12);
        assert_relative_eq!(rb.nu_upper[0], vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max), epsilon = 1e-12);
    }

    #[test]
    fn first_update_from_rest() {
        let (sys, rb) = bench();
        let fps = FeasibleParameterSet::initial(&sys.omega);
        let z = dvector![0.0, 0.0];
        let next = fps.update(&z, &dvector![0.0], &z, &sys, &rb).unwrap();
        assert_eq!(next.t(), 1);
        let expect = Polytope::from_box(dvector![-0.15, -0.15], dvector![0.15, 0.15]).unwrap();
        let dirs = compass(16);
        for (a, b) in supports(next.set(), &dirs).iter().zip(supports(&expect, &dirs)) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        // Omega rows survive verbatim as the leading block.
        assert_eq!(next.set().select_rows(&[0, 1, 2, 3]), sys.omega);
    }

    #[test]
    fn inflation_of_a_point() {
        let point = Polytope::from_box(dvector![0.0, 0.0], dvector![0.0, 0.0]).unwrap();
        let fps = FeasibleParameterSet::from_parts(point, dvector![0.05, 0.05, 0.05, 0.05], 0, 0).unwrap();
        let grown = fps.inflate(1);
        let expect = Polytope::from_box(dvector![-0.05, -0.05], dvector![0.05, 0.05]).unwrap();
        assert_eq!(grown, expect);
    }

    #[test]
    fn prediction_examples() {
        let (sys, rb) = bench();
        let fps = FeasibleParameterSet::initial(&sys.omega);
        let pred = fps.predict(1, &sys.omega);
        assert_eq!(pred.sets, vec![sys.omega.clone(), sys.omega.clone()]);

        let z = dvector![0.0, 0.0];
        let fps = fps.update(&z, &dvector![0.0], &z, &sys, &rb).unwrap();
        let pred = fps.predict(6, &sys.omega);
        assert_eq!(pred.sets.len(), 7);
        let expect = Polytope::from_box(dvector![-0.2, -0.2], dvector![0.2, 0.2]).unwrap();
        let dirs = compass(16);
        for (a, b) in supports(&pred.sets[1], &dirs).iter().zip(supports(&expect, &dirs)) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        assert_relative_eq!(pred.sets[5].support(&dvector![1.0, 0.0]).unwrap().value().unwrap(), 0.4, epsilon = 1e-12);
        assert_eq!(pred.sets[6], sys.omega);
    }

    #[test]
    fn empty_update_is_reported() {
        let (sys, rb) = bench();
        let fps = FeasibleParameterSet::initial(&sys.omega);
        // A jump no admissible offset and noise can explain.
        let next = fps.update(&dvector![0.0, 0.0], &dvector![0.0], &dvector![3.0, 0.0], &sys, &rb);
        assert_eq!(next.unwrap_err(), AdaptationError::EmptySetAfterUpdate { t: 1 });
    }

    #[test]
    fn snapshot_round_trip() {
        let (sys, rb) = bench();
        let z = dvector![0.0, 0.0];
        let fps = FeasibleParameterSet::initial(&sys.omega)
            .update(&z, &dvector![0.0], &dvector![0.3, -0.2], &sys, &rb)
            .unwrap();
        assert_eq!(FeasibleParameterSet::from_snapshot(&fps.snapshot()).unwrap(), fps);
    }

    #[test]
    fn lms_examples() {
        let (sys, _) = bench();
        let est = LmsEstimate::new(dvector![0.1, -0.2], 0.4, &sys.e).unwrap();
        let x = dvector![1.0, 2.0];
        assert_eq!(est.update(&x, &x, &sys.e, &sys.omega).unwrap(), est);

        let est = LmsEstimate::new(dvector![0.0, 0.0], 0.4, &sys.e).unwrap();
        let next = est.update(&dvector![1.0, 1.0], &dvector![0.0, 0.0], &sys.e, &sys.omega).unwrap();
        assert_relative_eq!(next.theta_bar, dvector![0.4, 0.4], epsilon = 1e-15);

        let clipped = project(&dvector![0.7, 0.2], &sys.omega).unwrap();
        assert_relative_eq!(clipped, dvector![0.5, 0.2], epsilon = 1e-10);

        assert!(LmsEstimate::new(dvector![0.0, 0.0], 1.0, &sys.e).is_err());
    }

    #[test]
    fn ratio_examples() {
        let z = dvector![0.0, 0.0];
        assert_eq!(prediction_error_ratio(&[z.clone()], &[z.clone()], &z, &z, 0.4), 0.0);
        // Single step without noise: ||E d||^2 / (||d||^2 / mu) <= mu ||E||^2.
        let e = dmatrix![0.9, 0.2; 0.0, 0.7];
        let d = dvector![0.3, -0.1];
        let mu = 0.4;
        let ratio = prediction_error_ratio(&[&e * &d], &[z.clone()], &z, &d, mu);
        assert_relative_eq!(ratio, (&e * &d).norm_squared() * mu / d.norm_squared(), epsilon = 1e-15);
        assert!(ratio <= mu * e.singular_values().max().powi(2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// Pruning never changes the described sets, now or after further
        /// updates and inflations.
        #[test]
        fn pruning_matches_unpruned_recursion(
            noise in proptest::collection::vec(-0.1f64..0.1, 24),
            inputs in proptest::collection::vec(-1.0f64..1.0, 12),
            drift in proptest::collection::vec(-0.05f64..0.05, 24),
        ) {
            let (sys, rb) = bench();
            let sys = sys_scaled(&sys);
            let dirs = compass(16);
            let mut pruned = FeasibleParameterSet::initial(&sys.omega);
            let mut full = pruned.clone();
            let mut x = dvector![0.5, -0.3];
            let mut theta = dvector![0.3, -0.2];
            for t in 0..12 {
                let u = dvector![inputs[t]];
                let w = dvector![noise[2 * t], noise[2 * t + 1]];
                let x_next = &sys.a * &x + &sys.b * &u + &sys.e * &theta + w;
                theta += dvector![drift[2 * t], drift[2 * t + 1]];
                theta = theta.map(|v: f64| v.clamp(-0.5, 0.5));
                pruned = pruned.update(&x, &u, &x_next, &sys, &rb).unwrap();
                full = full.update_unpruned(&x, &u, &x_next, &sys, &rb).unwrap();
                prop_assert!(pruned.set().rows() <= full.set().rows());
                for k in 0..4 {
                    let a = supports(&pruned.inflate(k), &dirs);
                    let b = supports(&full.inflate(k), &dirs);
                    for (p, q) in a.iter().zip(b.iter()) {
                        prop_assert!((p - q).abs() <= 1e-8, "step {} inflation {}: {} vs {}", t, k, p, q);
                    }
                }
                x = x_next;
            }
        }
    }

    /// Benchmark with a contracted plant so random inputs keep states small.
    fn sys_scaled(sys: &SystemConfig) -> SystemConfig {
        let mut s = sys.clone();
        s.a = &sys.a * 0.3;
        s
    }
}
