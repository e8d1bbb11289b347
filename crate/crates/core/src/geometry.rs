//! Polytopes in halfspace form and the LP-backed operations on them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::solver::{solve_lp_with, LpProblem, SolveStatus, SolverSettings};
use crate::tolerance::TOL;

/// Convex set `{z : H z <= h}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
}

/// Result of a support-function evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Bounded(f64),
    Unbounded,
}

impl Support {
    pub fn value(self) -> Result<f64, GeometryError> {
        match self {
            Support::Bounded(v) => Ok(v),
            Support::Unbounded => Err(GeometryError::Unbounded),
        }
    }
}

/// Support value together with its LP certificate: a maximizer `point` and
/// multipliers `y >= 0` with `H' y = c` and `h' y = value`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportCertificate {
    pub value: f64,
    pub point: DVector<f64>,
    pub multipliers: DVector<f64>,
}

/// Axis-aligned box `lower <= z <= upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, GeometryError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(GeometryError::Invalid(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(GeometryError::Invalid("box lower bound exceeds upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    /// Symmetric box `-bound <= z <= bound`.
    pub fn symmetric(bound: DVector<f64>) -> Result<Self, GeometryError> {
        Self::new(-bound.clone(), bound)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Rows ordered `e_1, -e_1, e_2, -e_2, ...`.
    pub fn to_polytope(&self) -> Polytope {
        let n = self.dim();
        let mut normals = DMatrix::zeros(2 * n, n);
        let mut offsets = DVector::zeros(2 * n);
        for i in 0..n {
            normals[(2 * i, i)] = 1.0;
            offsets[2 * i] = self.upper[i];
            normals[(2 * i + 1, i)] = -1.0;
            offsets[2 * i + 1] = -self.lower[i];
        }
        Polytope { normals, offsets }
    }
}

impl Polytope {
    pub fn new(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self, GeometryError> {
        if normals.nrows() != offsets.len() {
            return Err(GeometryError::Invalid(format!(
                "{} normals but {} offsets",
                normals.nrows(),
                offsets.len()
            )));
        }
        if normals.ncols() == 0 {
            return Err(GeometryError::Invalid("dimension must be positive".into()));
        }
        if normals.nrows() == 0 {
            return Err(GeometryError::Invalid("at least one row is required".into()));
        }
        if normals.iter().chain(offsets.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::Invalid("non-finite entries".into()));
        }
        Ok(Self { normals, offsets })
    }

    pub fn from_box(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, GeometryError> {
        Ok(BoxSet::new(lower, upper)?.to_polytope())
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn rows(&self) -> usize {
        self.normals.nrows()
    }

    fn lp(&self, c: &DVector<f64>) -> Result<crate::solver::SolveResult, GeometryError> {
        let p = LpProblem::new(-c, self.normals.clone(), self.offsets.clone());
        Ok(solve_lp_with(&p, &SolverSettings::LP)?)
    }

    /// `max c'z` over the set.
    pub fn support(&self, c: &DVector<f64>) -> Result<Support, GeometryError> {
        self.check_dim(c.len())?;
        let r = self.lp(c)?;
        match r.status {
            SolveStatus::Optimal => Ok(Support::Bounded(-r.objective)),
            SolveStatus::Unbounded => Ok(Support::Unbounded),
            SolveStatus::Infeasible => Err(GeometryError::EmptySet),
            SolveStatus::MaxIter => Err(crate::error::SolverError::NumericalFailure(
                "support LP hit the iteration cap".into(),
            )
            .into()),
        }
    }

    /// Support value with a maximizer and dual multipliers. Errors when the
    /// set is empty or unbounded in direction `c`.
    pub fn support_certificate(&self, c: &DVector<f64>) -> Result<SupportCertificate, GeometryError> {
        self.check_dim(c.len())?;
        let r = self.lp(c)?;
        match r.status {
            SolveStatus::Optimal => Ok(SupportCertificate {
                value: -r.objective,
                point: r.primal,
                multipliers: r.dual_ub,
            }),
            SolveStatus::Unbounded => Err(GeometryError::Unbounded),
            SolveStatus::Infeasible => Err(GeometryError::EmptySet),
            SolveStatus::MaxIter => Err(crate::error::SolverError::NumericalFailure(
                "support LP hit the iteration cap".into(),
            )
            .into()),
        }
    }

    pub fn is_empty(&self) -> Result<bool, GeometryError> {
        let r = self.lp(&DVector::zeros(self.dim()))?;
        match r.status {
            SolveStatus::Infeasible => Ok(true),
            SolveStatus::Optimal | SolveStatus::Unbounded => Ok(false),
            SolveStatus::MaxIter => Err(crate::error::SolverError::NumericalFailure(
                "feasibility LP hit the iteration cap".into(),
            )
            .into()),
        }
    }

    /// `H z <= h + 1e-9` componentwise.
    pub fn contains(&self, z: &DVector<f64>) -> bool {
        self.contains_with_tol(z, TOL.containment)
    }

    pub fn contains_with_tol(&self, z: &DVector<f64>, tol: f64) -> bool {
        z.len() == self.dim() && self.violation(z) <= tol
    }

    /// Largest row residual `max_i (H_i z - h_i)`.
    pub fn violation(&self, z: &DVector<f64>) -> f64 {
        (&self.normals * z - &self.offsets).max()
    }

    /// Appends rows; existing rows keep their order.
    pub fn intersect_rows(&self, normals: &DMatrix<f64>, offsets: &DVector<f64>) -> Result<Polytope, GeometryError> {
        self.check_dim(normals.ncols())?;
        if normals.nrows() != offsets.len() {
            return Err(GeometryError::Invalid(format!(
                "{} normals but {} offsets",
                normals.nrows(),
                offsets.len()
            )));
        }
        let r = self.rows();
        let k = normals.nrows();
        let mut h = DMatrix::zeros(r + k, self.dim());
        h.rows_mut(0, r).copy_from(&self.normals);
        h.rows_mut(r, k).copy_from(normals);
        let mut o = DVector::zeros(r + k);
        o.rows_mut(0, r).copy_from(&self.offsets);
        o.rows_mut(r, k).copy_from(offsets);
        Ok(Polytope { normals: h, offsets: o })
    }

    pub fn intersect(&self, other: &Polytope) -> Result<Polytope, GeometryError> {
        self.intersect_rows(&other.normals, &other.offsets)
    }

    /// Keeps the listed rows in the given order.
    pub fn select_rows(&self, keep: &[usize]) -> Polytope {
        let normals = self.normals.select_rows(keep.iter());
        let offsets = self.offsets.select_rows(keep.iter());
        Polytope { normals, offsets }
    }

    /// Decides for each row whether it can be dropped: row `i` is redundant
    /// when `max H_i z` over the remaining rows stays within `1e-9` of `h_i`.
    /// Rows are tested in order against the rows still kept.
    pub fn redundant_rows(&self) -> Result<Vec<bool>, GeometryError> {
        if self.is_empty()? {
            return Err(GeometryError::EmptySet);
        }
        let r = self.rows();
        let mut dropped = vec![false; r];
        for i in 0..r {
            let row = self.normals.row(i).transpose();
            if row.amax() == 0.0 {
                // 0 <= h_i holds for a nonempty set.
                dropped[i] = true;
                continue;
            }
            let others: Vec<usize> = (0..r).filter(|&k| k != i && !dropped[k]).collect();
            if others.is_empty() {
                continue;
            }
            let rest = self.select_rows(&others);
            if let Support::Bounded(v) = rest.support(&row)? {
                if v <= self.offsets[i] + TOL.redundancy {
                    dropped[i] = true;
                }
            }
        }
        Ok(dropped)
    }

    /// Minimal description of the same set.
    pub fn remove_redundant(&self) -> Result<Polytope, GeometryError> {
        let dropped = self.redundant_rows()?;
        let keep: Vec<usize> = (0..self.rows()).filter(|&i| !dropped[i]).collect();
        if keep.is_empty() {
            // The whole space; keep one trivially satisfied row so the type
            // invariant `rows >= 1` holds.
            let normals = DMatrix::zeros(1, self.dim());
            return Ok(Polytope { normals, offsets: DVector::from_element(1, 1.0) });
        }
        Ok(self.select_rows(&keep))
    }

    /// Extreme points of a bounded 2-D polytope in counterclockwise order.
    pub fn vertices_2d(&self) -> Result<Vec<DVector<f64>>, GeometryError> {
        if self.dim() != 2 {
            return Err(GeometryError::DimUnsupported(self.dim()));
        }
        for c in [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]] {
            if self.support(&DVector::from_row_slice(&c))? == Support::Unbounded {
                return Err(GeometryError::Unbounded);
            }
        }
        let scale = 1.0 + self.offsets.amax();
        let tol = 1e-9 * scale;
        let r = self.rows();
        let mut pts: Vec<DVector<f64>> = Vec::new();
        for i in 0..r {
            for j in (i + 1)..r {
                let (a, b) = (self.normals[(i, 0)], self.normals[(i, 1)]);
                let (c, d) = (self.normals[(j, 0)], self.normals[(j, 1)]);
                let det = a * d - b * c;
                let norm = (a.hypot(b) * c.hypot(d)).max(f64::MIN_POSITIVE);
                if det.abs() <= 1e-12 * norm {
                    continue;
                }
                let (e, f) = (self.offsets[i], self.offsets[j]);
                let p = DVector::from_row_slice(&[(e * d - b * f) / det, (a * f - e * c) / det]);
                if self.violation(&p) <= tol && !pts.iter().any(|q| (q - &p).amax() <= tol) {
                    pts.push(p);
                }
            }
        }
        if pts.is_empty() {
            // A bounded nonempty set always has a vertex; reaching here means
            // rounding hid a degenerate point, so fall back to the LP.
            let c = self.support_certificate(&DVector::from_row_slice(&[1.0, 0.0]))?;
            pts.push(c.point);
        }
        let n = pts.len() as f64;
        let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
        pts.sort_by(|p, q| {
            let ap = (p[1] - cy).atan2(p[0] - cx);
            let aq = (q[1] - cy).atan2(q[0] - cx);
            ap.total_cmp(&aq)
        });
        // Drop points lying on an edge between their neighbours.
        if pts.len() > 2 {
            let mut out: Vec<DVector<f64>> = Vec::new();
            let m = pts.len();
            for k in 0..m {
                let prev = &pts[(k + m - 1) % m];
                let next = &pts[(k + 1) % m];
                let cur = &pts[k];
                let cross = (cur[0] - prev[0]) * (next[1] - prev[1]) - (cur[1] - prev[1]) * (next[0] - prev[0]);
                if cross.abs() > tol * scale {
                    out.push(cur.clone());
                }
            }
            if !out.is_empty() {
                pts = out;
            }
        }
        Ok(pts)
    }

    fn check_dim(&self, d: usize) -> Result<(), GeometryError> {
        if d != self.dim() {
            return Err(GeometryError::Invalid(format!(
                "expected dimension {}, got {d}",
                self.dim()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn unit_box() -> Polytope {
        Polytope::from_box(dvector![-1.0, -1.0], dvector![1.0, 1.0]).unwrap()
    }

    fn omega() -> Polytope {
        Polytope::from_box(dvector![-0.5, -0.5], dvector![0.5, 0.5]).unwrap()
    }

    fn vertex_max(vs: &[DVector<f64>], c: &DVector<f64>) -> f64 {
        vs.iter().map(|v| v.dot(c)).fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn support_examples() {
        assert_eq!(unit_box().support(&dvector![1.0, 0.0]).unwrap(), Support::Bounded(1.0));
        let w = BoxSet::symmetric(dvector![0.1, 0.1]).unwrap().to_polytope();
        assert_relative_eq!(w.support(&dvector![1.0, 1.0]).unwrap().value().unwrap(), 0.2, epsilon = 1e-12);
        let c = dvector![-1.0, 2.0];
        let lp = omega().support(&c).unwrap().value().unwrap();
        let corners = [dvector![0.5, 0.5], dvector![-0.5, 0.5], dvector![-0.5, -0.5], dvector![0.5, -0.5]];
        assert_relative_eq!(lp, vertex_max(&corners, &c), epsilon = 1e-12);
        assert_relative_eq!(lp, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn support_signals_unbounded_and_empty() {
        let half = Polytope::new(dmatrix![1.0, 0.0], dvector![1.0]).unwrap();
        assert_eq!(half.support(&dvector![0.0, 1.0]).unwrap(), Support::Unbounded);
        let empty = Polytope::new(dmatrix![1.0; -1.0], dvector![0.0, -1.0]).unwrap();
        assert_eq!(empty.support(&dvector![1.0]), Err(GeometryError::EmptySet));
    }

    #[test]
    fn certificate_is_dual_feasible() {
        let c = dvector![-1.0, 2.0];
        let cert = omega().support_certificate(&c).unwrap();
        assert!(cert.multipliers.min() >= 0.0);
        assert_relative_eq!(omega().normals().transpose() * &cert.multipliers, c, epsilon = 1e-12);
        assert_relative_eq!(omega().offsets().dot(&cert.multipliers), cert.value, epsilon = 1e-12);
    }

    #[test]
    fn emptiness() {
        assert!(!unit_box().is_empty().unwrap());
        let empty = Polytope::new(dmatrix![1.0; -1.0], dvector![0.0, -1.0]).unwrap();
        assert!(empty.is_empty().unwrap());
    }

    #[test]
    fn membership() {
        assert!(omega().contains(&dvector![0.49, 0.49]));
        assert!(!omega().contains(&dvector![0.6, 0.0]));
        assert!(omega().contains(&dvector![0.5 + 5e-10, 0.0]));
        assert!(!omega().contains(&dvector![0.5, 0.0, 0.0]));
    }

    #[test]
    fn intersection_appends_rows() {
        let seg = Polytope::from_box(dvector![-1.0], dvector![1.0]).unwrap();
        let cut = seg.intersect_rows(&dmatrix![1.0], &dvector![0.5]).unwrap();
        assert_eq!(cut.rows(), 3);
        assert_eq!(cut.support(&dvector![1.0]).unwrap(), Support::Bounded(0.5));
        assert_eq!(cut.support(&dvector![-1.0]).unwrap(), Support::Bounded(1.0));
        let same = seg.intersect_rows(&DMatrix::zeros(0, 1), &DVector::zeros(0)).unwrap();
        assert_eq!(same, seg);
    }

    #[test]
    fn redundancy_removal() {
        let seg = Polytope::new(dmatrix![1.0; -1.0; 1.0], dvector![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(seg.remove_redundant().unwrap().rows(), 2);
        let cut = omega().intersect_rows(&dmatrix![1.0, 0.0], &dvector![0.7]).unwrap();
        assert_eq!(cut.remove_redundant().unwrap(), omega());
        let empty = Polytope::new(dmatrix![1.0; -1.0], dvector![0.0, -1.0]).unwrap();
        assert_eq!(empty.remove_redundant(), Err(GeometryError::EmptySet));
    }

    #[test]
    fn vertex_examples() {
        let v = unit_box().vertices_2d().unwrap();
        assert_eq!(v.len(), 4);
        for p in &v {
            assert_relative_eq!(p[0].abs(), 1.0);
            assert_relative_eq!(p[1].abs(), 1.0);
        }
        let v = omega().vertices_2d().unwrap();
        assert_eq!(v.len(), 4);
        assert!(v.iter().all(|p| p.amax() == 0.5));
        let tri = Polytope::new(dmatrix![-1.0, 0.0; 0.0, -1.0; 1.0, 1.0], dvector![0.0, 0.0, 1.0]).unwrap();
        let v = tri.vertices_2d().unwrap();
        assert_eq!(v.len(), 3);
        for expect in [dvector![0.0, 0.0], dvector![1.0, 0.0], dvector![0.0, 1.0]] {
            assert!(v.iter().any(|p| (p - &expect).amax() < 1e-12));
        }
        // Counterclockwise: positive signed area.
        let area: f64 = (0..v.len())
            .map(|k| {
                let (p, q) = (&v[k], &v[(k + 1) % v.len()]);
                p[0] * q[1] - p[1] * q[0]
            })
            .sum();
        assert!(area > 0.0);
    }

    #[test]
    fn vertex_errors() {
        let cube = Polytope::from_box(dvector![0.0, 0.0, 0.0], dvector![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(cube.vertices_2d(), Err(GeometryError::DimUnsupported(3)));
        let half = Polytope::new(dmatrix![1.0, 0.0], dvector![1.0]).unwrap();
        assert_eq!(half.vertices_2d(), Err(GeometryError::Unbounded));
        let empty = Polytope::new(dmatrix![1.0, 0.0; -1.0, 0.0], dvector![0.0, -1.0]).unwrap();
        assert_eq!(empty.vertices_2d(), Err(GeometryError::EmptySet));
    }

    #[test]
    fn invalid_construction() {
        assert!(Polytope::new(dmatrix![1.0, 0.0], dvector![1.0, 2.0]).is_err());
        assert!(BoxSet::new(dvector![1.0], dvector![0.0]).is_err());
    }

    fn random_polygon() -> impl Strategy<Value = Polytope> {
        (3usize..9).prop_flat_map(|k| {
            (proptest::collection::vec(0.0f64..std::f64::consts::TAU, k), proptest::collection::vec(0.2f64..1.5, k))
                .prop_map(|(angles, offsets)| {
                    let normals = DMatrix::from_fn(angles.len(), 2, |i, j| if j == 0 { angles[i].cos() } else { angles[i].sin() });
                    let p = Polytope::new(normals, DVector::from_vec(offsets)).unwrap();
                    // Bound it.
                    p.intersect(&Polytope::from_box(dvector![-2.0, -2.0], dvector![2.0, 2.0]).unwrap()).unwrap()
                })
        })
    }

    fn directions(k: usize) -> Vec<DVector<f64>> {
        (0..k)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / k as f64;
                dvector![a.cos(), a.sin()]
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn support_matches_vertices(p in random_polygon()) {
            let v = p.vertices_2d().unwrap();
            for c in directions(16) {
                let lp = p.support(&c).unwrap().value().unwrap();
                prop_assert!((lp - vertex_max(&v, &c)).abs() <= 1e-8);
            }
            for z in &v {
                prop_assert!(p.contains(z));
            }
        }

        #[test]
        fn pruning_preserves_set(p in random_polygon()) {
            let q = p.remove_redundant().unwrap();
            prop_assert!(q.rows() <= p.rows());
            for c in directions(100) {
                let a = p.support(&c).unwrap().value().unwrap();
                let b = q.support(&c).unwrap().value().unwrap();
                prop_assert!((a - b).abs() <= 1e-9);
            }
            let again = q.remove_redundant().unwrap();
            prop_assert_eq!(again.rows(), q.rows());
            // Minimality: dropping any remaining row enlarges the set.
            for i in 0..q.rows() {
                let keep: Vec<usize> = (0..q.rows()).filter(|&k| k != i).collect();
                let bigger = q.select_rows(&keep);
                let row = q.normals().row(i).transpose();
                match bigger.support(&row).unwrap() {
                    Support::Bounded(v) => prop_assert!(v > q.offsets()[i] + 1e-9),
                    Support::Unbounded => {}
                }
            }
        }

        #[test]
        fn intersection_is_subset(p in random_polygon(), a in 0.0f64..6.3, off in -0.5f64..1.0) {
            let cut = p.intersect_rows(&dmatrix![a.cos(), a.sin()], &dvector![off]).unwrap();
            if !cut.is_empty().unwrap() {
                for v in cut.vertices_2d().unwrap() {
                    prop_assert!(p.contains(&v));
                }
            }
        }
    }
}
