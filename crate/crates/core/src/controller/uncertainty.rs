//! The lifted uncertainty `(w_0, ..., w_{N-1}, theta_0, ..., theta_{N-1})`
//! over the horizon.

use nalgebra::{DMatrix, DVector};

use crate::adaptation::PredictedFps;
use crate::error::ControllerError;
use crate::geometry::{BoxSet, Polytope};
use crate::model::SystemConfig;

/// Stage-separable uncertainty: `w_j` in the noise box and `theta_j` in the
/// predicted set of stage `j`, independently for every `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyStack {
    pub noise: BoxSet,
    /// `Theta_{j|t}` for `j = 0..N-1`, redundant rows removed.
    pub stages: Vec<Polytope>,
    pub e: DMatrix<f64>,
}

impl UncertaintyStack {
    /// Uses the first `N` predicted sets; the terminal entry (`Omega`) never
    /// enters the horizon rows.
    pub fn new(sys: &SystemConfig, predicted: &PredictedFps) -> Result<Self, ControllerError> {
        let horizon = sys.horizon;
        if predicted.sets.len() < horizon {
            return Err(ControllerError::DimensionMismatch(format!(
                "{} predicted sets for horizon {horizon}",
                predicted.sets.len()
            )));
        }
        let stages = predicted.sets[..horizon]
            .iter()
            .map(|s| s.remove_redundant())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            noise: sys.noise.clone(),
            stages,
            e: sys.e.clone(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    /// `max_{w in W} a'w`.
    pub fn noise_support(&self, a: &DVector<f64>) -> f64 {
        a.iter()
            .zip(self.noise.lower.iter().zip(self.noise.upper.iter()))
            .map(|(ai, (lo, hi))| if *ai >= 0.0 { ai * hi } else { ai * lo })
            .sum()
    }

    /// `max over w in W, theta in Theta_j` of `a_w'(w + E theta) + a_theta' theta`.
    pub fn stage_support(&self, j: usize, a_w: &DVector<f64>, a_theta: &DVector<f64>) -> Result<f64, ControllerError> {
        let dir = self.e.transpose() * a_w + a_theta;
        let theta_part = if dir.iter().all(|v| *v == 0.0) {
            0.0
        } else {
            self.stages[j].support(&dir)?.value()?
        };
        Ok(self.noise_support(a_w) + theta_part)
    }

    /// The whole stack as one polytope over `(w stack, theta stack)`, block
    /// diagonal by stage.
    pub fn lifted_polytope(&self) -> Result<Polytope, ControllerError> {
        let n = self.noise.dim();
        let p = self.e.ncols();
        let horizon = self.horizon();
        let dim = (n + p) * horizon;
        let box_rows = self.noise.to_polytope();
        let rows: usize = horizon * box_rows.rows() + self.stages.iter().map(Polytope::rows).sum::<usize>();
        let mut h = DMatrix::zeros(rows, dim);
        let mut o = DVector::zeros(rows);
        let mut r = 0;
        for j in 0..horizon {
            for i in 0..box_rows.rows() {
                h.view_mut((r, j * n), (1, n)).copy_from(&box_rows.normals().row(i));
                o[r] = box_rows.offsets()[i];
                r += 1;
            }
        }
        for (j, s) in self.stages.iter().enumerate() {
            for i in 0..s.rows() {
                h.view_mut((r, n * horizon + j * p), (1, p)).copy_from(&s.normals().row(i));
                o[r] = s.offsets()[i];
                r += 1;
            }
        }
        Ok(Polytope::new(h, o)?)
    }
}
