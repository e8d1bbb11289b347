//! TOML experiment files.
//!
//! Matrices are arrays of rows. Sets are either boxes (`lower`, `upper`) or
//! halfspace lists (`normals`, `offsets`). Loading reports every violated
//! invariant at once, each under the dotted path of the offending field.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::geometry::{BoxSet, Polytope};
use crate::model::{ChanceConstraints, Constraints, CostWeights, MixedConstraints, Mode, NoiseKind, SystemConfig};
use crate::controller::Controller;
use crate::error::SimError;
use crate::sim::{gen_offset, Experiment, NoiseModel, OffsetSchedule};
use crate::synthesis::TerminalIngredients;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    /// Syntax or shape errors; `line` is 1-based when known.
    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },
    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<FieldError>),
}

fn matrix<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(serde::de::Error::custom("matrix needs at least one nonempty row"));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(serde::de::Error::custom(format!(
            "matrix row {i} has {} entries but row 0 has {cols}",
            r.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn vector<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
    Ok(DVector::from_vec(Vec::deserialize(d)?))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SetSpec {
    Box {
        #[serde(deserialize_with = "vector")]
        lower: DVector<f64>,
        #[serde(deserialize_with = "vector")]
        upper: DVector<f64>,
    },
    Halfspaces {
        #[serde(deserialize_with = "matrix")]
        normals: DMatrix<f64>,
        #[serde(deserialize_with = "vector")]
        offsets: DVector<f64>,
    },
}

impl SetSpec {
    fn build(&self, path: &str, errs: &mut Vec<FieldError>) -> Option<Polytope> {
        let r = match self {
            SetSpec::Box { lower, upper } => Polytope::from_box(lower.clone(), upper.clone()),
            SetSpec::Halfspaces { normals, offsets } => Polytope::new(normals.clone(), offsets.clone()),
        };
        r.map_err(|e| push(errs, path, e.to_string())).ok()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    #[serde(deserialize_with = "matrix")]
    a: DMatrix<f64>,
    #[serde(deserialize_with = "matrix")]
    b: DMatrix<f64>,
    #[serde(deserialize_with = "matrix")]
    e: DMatrix<f64>,
    horizon: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSection {
    #[serde(default)]
    kind: NoiseKind,
    /// Half-widths of the symmetric noise box.
    #[serde(deserialize_with = "vector")]
    w_bar: DVector<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct OffsetSection {
    omega: SetSpec,
    rate: SetSpec,
    #[serde(deserialize_with = "vector")]
    theta0: DVector<f64>,
    #[serde(deserialize_with = "vector")]
    delta: DVector<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobustSection {
    #[serde(deserialize_with = "matrix")]
    c: DMatrix<f64>,
    #[serde(deserialize_with = "matrix")]
    d: DMatrix<f64>,
    #[serde(deserialize_with = "vector")]
    b: DVector<f64>,
    #[serde(default)]
    alpha: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct StochasticSection {
    #[serde(deserialize_with = "matrix")]
    g: DMatrix<f64>,
    #[serde(deserialize_with = "vector")]
    h: DVector<f64>,
    row_groups: Vec<usize>,
    group_alpha: Vec<f64>,
    /// Total risk level; the group levels must sum to it.
    alpha: f64,
    #[serde(deserialize_with = "matrix")]
    h_u: DMatrix<f64>,
    #[serde(deserialize_with = "vector")]
    h_u_bound: DVector<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintSection {
    robust: Option<RobustSection>,
    stochastic: Option<StochasticSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostSection {
    #[serde(deserialize_with = "matrix")]
    state: DMatrix<f64>,
    #[serde(deserialize_with = "matrix")]
    input: DMatrix<f64>,
    #[serde(deserialize_with = "matrix")]
    lqr_state: DMatrix<f64>,
    #[serde(deserialize_with = "matrix")]
    lqr_input: DMatrix<f64>,
}

fn default_steps() -> usize {
    20
}

fn default_trajectories() -> usize {
    100
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    #[serde(deserialize_with = "vector")]
    x0: DVector<f64>,
    #[serde(default = "default_steps")]
    steps: usize,
    #[serde(default = "default_trajectories")]
    trajectories: usize,
    #[serde(default)]
    base_seed: u64,
    output_dir: Option<PathBuf>,
    lms_mu: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Mode,
    system: SystemSection,
    noise: NoiseSection,
    offset: OffsetSection,
    constraints: ConstraintSection,
    cost: CostSection,
    run: RunSection,
}

/// A validated experiment: the system plus everything a campaign needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    /// Total risk level; zero in robust mode.
    pub alpha: f64,
    pub offset: OffsetSchedule,
    pub x0: DVector<f64>,
    pub steps: usize,
    pub trajectories: usize,
    pub base_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub lms_mu: Option<f64>,
}

fn push(errs: &mut Vec<FieldError>, path: &str, message: impl Into<String>) {
    errs.push(FieldError { path: path.into(), message: message.into() });
}

/// Parses and validates a config from TOML text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.span().map(|s| text[..s.start].matches('\n').count() + 1),
        message: e.message().to_string(),
    })?;
    let mut errs = Vec::new();

    let noise = BoxSet::symmetric(raw.noise.w_bar.clone()).map_err(|e| push(&mut errs, "noise.w_bar", e.to_string()));
    let omega = raw.offset.omega.build("offset.omega", &mut errs);
    let rate = raw.offset.rate.build("offset.rate", &mut errs);

    let (constraints, alpha) = match (raw.mode, raw.constraints.robust, raw.constraints.stochastic) {
        (Mode::Robust, Some(r), None) => {
            if r.alpha != 0.0 {
                push(&mut errs, "constraints.robust.alpha", format!("robust mode has no risk budget, got {}", r.alpha));
            }
            (Some(Constraints::Robust(MixedConstraints { c: r.c, d: r.d, b: r.b })), 0.0)
        }
        (Mode::Stochastic, None, Some(s)) => {
            let sum: f64 = s.group_alpha.iter().sum();
            if (sum - s.alpha).abs() > 1e-12 {
                push(
                    &mut errs,
                    "constraints.stochastic.group_alpha",
                    format!("levels sum to {sum} but constraints.stochastic.alpha is {}", s.alpha),
                );
            }
            let cc = ChanceConstraints {
                g: s.g,
                h: s.h,
                row_group: s.row_groups,
                group_alpha: s.group_alpha,
                h_u: s.h_u,
                h_u_bound: s.h_u_bound,
            };
            (Some(Constraints::Stochastic(cc)), s.alpha)
        }
        (mode, _, _) => {
            push(
                &mut errs,
                "constraints",
                format!("{mode} mode needs exactly one [constraints.{mode}] section and no other"),
            );
            (None, 0.0)
        }
    };

    let system = match (noise, omega, rate, constraints) {
        (Ok(noise), Some(omega), Some(rate), Some(constraints)) => {
            let sys = SystemConfig {
                a: raw.system.a,
                b: raw.system.b,
                e: raw.system.e,
                noise,
                noise_kind: raw.noise.kind,
                omega,
                rate,
                constraints,
                cost: CostWeights {
                    state: raw.cost.state,
                    input: raw.cost.input,
                    lqr_state: raw.cost.lqr_state,
                    lqr_input: raw.cost.lqr_input,
                },
                horizon: raw.system.horizon,
            };
            for (path, message) in sys.validate() {
                push(&mut errs, &path, message);
            }
            Some(sys)
        }
        _ => None,
    };

    let run = raw.run;
    if run.steps == 0 {
        push(&mut errs, "run.steps", "must be at least 1");
    }
    if run.trajectories == 0 {
        push(&mut errs, "run.trajectories", "must be at least 1");
    }
    if let Some(mu) = run.lms_mu {
        if !(mu > 0.0) {
            push(&mut errs, "run.lms_mu", format!("step size must be positive, got {mu}"));
        }
    }
    let offset = OffsetSchedule { theta0: raw.offset.theta0, delta: raw.offset.delta };
    if let Some(sys) = &system {
        if run.x0.len() != sys.n() {
            push(&mut errs, "run.x0", format!("expected dimension {}, got {}", sys.n(), run.x0.len()));
        }
        if errs.is_empty() {
            if let Err(e) = gen_offset(sys, &offset, run.steps) {
                push(&mut errs, "offset", e.to_string());
            }
        }
    }
    if !errs.is_empty() {
        return Err(ConfigError::Validation(errs));
    }
    Ok(ExperimentConfig {
        system: system.expect("validated"),
        alpha,
        offset,
        x0: run.x0,
        steps: run.steps,
        trajectories: run.trajectories,
        base_seed: run.base_seed,
        output_dir: run.output_dir,
        lms_mu: run.lms_mu,
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text)
}

impl ExperimentConfig {
    pub fn mode(&self) -> Mode {
        self.system.mode()
    }

    /// The campaign described by this config around precomputed terminal
    /// ingredients.
    pub fn experiment(&self, terminal: &TerminalIngredients) -> Result<Experiment, SimError> {
        let sys = &self.system;
        Ok(Experiment {
            controller: Controller::new(sys, terminal)?,
            noise: NoiseModel::new(sys.noise_kind, sys.noise.clone(), self.base_seed)?,
            offset: gen_offset(sys, &self.offset, self.steps)?,
            x0: self.x0.clone(),
            lms_mu: self.lms_mu,
        })
    }
}
