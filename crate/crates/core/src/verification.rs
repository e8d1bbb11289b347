//! Brute-force oracles for the test suite and the `verify` command: vertex
//! enumeration in place of LP duality, sampling in place of closed-form
//! quantiles, and stepping vertices in place of fixed-point certificates.
//!
//! Apart from the `Polytope` type and its vertex routine, nothing here shares
//! code with the paths being checked.

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::geometry::{BoxSet, Polytope};
use crate::model::{Constraints, SystemConfig};
use crate::synthesis::TerminalIngredients;

/// Worst residual found by an oracle and where it was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    /// Largest constraint residual; positive means violated.
    pub max_violation: f64,
    pub witness: DVector<f64>,
    /// Number of points checked.
    pub samples_or_vertices: usize,
}

impl OracleReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_violation <= tol
    }
}

/// One factor of a product set, placed at `coords` of the lifted vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Box { coords: Vec<usize>, set: BoxSet },
    /// A polytope of dimension 1 or 2.
    Polygon { coords: Vec<usize>, set: Polytope },
}

impl Block {
    fn coords(&self) -> &[usize] {
        match self {
            Block::Box { coords, .. } | Block::Polygon { coords, .. } => coords,
        }
    }

    /// Extreme points in local coordinates.
    pub fn vertices(&self) -> Result<Vec<DVector<f64>>, GeometryError> {
        match self {
            Block::Box { set, .. } => Ok(box_vertices(set)),
            Block::Polygon { set, .. } => match set.dim() {
                1 => interval_vertices(set),
                2 => set.vertices_2d(),
                d => Err(GeometryError::DimUnsupported(d)),
            },
        }
    }
}

/// All `2^n` corners of a box.
pub fn box_vertices(b: &BoxSet) -> Vec<DVector<f64>> {
    let n = b.dim();
    (0..1usize << n)
        .map(|mask| DVector::from_fn(n, |i, _| if mask >> i & 1 == 1 { b.upper[i] } else { b.lower[i] }))
        .collect()
}

fn interval_vertices(set: &Polytope) -> Result<Vec<DVector<f64>>, GeometryError> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..set.rows() {
        let (a, h) = (set.normals()[(i, 0)], set.offsets()[i]);
        if a > 0.0 {
            hi = hi.min(h / a);
        } else if a < 0.0 {
            lo = lo.max(h / a);
        } else if h < 0.0 {
            return Err(GeometryError::EmptySet);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(GeometryError::Unbounded);
    }
    if lo > hi {
        return Err(GeometryError::EmptySet);
    }
    Ok(vec![DVector::from_element(1, lo), DVector::from_element(1, hi)])
}

/// Exact maximum of `row' z` over the product of `blocks`. The blocks must
/// cover disjoint coordinates; the maximum splits into one vertex search per
/// block because the objective is linear.
pub fn robustify_by_vertices(row: &DVector<f64>, blocks: &[Block]) -> Result<f64, GeometryError> {
    let mut total = 0.0;
    for block in blocks {
        let coords = block.coords();
        if coords.iter().all(|&c| row[c] == 0.0) {
            continue;
        }
        let best = block
            .vertices()?
            .iter()
            .map(|v| coords.iter().enumerate().map(|(k, &c)| row[c] * v[k]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
    }
    Ok(total)
}

/// Sample quantile of `g'w` for `w` uniform on `noise`, with a bootstrap
/// standard error from 100 resamples.
pub fn empirical_quantile(g: &DVector<f64>, noise: &BoxSet, level: f64, n_samples: usize, seed: u64) -> (f64, f64) {
    const RESAMPLES: usize = 100;
    assert!(n_samples > 0 && g.len() == noise.dim() && level > 0.0 && level < 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..n_samples)
        .map(|_| {
            (0..g.len())
                .map(|i| g[i] * (noise.lower[i] + (noise.upper[i] - noise.lower[i]) * rng.gen::<f64>()))
                .sum()
        })
        .collect();
    let k = ((level * n_samples as f64).ceil() as usize).clamp(1, n_samples) - 1;
    let order_stat = |v: &mut Vec<f64>| *v.select_nth_unstable_by(k, f64::total_cmp).1;
    let estimate = order_stat(&mut samples.clone());
    let pick = Uniform::new(0, n_samples);
    let mut boot = Vec::with_capacity(RESAMPLES);
    let mut buf = vec![0.0; n_samples];
    for _ in 0..RESAMPLES {
        for slot in buf.iter_mut() {
            *slot = samples[pick.sample(&mut rng)];
        }
        boot.push(order_stat(&mut buf));
    }
    let mean = boot.iter().sum::<f64>() / RESAMPLES as f64;
    let var = boot.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (RESAMPLES - 1) as f64;
    (estimate, var.sqrt())
}

fn convex_combination(points: &[DVector<f64>], rng: &mut ChaCha8Rng) -> DVector<f64> {
    let weights: Vec<f64> = points.iter().map(|_| -rng.gen::<f64>().max(f64::MIN_POSITIVE).ln()).collect();
    let total: f64 = weights.iter().sum();
    points
        .iter()
        .zip(&weights)
        .fold(DVector::zeros(points[0].len()), |acc, (p, w)| acc + p * (w / total))
}

/// Steps every vertex of the 2-D set `x` under every corner of the noise box
/// and every vertex of `offsets`, then `n_samples` random interior triples,
/// and reports the worst row residual of `x` at the successor.
pub fn check_invariance_sampled(
    x: &Polytope,
    acl: &DMatrix<f64>,
    noise: &BoxSet,
    e: &DMatrix<f64>,
    offsets: &Polytope,
    n_samples: usize,
    seed: u64,
) -> Result<OracleReport, GeometryError> {
    let xs = x.vertices_2d()?;
    let ws = box_vertices(noise);
    let thetas = Block::Polygon { coords: (0..offsets.dim()).collect(), set: offsets.clone() }.vertices()?;
    let mut report = OracleReport {
        max_violation: f64::NEG_INFINITY,
        witness: DVector::zeros(x.dim()),
        samples_or_vertices: 0,
    };
    let check = |point: &DVector<f64>, w: &DVector<f64>, theta: &DVector<f64>, report: &mut OracleReport| {
        let next = acl * point + w + e * theta;
        let residual = (x.normals() * &next - x.offsets()).max();
        if residual > report.max_violation {
            report.max_violation = residual;
            report.witness = next;
        }
        report.samples_or_vertices += 1;
    };
    for v in &xs {
        for w in &ws {
            for th in &thetas {
                check(v, w, th, &mut report);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_samples {
        let v = convex_combination(&xs, &mut rng);
        let w = convex_combination(&ws, &mut rng);
        let th = convex_combination(&thetas, &mut rng);
        check(&v, &w, &th, &mut report);
    }
    Ok(report)
}

/// Worst residual of rows `lhs x + max_{theta in offsets} e_row' theta <= rhs`
/// over the vertices of the 2-D set `x`; `e_rows` holds one offset
/// functional per row.
pub fn check_rows_on_vertices(
    x: &Polytope,
    lhs: &DMatrix<f64>,
    e_rows: &DMatrix<f64>,
    rhs: &DVector<f64>,
    offsets: &Polytope,
) -> Result<OracleReport, GeometryError> {
    let xs = x.vertices_2d()?;
    let blocks = [Block::Polygon { coords: (0..offsets.dim()).collect(), set: offsets.clone() }];
    let mut report = OracleReport {
        max_violation: f64::NEG_INFINITY,
        witness: DVector::zeros(x.dim()),
        samples_or_vertices: xs.len(),
    };
    for i in 0..rhs.len() {
        let worst = robustify_by_vertices(&e_rows.row(i).transpose(), &blocks)?;
        for v in &xs {
            let residual = lhs.row(i).dot(&v.transpose()) + worst - rhs[i];
            if residual > report.max_violation {
                report.max_violation = residual;
                report.witness = v.clone();
            }
        }
    }
    Ok(report)
}

/// Certificates of a terminal set: invariance under the terminal gain and
/// admissibility of the constraints it must imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalReport {
    pub invariance: OracleReport,
    pub admissibility: OracleReport,
}

impl TerminalReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.invariance.passes(tol) && self.admissibility.passes(tol)
    }
}

/// Checks a 2-D terminal set by stepping its vertices under `u = Kx`.
///
/// Robust sets must satisfy `(C + DK) x <= b`. Chance-constrained sets must
/// satisfy the one-step tightened rows `g_j'(A + BK) x + max g_j'E theta <=
/// h_j - q_j` and the input rows `H_u K x <= h_u`.
pub fn verify_terminal(
    sys: &SystemConfig,
    terminal: &TerminalIngredients,
    n_samples: usize,
    seed: u64,
) -> Result<TerminalReport, GeometryError> {
    let acl = &sys.a + &sys.b * &terminal.k;
    let invariance = check_invariance_sampled(&terminal.set, &acl, &sys.noise, &sys.e, &sys.omega, n_samples, seed)?;
    let (lhs, e_rows, rhs) = match &sys.constraints {
        Constraints::Robust(mc) => {
            let rows = mc.b.len();
            (&mc.c + &mc.d * &terminal.k, DMatrix::zeros(rows, sys.p()), mc.b.clone())
        }
        Constraints::Stochastic(cc) => {
            let (k, o) = (cc.h.len(), cc.h_u_bound.len());
            let mut lhs = DMatrix::zeros(k + o, sys.n());
            lhs.rows_mut(0, k).copy_from(&(&cc.g * &acl));
            lhs.rows_mut(k, o).copy_from(&(&cc.h_u * &terminal.k));
            let mut e_rows = DMatrix::zeros(k + o, sys.p());
            e_rows.rows_mut(0, k).copy_from(&(&cc.g * &sys.e));
            let mut rhs = DVector::zeros(k + o);
            for j in 0..k {
                rhs[j] = cc.h[j] - terminal.quantiles.get(j).map_or(0.0, |q| q.value);
            }
            rhs.rows_mut(k, o).copy_from(&cc.h_u_bound);
            (lhs, e_rows, rhs)
        }
    };
    let admissibility = check_rows_on_vertices(&terminal.set, &lhs, &e_rows, &rhs, &sys.omega)?;
    Ok(TerminalReport { invariance, admissibility })
}
