//! Quantiles of linear functionals of the process noise.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ControllerError;
use crate::geometry::BoxSet;
use crate::model::NoiseKind;

/// Number of samples used when no closed form applies.
pub const QUANTILE_SAMPLES: usize = 1_000_000;
/// Seed of the sampling path; fixed so synthesis is reproducible.
pub const QUANTILE_SEED: u64 = 0x7175_616e_7469_6c65;

/// A quantile value and the standard error of its estimate (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantile {
    pub value: f64,
    pub std_error: f64,
}

/// Left quantile `inf { q : P(g'w <= q) >= level }` of `g'w` for `w` drawn
/// from `kind` on `noise`.
///
/// Exact when `g'w` is deterministic or depends on a single uniform
/// component; otherwise estimated from [`QUANTILE_SAMPLES`] seeded samples.
pub fn quantile_linear(g: &DVector<f64>, noise: &BoxSet, kind: NoiseKind, level: f64) -> Result<Quantile, ControllerError> {
    if g.len() != noise.dim() {
        return Err(ControllerError::DimensionMismatch(format!(
            "functional has dimension {} but the noise has {}",
            g.len(),
            noise.dim()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(ControllerError::Invalid(format!("quantile level {level} outside (0, 1)")));
    }
    let NoiseKind::Uniform = kind;
    // Components that actually vary.
    let active: Vec<usize> = (0..g.len())
        .filter(|&i| g[i] != 0.0 && noise.upper[i] > noise.lower[i])
        .collect();
    let constant: f64 = (0..g.len())
        .filter(|i| !active.contains(i))
        .map(|i| g[i] * noise.lower[i])
        .sum();
    match active.as_slice() {
        [] => Ok(Quantile { value: constant, std_error: 0.0 }),
        [i] => {
            let (lo, hi, gi) = (noise.lower[*i], noise.upper[*i], g[*i]);
            // g_i w_i is uniform on the image interval.
            let (a, b) = if gi > 0.0 { (gi * lo, gi * hi) } else { (gi * hi, gi * lo) };
            Ok(Quantile { value: constant + a + level * (b - a), std_error: 0.0 })
        }
        _ => Ok(sampled_quantile(g, noise, level, QUANTILE_SAMPLES, QUANTILE_SEED)),
    }
}

fn sampled_quantile(g: &DVector<f64>, noise: &BoxSet, level: f64, n: usize, seed: u64) -> Quantile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples: Vec<f64> = (0..n)
        .map(|_| {
            (0..g.len())
                .map(|i| {
                    let (lo, hi) = (noise.lower[i], noise.upper[i]);
                    let w = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                    g[i] * w
                })
                .sum()
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let k = ((level * n as f64).ceil() as usize).clamp(1, n) - 1;
    // Distribution-free error from the binomial spread of the order statistic.
    let spread = ((n as f64) * level * (1.0 - level)).sqrt().ceil() as usize;
    let lo = samples[k.saturating_sub(spread)];
    let hi = samples[(k + spread).min(n - 1)];
    Quantile { value: samples[k], std_error: (hi - lo) / 2.0 }
}
