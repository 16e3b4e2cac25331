//! Seeded estimates of smoothness and gradient-noise constants for oracles
//! that do not know their own.
//!
//! * `L`: the largest secant slope `|grad F(x) - grad F(y)| / |x - y|` over
//!   all pairs of evaluation points.
//! * `sigma^2`, `beta`: at each point, the mean squared deviation of
//!   `repeats` mini-batch gradients (drawn from the probe with replacement)
//!   from the probe gradient, regressed on `|grad F|^2` by nonnegative least
//!   squares: `V = sigma^2 + beta |grad F|^2`.

use rand::Rng;

use crate::error::{FirlError, Result};
use crate::params::{minibatch_grad, GradOracle, MiniBatch, OracleConstants, ParamVec};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSettings {
    pub batch_size: usize,
    pub repeats: usize,
    pub seed: u64,
}

pub fn estimate_constants<O>(
    oracle: &O,
    probe: &MiniBatch<O::Sample>,
    points: &[ParamVec],
    settings: &EstimatorSettings,
) -> Result<OracleConstants>
where
    O: GradOracle,
    O::Sample: Clone,
{
    if points.is_empty() || settings.batch_size == 0 || settings.repeats == 0 {
        return Err(FirlError::Config("estimator needs points, a batch size and repeats".into()));
    }
    let grads: Vec<ParamVec> = points.iter().map(|p| minibatch_grad(oracle, p, probe)).collect::<Result<_>>()?;
    let mut lipschitz: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let dx = points[i].dist_sq(&points[j])?;
            if dx > 0.0 {
                lipschitz = lipschitz.max((grads[i].dist_sq(&grads[j])? / dx).sqrt());
            }
        }
    }
    let mut rng = rng::stream(settings.seed, &[0xe57]);
    let samples = probe.samples();
    let mut obs = Vec::with_capacity(points.len());
    for (p, g) in points.iter().zip(&grads) {
        let mut v = 0.0;
        for _ in 0..settings.repeats {
            let batch: Vec<O::Sample> = (0..settings.batch_size)
                .map(|_| samples[rng.random_range(0..samples.len())].clone())
                .collect();
            v += minibatch_grad(oracle, p, &MiniBatch::new(batch)?)?.dist_sq(g)?;
        }
        obs.push((g.norm_sq(), v / settings.repeats as f64));
    }
    let (beta, sigma_sq) = nonneg_line_fit(&obs);
    Ok(OracleConstants { lipschitz, beta, sigma_sq })
}

/// Least-squares `y = a x + b` with `a, b >= 0`. Returns `(a, b)`.
fn nonneg_line_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let b = my - a * mx;
    if a >= 0.0 && b >= 0.0 {
        return (a, b);
    }
    if a < 0.0 {
        return (0.0, my.max(0.0));
    }
    // b < 0: refit through the origin
    let sxx0: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy0: f64 = points.iter().map(|p| p.0 * p.1).sum();
    (if sxx0 > 0.0 { (sxy0 / sxx0).max(0.0) } else { 0.0 }, 0.0)
}
