//! Parameter vectors, the gradient-oracle contract and the single SGD step.
//!
//! Every learning problem in the crate is exposed through [`GradOracle`]: a
//! per-sample loss and gradient. Mini-batch gradients are always formed here,
//! by [`minibatch_grad`], as the plain mean of per-sample gradients, so the
//! orchestrator never sees how a problem computes its gradients.

use serde::{Deserialize, Serialize};

use crate::error::{FirlError, Result};

/// Dense model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVec(Vec<f64>);

impl ParamVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(FirlError::Config("parameter dimension must be positive".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FirlError::NonFinite("parameter vector"));
        }
        Ok(ParamVec(values))
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVec(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn check_dim(&self, other: &ParamVec) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(FirlError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &ParamVec) -> Result<()> {
        self.check_dim(other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scaled(&self, scale: f64) -> ParamVec {
        ParamVec(self.0.iter().map(|v| v * scale).collect())
    }

    pub fn sub(&self, other: &ParamVec) -> Result<ParamVec> {
        self.check_dim(other)?;
        Ok(ParamVec(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    pub fn dist_sq(&self, other: &ParamVec) -> Result<f64> {
        Ok(self.sub(other)?.norm_sq())
    }
}

impl From<Vec<f64>> for ParamVec {
    /// Unchecked conversion; use [`ParamVec::new`] for validated input.
    fn from(v: Vec<f64>) -> Self {
        ParamVec(v)
    }
}

/// Arithmetic mean of equal-dimension vectors, summed in slice order.
pub fn mean_of(vectors: &[&ParamVec]) -> Result<ParamVec> {
    let first = vectors.first().ok_or(FirlError::EmptyBatch)?;
    let mut acc = ParamVec::zeros(first.dim());
    for v in vectors {
        acc.axpy(1.0, v)?;
    }
    let n = vectors.len() as f64;
    acc.0.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// A mini-batch of samples; never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch<S> {
    samples: Vec<S>,
}

impl<S> MiniBatch<S> {
    pub fn new(samples: Vec<S>) -> Result<Self> {
        if samples.is_empty() {
            return Err(FirlError::EmptyBatch);
        }
        Ok(MiniBatch { samples })
    }

    pub fn samples(&self) -> &[S] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Concatenation of two batches.
    pub fn concat(mut self, other: MiniBatch<S>) -> MiniBatch<S> {
        self.samples.extend(other.samples);
        self
    }
}

/// Smoothness and noise constants of an objective, when known analytically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConstants {
    pub lipschitz: f64,
    pub beta: f64,
    pub sigma_sq: f64,
}

/// Loss and gradient of a single sample.
pub trait GradOracle {
    type Sample;

    fn dim(&self) -> usize;

    fn loss(&self, theta: &ParamVec, sample: &Self::Sample) -> f64;

    fn sample_grad(&self, theta: &ParamVec, sample: &Self::Sample) -> ParamVec;

    fn constants(&self) -> Option<OracleConstants> {
        None
    }
}

/// One SGD step, `theta - eta * grad`.
pub fn sgd_step(theta: &ParamVec, grad: &ParamVec, eta: f64) -> Result<ParamVec> {
    theta.check_dim(grad)?;
    if !eta.is_finite() {
        return Err(FirlError::NonFinite("learning rate"));
    }
    if !theta.is_finite() {
        return Err(FirlError::NonFinite("parameters"));
    }
    if !grad.is_finite() {
        return Err(FirlError::NonFinite("gradient"));
    }
    let out: Vec<f64> = theta.0.iter().zip(&grad.0).map(|(t, g)| t - eta * g).collect();
    let out = ParamVec(out);
    if !out.is_finite() {
        return Err(FirlError::NonFinite("updated parameters"));
    }
    Ok(out)
}

/// Mean of per-sample gradients over the batch.
pub fn minibatch_grad<O: GradOracle>(
    oracle: &O,
    theta: &ParamVec,
    batch: &MiniBatch<O::Sample>,
) -> Result<ParamVec> {
    if theta.dim() != oracle.dim() {
        return Err(FirlError::DimensionMismatch {
            expected: oracle.dim(),
            got: theta.dim(),
        });
    }
    let mut acc = ParamVec::zeros(theta.dim());
    for s in batch.samples() {
        let g = oracle.sample_grad(theta, s);
        acc.axpy(1.0, &g)?;
    }
    let n = batch.len() as f64;
    acc.0.iter_mut().for_each(|a| *a /= n);
    if !acc.is_finite() {
        return Err(FirlError::NonFinite("mini-batch gradient"));
    }
    Ok(acc)
}

/// Mean per-sample loss over the batch.
pub fn minibatch_loss<O: GradOracle>(oracle: &O, theta: &ParamVec, batch: &MiniBatch<O::Sample>) -> f64 {
    let total: f64 = batch.samples().iter().map(|s| oracle.loss(theta, s)).sum();
    total / batch.len() as f64
}

/// Squared l2 norm of the probe-set gradient, the convergence metric.
pub fn expected_grad_norm<O: GradOracle>(
    oracle: &O,
    theta: &ParamVec,
    probe: &MiniBatch<O::Sample>,
) -> Result<f64> {
    Ok(minibatch_grad(oracle, theta, probe)?.norm_sq())
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// F(theta) = 1/2 |theta - c|^2 regardless of the sample.
    pub struct Quadratic {
        pub center: Vec<f64>,
    }

    impl GradOracle for Quadratic {
        type Sample = usize;

        fn dim(&self) -> usize {
            self.center.len()
        }

        fn loss(&self, theta: &ParamVec, _s: &usize) -> f64 {
            0.5 * theta
                .as_slice()
                .iter()
                .zip(&self.center)
                .map(|(t, c)| (t - c) * (t - c))
                .sum::<f64>()
        }

        fn sample_grad(&self, theta: &ParamVec, _s: &usize) -> ParamVec {
            ParamVec(theta.as_slice().iter().zip(&self.center).map(|(t, c)| t - c).collect())
        }
    }

    /// Per-sample linear gradient `theta * s` so batch means are visible.
    pub struct Scaled;

    impl GradOracle for Scaled {
        type Sample = f64;

        fn dim(&self) -> usize {
            2
        }

        fn loss(&self, theta: &ParamVec, s: &f64) -> f64 {
            0.5 * s * theta.norm_sq()
        }

        fn sample_grad(&self, theta: &ParamVec, s: &f64) -> ParamVec {
            theta.scaled(*s)
        }
    }
}
