//! Softmax policy over discretized accelerations and its advantage
//! policy-gradient loss `-log pi(a | s) * A`.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FirlError, Result};
use crate::params::{minibatch_grad, GradOracle, MiniBatch, ParamVec};

/// Linear softmax policy. Parameters are one weight row per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub n_features: usize,
    /// Acceleration of each action, in `[-1, 1]`.
    pub levels: Vec<f64>,
}

impl SoftmaxPolicy {
    /// Evenly spaced levels from -1 to 1.
    pub fn uniform_levels(n_features: usize, n_actions: usize) -> Result<Self> {
        if n_actions < 2 || n_features == 0 {
            return Err(FirlError::Config("softmax policy needs >= 2 actions and >= 1 feature".into()));
        }
        let levels = (0..n_actions).map(|k| -1.0 + 2.0 * k as f64 / (n_actions - 1) as f64).collect();
        Ok(SoftmaxPolicy { n_features, levels })
    }

    pub fn n_actions(&self) -> usize {
        self.levels.len()
    }

    pub fn dim(&self) -> usize {
        self.n_actions() * self.n_features
    }

    fn logits(&self, theta: &ParamVec, obs: &[f64]) -> Vec<f64> {
        let w = theta.as_slice();
        (0..self.n_actions())
            .map(|a| {
                let row = &w[a * self.n_features..(a + 1) * self.n_features];
                row.iter().zip(obs).map(|(x, y)| x * y).sum()
            })
            .collect()
    }

    pub fn probs(&self, theta: &ParamVec, obs: &[f64]) -> Vec<f64> {
        let logits = self.logits(theta, obs);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / z).collect()
    }

    pub fn log_prob(&self, theta: &ParamVec, obs: &[f64], action: usize) -> f64 {
        let logits = self.logits(theta, obs);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits[action] - lse
    }

    pub fn sample_action<R: Rng>(&self, theta: &ParamVec, obs: &[f64], rng: &mut R) -> usize {
        let probs = self.probs(theta, obs);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        probs.len() - 1
    }
}

/// One environment step seen by one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
}

/// A step with its advantage estimate; the sample type of the loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub advantage: f64,
}

/// Per-sample loss `-log pi(a | s; theta) * advantage`.
#[derive(Debug, Clone)]
pub struct PolicyLoss {
    pub policy: SoftmaxPolicy,
}

impl GradOracle for PolicyLoss {
    type Sample = Transition;

    fn dim(&self) -> usize {
        self.policy.dim()
    }

    fn loss(&self, theta: &ParamVec, s: &Transition) -> f64 {
        -self.policy.log_prob(theta, &s.obs, s.action) * s.advantage
    }

    /// `-(phi(s, a) - sum_b pi(b | s) phi(s, b)) * advantage`
    fn sample_grad(&self, theta: &ParamVec, s: &Transition) -> ParamVec {
        let nf = self.policy.n_features;
        let probs = self.policy.probs(theta, &s.obs);
        let mut g = vec![0.0; self.dim()];
        for (b, pb) in probs.iter().enumerate() {
            let indicator = if b == s.action { 1.0 } else { 0.0 };
            let coef = -(indicator - pb) * s.advantage;
            for f in 0..nf {
                g[b * nf + f] = coef * s.obs[f];
            }
        }
        ParamVec::from(g)
    }
}

/// Discounted return from each step to the end of the trajectory.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Per-timestep mean of returns-to-go over the most recent trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningBaseline {
    window: usize,
    history: VecDeque<Vec<f64>>,
}

impl RunningBaseline {
    pub fn new(window: usize) -> Self {
        RunningBaseline { window: window.max(1), history: VecDeque::new() }
    }

    /// Baseline at timestep `t`; zero before any trajectory covered `t`.
    pub fn value(&self, t: usize) -> f64 {
        let (sum, n) = self
            .history
            .iter()
            .filter_map(|h| h.get(t))
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn values(&self, len: usize) -> Vec<f64> {
        (0..len).map(|t| self.value(t)).collect()
    }

    pub fn push(&mut self, returns: Vec<f64>) {
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(returns);
    }
}

/// Attaches advantages `return_to_go - baseline[t]` to a trajectory.
pub fn advantages(trajectory: &[Step], baseline: &[f64], gamma: f64) -> Result<MiniBatch<Transition>> {
    if baseline.len() < trajectory.len() {
        return Err(FirlError::DimensionMismatch { expected: trajectory.len(), got: baseline.len() });
    }
    let rewards: Vec<f64> = trajectory.iter().map(|s| s.reward).collect();
    let rtg = returns_to_go(&rewards, gamma);
    MiniBatch::new(
        trajectory
            .iter()
            .zip(rtg)
            .enumerate()
            .map(|(t, (s, g))| Transition {
                obs: s.obs.clone(),
                action: s.action,
                reward: s.reward,
                next_obs: s.next_obs.clone(),
                advantage: g - baseline[t],
            })
            .collect(),
    )
}

/// Mean over the trajectory of `-grad log pi(a_t | s_t) * A_t`.
pub fn policy_grad(
    policy: &SoftmaxPolicy,
    theta: &ParamVec,
    trajectory: &[Step],
    baseline: &[f64],
    gamma: f64,
) -> Result<ParamVec> {
    if trajectory.is_empty() {
        return Err(FirlError::EmptyBatch);
    }
    let batch = advantages(trajectory, baseline, gamma)?;
    minibatch_grad(&PolicyLoss { policy: policy.clone() }, theta, &batch)
}
