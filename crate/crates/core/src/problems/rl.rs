//! Ring-road traffic as a federated problem: each controlled vehicle is an
//! agent running its own softmax policy in the shared environment.
//!
//! One iteration plays `step_len` environment steps with every agent acting
//! on its current parameters. The environment restarts at each epoch
//! boundary and after a collision. Agents that still owe local updates
//! turn their segment into a batch of advantage-weighted transitions.

use serde::{Deserialize, Serialize};

use crate::error::{FirlError, Result};
use crate::fed::{IterationContext, Problem};
use crate::params::{MiniBatch, ParamVec};
use crate::problems::policy::{advantages, returns_to_go, PolicyLoss, RunningBaseline, SoftmaxPolicy, Step, Transition};
use crate::problems::traffic::{RingParams, RingTrafficEnv, OBS_FEATURES};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSpec {
    #[serde(default)]
    pub env: RingParams,
    #[serde(default = "default_actions")]
    pub n_actions: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Segments averaged by the per-agent return baseline.
    #[serde(default = "default_window")]
    pub baseline_window: usize,
}

fn default_actions() -> usize {
    5
}
fn default_gamma() -> f64 {
    0.99
}
fn default_window() -> usize {
    10
}

impl Default for TrafficSpec {
    fn default() -> Self {
        TrafficSpec {
            env: RingParams::default(),
            n_actions: default_actions(),
            gamma: default_gamma(),
            baseline_window: default_window(),
        }
    }
}

impl TrafficSpec {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(FirlError::Config(format!("discount must lie in [0, 1], got {}", self.gamma)));
        }
        if self.n_actions < 2 {
            return Err(FirlError::Config("need at least two actions".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrafficTask {
    spec: TrafficSpec,
    seed: u64,
    loss: PolicyLoss,
    env: Option<RingTrafficEnv>,
    baselines: Vec<RunningBaseline>,
    episodes: u64,
    collisions: u64,
}

impl TrafficTask {
    pub fn new(spec: TrafficSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let policy = SoftmaxPolicy::uniform_levels(OBS_FEATURES, spec.n_actions)?;
        let baselines = vec![RunningBaseline::new(spec.baseline_window); spec.env.n_controlled];
        Ok(TrafficTask { spec, seed, loss: PolicyLoss { policy }, env: None, baselines, episodes: 0, collisions: 0 })
    }

    pub fn policy(&self) -> &SoftmaxPolicy {
        &self.loss.policy
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn collisions(&self) -> u64 {
        self.collisions
    }

    fn reset(&mut self, ctx: &IterationContext) -> Result<()> {
        let params = RingParams { max_steps: ctx.epoch_len as usize, ..self.spec.env.clone() };
        let mut rng = rng::stream(self.seed, &[0xe1, ctx.epoch, ctx.k]);
        self.env = Some(RingTrafficEnv::new(params, &mut rng)?);
        self.episodes += 1;
        Ok(())
    }
}

impl Problem for TrafficTask {
    type Oracle = PolicyLoss;

    fn oracle(&self) -> &PolicyLoss {
        &self.loss
    }

    fn n_agents(&self) -> usize {
        self.spec.env.n_controlled
    }

    /// The uniform policy.
    fn initial_params(&self) -> ParamVec {
        ParamVec::zeros(self.loss.policy.dim())
    }

    fn local_batches(
        &mut self,
        ctx: &IterationContext,
        thetas: &[ParamVec],
        active: &[bool],
    ) -> Result<Vec<Option<MiniBatch<Transition>>>> {
        let n = self.n_agents();
        if thetas.len() != n || active.len() != n {
            return Err(FirlError::SlotCount { expected: n, got: thetas.len() });
        }
        if ctx.step == 0 || self.env.is_none() {
            self.reset(ctx)?;
        }
        let policy = &self.loss.policy;
        let env = self.env.as_mut().expect("environment initialized");
        let mut rngs: Vec<_> = (0..n).map(|i| rng::stream(self.seed, &[0xac7, i as u64, ctx.k])).collect();
        let mut segments: Vec<Vec<Step>> = vec![Vec::with_capacity(ctx.step_len as usize); n];
        let mut ended = false;
        for _ in 0..ctx.step_len {
            let obs: Vec<Vec<f64>> = (0..n).map(|i| env.observe(i)).collect();
            let actions: Vec<usize> = (0..n).map(|i| policy.sample_action(&thetas[i], &obs[i], &mut rngs[i])).collect();
            let accel: Vec<f64> = actions.iter().map(|&a| policy.levels[a]).collect();
            let out = env.step(&accel)?;
            for (i, (o, a)) in obs.into_iter().zip(actions).enumerate() {
                segments[i].push(Step { obs: o, action: a, reward: out.rewards[i], next_obs: env.observe(i) });
            }
            if out.done {
                if out.collided {
                    self.collisions += 1;
                }
                ended = true;
                break;
            }
        }
        if ended {
            self.env = None;
        }
        let gamma = self.spec.gamma;
        segments
            .into_iter()
            .enumerate()
            .map(|(i, seg)| {
                let baseline = self.baselines[i].values(seg.len());
                let rewards: Vec<f64> = seg.iter().map(|s| s.reward).collect();
                self.baselines[i].push(returns_to_go(&rewards, gamma));
                if active[i] {
                    advantages(&seg, &baseline, gamma).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect()
    }

    fn counters(&self) -> Vec<(&'static str, u64)> {
        vec![("episodes", self.episodes), ("collisions", self.collisions)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(k: u64) -> IterationContext {
        IterationContext { k, epoch: k / 6, step: k % 6, step_len: 250, epoch_len: 1500 }
    }

    #[test]
    fn inactive_agents_get_no_batch() {
        let mut task = TrafficTask::new(TrafficSpec::default(), 1).unwrap();
        let thetas = vec![task.initial_params(); 7];
        let active = [true, false, true, false, true, false, true];
        let batches = task.local_batches(&ctx(0), &thetas, &active).unwrap();
        for (b, on) in batches.iter().zip(active) {
            assert_eq!(b.is_some(), on);
        }
        let len = batches[0].as_ref().unwrap().len();
        // a collision truncates the segment
        assert!((1..=250).contains(&len));
    }

    #[test]
    fn batches_are_reproducible() {
        let run = || {
            let mut task = TrafficTask::new(TrafficSpec::default(), 5).unwrap();
            let thetas = vec![task.initial_params(); 7];
            (0..3).map(|k| task.local_batches(&ctx(k), &thetas, &[true; 7]).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(TrafficTask::new(TrafficSpec { gamma: 1.5, ..TrafficSpec::default() }, 0).is_err());
    }
}
