//! Single-lane ring road with mixed controlled and rule-based vehicles.
//!
//! Vehicles are points on a ring of length `ring_length`, indexed in
//! driving order, so vehicle `i` follows vehicle `i + 1`. All vehicles
//! update simultaneously from the pre-step snapshot:
//!
//! 1. controlled vehicles take `action * a_max`; the rest use the
//!    proportional headway rule `kappa * (headway - target_headway)`,
//!    clipped to `[-a_max, a_max]`;
//! 2. a vehicle whose predicted gap falls to `brake_headway` is forced to
//!    brake at `brake_decel`;
//! 3. speeds are clamped to `[0, v_max]` and positions advance by `v * dt`.
//!
//! The episode ends when any gap drops to `collision_headway` or after
//! `max_steps` steps. Every controlled vehicle receives the same reward,
//! the mean speed over `v_max`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FirlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingParams {
    pub n_vehicles: usize,
    pub n_controlled: usize,
    pub ring_length: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub dt: f64,
    pub collision_headway: f64,
    pub brake_headway: f64,
    pub brake_decel: f64,
    pub target_headway: f64,
    pub kappa: f64,
    /// Fraction of the even spacing used as random initial jitter.
    pub position_jitter: f64,
    pub max_steps: usize,
}

impl Default for RingParams {
    fn default() -> Self {
        RingParams {
            n_vehicles: 14,
            n_controlled: 7,
            ring_length: 1.0,
            v_max: 0.01,
            a_max: 0.001,
            dt: 1.0,
            collision_headway: 0.005,
            brake_headway: 0.015,
            brake_decel: 0.002,
            target_headway: 0.05,
            kappa: 0.02,
            position_jitter: 0.2,
            max_steps: 1500,
        }
    }
}

impl RingParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_vehicles == 0 || self.n_controlled == 0 || self.n_controlled > self.n_vehicles {
            return Err(FirlError::Config("need 1 <= n_controlled <= n_vehicles".into()));
        }
        let positive = [
            ("ring_length", self.ring_length),
            ("v_max", self.v_max),
            ("a_max", self.a_max),
            ("dt", self.dt),
            ("collision_headway", self.collision_headway),
            ("brake_decel", self.brake_decel),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(FirlError::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.position_jitter) || self.max_steps == 0 {
            return Err(FirlError::Config("position_jitter must be in [0, 1) and max_steps positive".into()));
        }
        if self.ring_length / self.n_vehicles as f64 <= self.brake_headway.max(self.collision_headway) {
            return Err(FirlError::Config("ring too short for the vehicle count".into()));
        }
        Ok(())
    }

    /// Controlled vehicles, spread evenly around the ring.
    pub fn controlled_indices(&self) -> Vec<usize> {
        (0..self.n_controlled).map(|i| i * self.n_vehicles / self.n_controlled).collect()
    }

    pub fn spacing(&self) -> f64 {
        self.ring_length / self.n_vehicles as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    pub done: bool,
    pub collided: bool,
}

pub const OBS_FEATURES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct RingTrafficEnv {
    params: RingParams,
    controlled: Vec<usize>,
    is_controlled: Vec<bool>,
    positions: Vec<f64>,
    velocities: Vec<f64>,
    t: usize,
    clipped_actions: u64,
}

impl RingTrafficEnv {
    /// Evenly spaced start with seeded position jitter and speeds in `[0, v_max / 2]`.
    pub fn new<R: Rng>(params: RingParams, rng: &mut R) -> Result<Self> {
        params.validate()?;
        let n = params.n_vehicles;
        let s = params.spacing();
        let positions = (0..n)
            .map(|i| i as f64 * s + params.position_jitter * s * rng.random_range(-0.5..0.5))
            .map(|x| x.rem_euclid(params.ring_length))
            .collect();
        let velocities = (0..n).map(|_| rng.random_range(0.0..0.5) * params.v_max).collect();
        Self::from_state(params, positions, velocities)
    }

    pub fn from_state(params: RingParams, positions: Vec<f64>, velocities: Vec<f64>) -> Result<Self> {
        params.validate()?;
        let n = params.n_vehicles;
        if positions.len() != n || velocities.len() != n {
            return Err(FirlError::Config("state length does not match vehicle count".into()));
        }
        if velocities.iter().any(|v| !(0.0..=params.v_max).contains(v)) {
            return Err(FirlError::Config("initial speeds must lie in [0, v_max]".into()));
        }
        let controlled = params.controlled_indices();
        let mut is_controlled = vec![false; n];
        controlled.iter().for_each(|&i| is_controlled[i] = true);
        Ok(RingTrafficEnv { params, controlled, is_controlled, positions, velocities, t: 0, clipped_actions: 0 })
    }

    pub fn params(&self) -> &RingParams {
        &self.params
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn time(&self) -> usize {
        self.t
    }

    /// Actions that arrived outside `[-1, 1]` and were clipped.
    pub fn clipped_actions(&self) -> u64 {
        self.clipped_actions
    }

    pub fn controlled(&self) -> &[usize] {
        &self.controlled
    }

    fn leader(&self, i: usize) -> usize {
        (i + 1) % self.params.n_vehicles
    }

    fn follower(&self, i: usize) -> usize {
        (i + self.params.n_vehicles - 1) % self.params.n_vehicles
    }

    fn headway(&self, i: usize) -> f64 {
        let lead = self.leader(i);
        if lead == i {
            return self.params.ring_length;
        }
        (self.positions[lead] - self.positions[i]).rem_euclid(self.params.ring_length)
    }

    /// Local observation of the `agent`-th controlled vehicle: bias, own
    /// speed, gap to and speed of the leader, gap to and speed of the
    /// follower. Speeds are over `v_max`, gaps over the even spacing,
    /// capped at 3.
    pub fn observe(&self, agent: usize) -> Vec<f64> {
        let i = self.controlled[agent];
        let vm = self.params.v_max;
        let s = self.params.spacing();
        let f = self.follower(i);
        vec![
            1.0,
            self.velocities[i] / vm,
            (self.headway(i) / s).min(3.0),
            self.velocities[self.leader(i)] / vm,
            (self.headway(f) / s).min(3.0),
            self.velocities[f] / vm,
        ]
    }

    pub fn mean_speed_reward(&self) -> f64 {
        let mean = self.velocities.iter().sum::<f64>() / self.velocities.len() as f64;
        (mean / self.params.v_max).clamp(0.0, 1.0)
    }

    /// Advances one step. `actions[k]` drives the `k`-th controlled vehicle.
    pub fn step(&mut self, actions: &[f64]) -> Result<StepOutcome> {
        let p = &self.params;
        if actions.len() != self.controlled.len() {
            return Err(FirlError::DimensionMismatch { expected: self.controlled.len(), got: actions.len() });
        }
        if actions.iter().any(|a| a.is_nan()) {
            return Err(FirlError::NonFinite("action"));
        }
        let n = p.n_vehicles;
        let mut accel = vec![0.0; n];
        for (k, &i) in self.controlled.iter().enumerate() {
            let a = actions[k];
            if !(-1.0..=1.0).contains(&a) {
                self.clipped_actions += 1;
            }
            accel[i] = a.clamp(-1.0, 1.0) * p.a_max;
        }
        let headways: Vec<f64> = (0..n).map(|i| self.headway(i)).collect();
        for i in 0..n {
            if !self.is_controlled[i] {
                accel[i] = (p.kappa * (headways[i] - p.target_headway)).clamp(-p.a_max, p.a_max);
            }
            let lead = self.leader(i);
            if lead != i && headways[i] + (self.velocities[lead] - self.velocities[i]) * p.dt <= p.brake_headway {
                accel[i] = -p.brake_decel;
            }
        }
        let new_v: Vec<f64> = (0..n)
            .map(|i| (self.velocities[i] + accel[i] * p.dt).clamp(0.0, p.v_max))
            .collect();
        let mut collided = false;
        for i in 0..n {
            let lead = self.leader(i);
            if lead != i && headways[i] + (new_v[lead] - new_v[i]) * p.dt <= p.collision_headway {
                collided = true;
            }
        }
        for i in 0..n {
            self.positions[i] = (self.positions[i] + new_v[i] * p.dt).rem_euclid(p.ring_length);
        }
        self.velocities = new_v;
        self.t += 1;
        let reward = self.mean_speed_reward();
        Ok(StepOutcome {
            rewards: vec![reward; self.controlled.len()],
            done: collided || self.t >= p.max_steps,
            collided,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn even(params: &RingParams, v: f64) -> RingTrafficEnv {
        let s = params.spacing();
        let n = params.n_vehicles;
        RingTrafficEnv::from_state(params.clone(), (0..n).map(|i| i as f64 * s).collect(), vec![v; n]).unwrap()
    }

    #[test]
    fn full_speed_rewards_one() {
        // target headway equal to spacing keeps rule-based vehicles at v_max
        let params = RingParams { target_headway: 1.0 / 14.0, ..RingParams::default() };
        let mut env = even(&params, params.v_max);
        let out = env.step(&[0.0; 7]).unwrap();
        assert!(out.rewards.iter().all(|r| (r - 1.0).abs() < 1e-12));
        assert!(!out.done);
    }

    #[test]
    fn stationary_rewards_zero() {
        let params = RingParams { target_headway: 1.0 / 14.0, ..RingParams::default() };
        let mut env = even(&params, 0.0);
        let out = env.step(&[0.0; 7]).unwrap();
        assert!(out.rewards.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn controlled_layout() {
        assert_eq!(RingParams::default().controlled_indices(), vec![0, 2, 4, 6, 8, 10, 12]);
    }

    #[test]
    fn out_of_range_actions_are_clipped() {
        let params = RingParams::default();
        let mut env = RingTrafficEnv::new(params, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
        env.step(&[2.0, -3.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(env.clipped_actions(), 2);
        assert!(env.step(&[0.0; 6]).is_err());
        assert!(env.step(&[f64::NAN; 7]).is_err());
    }

    #[test]
    fn episode_ends_at_step_limit() {
        let params = RingParams { max_steps: 3, ..RingParams::default() };
        let mut env = RingTrafficEnv::new(params, &mut rand_chacha::ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(!env.step(&[0.0; 7]).unwrap().done);
        assert!(!env.step(&[0.0; 7]).unwrap().done);
        assert!(env.step(&[0.0; 7]).unwrap().done);
    }

    #[test]
    fn bad_params_rejected() {
        assert!(RingParams { n_controlled: 15, ..RingParams::default() }.validate().is_err());
        assert!(RingParams { v_max: 0.0, ..RingParams::default() }.validate().is_err());
        assert!(RingParams { n_vehicles: 300, ..RingParams::default() }.validate().is_err());
    }
}
