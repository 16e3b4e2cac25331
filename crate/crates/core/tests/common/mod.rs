#![allow(dead_code)]

use firl::consensus::ConsensusConfig;
use firl::fed::{Denominator, FedConfig, TauPolicy};
use firl::problems::{SyntheticProblem, SyntheticSpec, SyntheticTask};

pub fn synthetic_spec(agents: usize, heterogeneity: f64) -> SyntheticSpec {
    SyntheticSpec {
        dim: 10,
        agents,
        components_per_agent: 20,
        heterogeneity,
        design_noise: 0.3,
        target_noise: 0.5,
        nonconvex: 0.1,
        batch_size: 4,
        init_scale: 3.0,
        seed: 7,
    }
}

pub fn synthetic_task(agents: usize, heterogeneity: f64, seed: u64) -> SyntheticTask {
    SyntheticTask::new(SyntheticProblem::generate(synthetic_spec(agents, heterogeneity)).unwrap(), agents, seed)
}

/// The full-length schedule: 1500-step epochs, 500 epochs, 250 steps per iteration.
pub fn table_protocol(n: usize, tau: u64, eta: f64, seed: u64) -> FedConfig {
    FedConfig {
        n_total: n,
        m: n,
        tau,
        tau_policy: TauPolicy::Fixed,
        eta,
        epoch_len: 1500,
        epochs: 500,
        step_len: 250,
        consensus: ConsensusConfig::disabled(),
        uplink_delay_epochs: 0,
        downlink_delay_epochs: 0,
        param_apply_period_epochs: 1,
        denominator: Denominator::Participants,
        seed,
    }
}

/// A short schedule of `iterations` iterations, `per_epoch` per epoch.
pub fn short_protocol(n: usize, tau: u64, iterations: u64, per_epoch: u64, seed: u64) -> FedConfig {
    FedConfig {
        epoch_len: per_epoch,
        epochs: iterations / per_epoch,
        step_len: 1,
        eta: 0.02,
        ..table_protocol(n, tau, 0.02, seed)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn std_err(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}
