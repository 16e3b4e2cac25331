//! Laplacian gossip on the agents' gradient estimates.
//!
//! One round replaces every agent's vector by
//! `g_i + eps * sum_{l in N(i)} (g_l - g_i)`, all agents reading the same
//! pre-round snapshot. An agent whose own gradient is not finished yet
//! joins with a zero vector and is marked ready after its first round.

use serde::{Deserialize, Serialize};

use crate::cost::CostLedger;
use crate::error::{FirlError, Result};
use crate::params::ParamVec;
use crate::topology::{epsilon_bound, SpectralInfo, Topology};

#[derive(Debug, Clone, PartialEq)]
pub struct GradSlot {
    agent_id: usize,
    vector: ParamVec,
    ready: bool,
    round: usize,
}

impl GradSlot {
    pub fn ready(agent_id: usize, vector: ParamVec) -> Self {
        GradSlot { agent_id, vector, ready: true, round: 0 }
    }

    /// Placeholder for an agent still computing its gradient.
    pub fn pending(agent_id: usize, dim: usize) -> Self {
        GradSlot { agent_id, vector: ParamVec::zeros(dim), ready: false, round: 0 }
    }

    pub fn agent_id(&self) -> usize {
        self.agent_id
    }

    pub fn vector(&self) -> &ParamVec {
        &self.vector
    }

    pub fn into_vector(self) -> ParamVec {
        self.vector
    }

    pub fn is_ready(&self) -> bool {
        self.ready
    }

    /// Number of gossip rounds applied so far.
    pub fn round(&self) -> usize {
        self.round
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub epsilon: f64,
    pub rounds: usize,
}

impl ConsensusConfig {
    pub fn disabled() -> Self {
        ConsensusConfig { epsilon: 0.0, rounds: 0 }
    }

    /// Checks the step size against the topology. Zero rounds needs no check.
    pub fn validate(&self, spectral: &SpectralInfo) -> Result<()> {
        if self.rounds == 0 {
            return Ok(());
        }
        epsilon_bound(spectral).validate(self.epsilon).map(|_| ())
    }
}

fn check_slots(slots: &[GradSlot], topology: &Topology) -> Result<()> {
    if slots.len() != topology.n_agents() {
        return Err(FirlError::SlotCount { expected: topology.n_agents(), got: slots.len() });
    }
    let dim = slots[0].vector.dim();
    for (i, s) in slots.iter().enumerate() {
        if s.agent_id != i {
            return Err(FirlError::Config(format!("slot {i} holds agent {}", s.agent_id)));
        }
        if s.vector.dim() != dim {
            return Err(FirlError::DimensionMismatch { expected: dim, got: s.vector.dim() });
        }
    }
    Ok(())
}

/// One synchronous gossip round.
pub fn gossip_round(slots: &[GradSlot], topology: &Topology, epsilon: f64) -> Result<Vec<GradSlot>> {
    check_slots(slots, topology)?;
    let dim = slots[0].vector.dim();
    slots
        .iter()
        .enumerate()
        .map(|(i, slot)| {
            let own = slot.vector.as_slice();
            let mut acc = vec![0.0; dim];
            for &l in topology.neighbors(i) {
                for (a, (x, y)) in acc.iter_mut().zip(slots[l].vector.as_slice().iter().zip(own)) {
                    *a += x - y;
                }
            }
            let next: Vec<f64> = own.iter().zip(&acc).map(|(o, a)| o + epsilon * a).collect();
            let vector = ParamVec::from(next);
            if !vector.is_finite() {
                return Err(FirlError::NonFinite("gossip output"));
            }
            Ok(GradSlot { agent_id: i, vector, ready: true, round: slot.round + 1 })
        })
        .collect()
}

/// Applies `cfg.rounds` gossip rounds; zero rounds is the identity.
pub fn run_consensus(slots: Vec<GradSlot>, topology: &Topology, cfg: &ConsensusConfig) -> Result<Vec<GradSlot>> {
    let mut cur = slots;
    for _ in 0..cfg.rounds {
        cur = gossip_round(&cur, topology, cfg.epsilon)?;
    }
    Ok(cur)
}

/// As [`run_consensus`], recording one neighbor exchange and one local
/// combination per (agent, neighbor, round) in the ledger.
pub fn run_consensus_metered(
    slots: Vec<GradSlot>,
    topology: &Topology,
    cfg: &ConsensusConfig,
    ledger: &mut CostLedger,
) -> Result<Vec<GradSlot>> {
    let out = run_consensus(slots, topology, cfg)?;
    let per_round = topology.degree_sum() as u64;
    ledger.record_gossip(per_round * cfg.rounds as u64, per_round * cfg.rounds as u64);
    Ok(out)
}

/// Sum of squared distances of the slot vectors from their mean.
pub fn disagreement(slots: &[GradSlot]) -> f64 {
    if slots.is_empty() {
        return 0.0;
    }
    let vecs: Vec<&ParamVec> = slots.iter().map(|s| &s.vector).collect();
    let mean = match crate::params::mean_of(&vecs) {
        Ok(m) => m,
        Err(_) => return f64::NAN,
    };
    vecs.iter().map(|v| v.dist_sq(&mean).unwrap_or(f64::NAN)).sum()
}
