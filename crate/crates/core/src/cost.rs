//! Resource-cost accounting and the system utility.
//!
//! Costs are kept as exact integer event counts per unit kind:
//!
//! * `C1` upload of an agent's gradients to the virtual agent,
//! * `C2` one local update computed by an agent,
//! * `W1` one gradient exchange with a neighbor,
//! * `W2` one local gossip combination.
//!
//! A cost value is only formed when the counts are priced by a
//! [`CostModel`], so closed forms and ledgers compare as integers.

use serde::{Deserialize, Serialize};

use crate::error::{FirlError, Result};
use crate::topology::Topology;

/// Unit prices and the utility weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub c2: f64,
    #[serde(default = "one")]
    pub w1: f64,
    #[serde(default = "one")]
    pub w2: f64,
    #[serde(default = "one")]
    pub alpha: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { c1: 1.0, c2: 1.0, w1: 1.0, w2: 1.0, alpha: 1.0 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let units = [self.c1, self.c2, self.w1, self.w2];
        if units.iter().any(|u| !u.is_finite() || *u < 0.0) {
            return Err(FirlError::Config("unit costs must be finite and nonnegative".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(FirlError::Config("alpha must be positive".into()));
        }
        Ok(())
    }

    /// Every unit price multiplied by `factor`.
    pub fn scaled_units(&self, factor: f64) -> CostModel {
        CostModel {
            c1: self.c1 * factor,
            c2: self.c2 * factor,
            w1: self.w1 * factor,
            w2: self.w2 * factor,
            alpha: self.alpha,
        }
    }
}

/// Integer multiplicities of each unit cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostCoefficients {
    pub c1: u64,
    pub c2: u64,
    pub w1: u64,
    pub w2: u64,
}

impl CostCoefficients {
    pub fn price(&self, model: &CostModel) -> f64 {
        self.c1 as f64 * model.c1
            + self.c2 as f64 * model.c2
            + self.w1 as f64 * model.w1
            + self.w2 as f64 * model.w2
    }
}

/// Running event counters. Counters only ever increase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub c1_events: u64,
    pub c2_events: u64,
    pub w1_events: u64,
    pub w2_events: u64,
}

impl CostLedger {
    pub fn record_uploads(&mut self, n: u64) {
        self.c1_events += n;
    }

    pub fn record_local_updates(&mut self, n: u64) {
        self.c2_events += n;
    }

    pub fn record_gossip(&mut self, exchanges: u64, combinations: u64) {
        self.w1_events += exchanges;
        self.w2_events += combinations;
    }

    pub fn coefficients(&self) -> CostCoefficients {
        CostCoefficients {
            c1: self.c1_events,
            c2: self.c2_events,
            w1: self.w1_events,
            w2: self.w2_events,
        }
    }
}

/// Run-length constants shared by the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    /// Maximum epoch length in environment steps.
    pub epoch_len: u64,
    pub epochs: u64,
    /// Transitions per step, the mini-batch cap.
    pub step_len: u64,
    pub tau: u64,
}

impl Schedule {
    /// Total iterations `epochs * epoch_len / step_len`.
    pub fn iterations(&self) -> Result<u64> {
        if self.step_len == 0 {
            return Err(FirlError::DivisionByZero("transitions per step is zero"));
        }
        let total = self.epoch_len * self.epochs;
        if total % self.step_len != 0 {
            return Err(FirlError::Config(format!(
                "iteration count {}*{}/{} is not an integer",
                self.epochs, self.epoch_len, self.step_len
            )));
        }
        Ok(total / self.step_len)
    }

    /// Averaging periods `iterations / tau`.
    pub fn periods(&self) -> Result<u64> {
        if self.tau == 0 {
            return Err(FirlError::DivisionByZero("tau is zero"));
        }
        let k = self.iterations()?;
        if k % self.tau != 0 {
            return Err(FirlError::Config(format!("iteration count {k} is not divisible by tau={}", self.tau)));
        }
        Ok(k / self.tau)
    }
}

/// Closed-form cost of periodic averaging: per agent, one upload and
/// `tau_i` local updates in each of the `K / tau` periods.
pub fn psi0_closed_form(schedule: &Schedule, tau_i: &[u64]) -> Result<CostCoefficients> {
    let periods = schedule.periods()?;
    if let Some(&t) = tau_i.iter().find(|&&t| t == 0 || t > schedule.tau) {
        return Err(FirlError::Config(format!("local update count {t} outside 1..={}", schedule.tau)));
    }
    Ok(CostCoefficients {
        c1: tau_i.len() as u64 * periods,
        c2: tau_i.iter().sum::<u64>() * periods,
        w1: 0,
        w2: 0,
    })
}

/// [`psi0_closed_form`] plus `|neighbors(i)| * E` exchanges and combinations
/// per agent and iteration. Agents are `0..tau_i.len()` of the topology.
pub fn psi3_closed_form(
    schedule: &Schedule,
    tau_i: &[u64],
    topology: &Topology,
    rounds: u64,
) -> Result<CostCoefficients> {
    if tau_i.len() > topology.n_agents() {
        return Err(FirlError::Config(format!(
            "{} agents but topology has {}",
            tau_i.len(),
            topology.n_agents()
        )));
    }
    let degree_sum: u64 = (0..tau_i.len()).map(|i| topology.degree(i) as u64).sum();
    psi3_from_degree_sum(schedule, tau_i, degree_sum, rounds)
}

/// [`psi3_closed_form`] for a known degree sum.
pub fn psi3_from_degree_sum(
    schedule: &Schedule,
    tau_i: &[u64],
    degree_sum: u64,
    rounds: u64,
) -> Result<CostCoefficients> {
    let mut c = psi0_closed_form(schedule, tau_i)?;
    let gossip = degree_sum * rounds * schedule.iterations()?;
    c.w1 = gossip;
    c.w2 = gossip;
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reconciliation {
    pub matches: bool,
    /// Ledger minus closed form, per unit.
    pub delta: [i64; 4],
}

pub fn ledger_reconcile(ledger: &CostLedger, closed_form: &CostCoefficients) -> Reconciliation {
    let l = ledger.coefficients();
    let delta = [
        l.c1 as i64 - closed_form.c1 as i64,
        l.c2 as i64 - closed_form.c2 as i64,
        l.w1 as i64 - closed_form.w1 as i64,
        l.w2 as i64 - closed_form.w2 as i64,
    ];
    Reconciliation { matches: delta == [0; 4], delta }
}

/// `alpha * (psi2 - psi1) / cost`.
pub fn utility(psi2: f64, psi1: f64, cost: f64, alpha: f64) -> Result<f64> {
    if cost <= 0.0 {
        return Err(FirlError::ZeroCost);
    }
    Ok(alpha * (psi2 - psi1) / cost)
}

/// Convergence inputs and the resulting utilities of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub cost: f64,
    pub psi1_hat: f64,
    pub psi2: f64,
    pub utility: f64,
}

impl UtilityReport {
    pub fn new(coefficients: &CostCoefficients, model: &CostModel, psi2: f64, psi1_hat: f64) -> Result<Self> {
        let cost = coefficients.price(model);
        Ok(UtilityReport { cost, psi1_hat, psi2, utility: utility(psi2, psi1_hat, cost, model.alpha)? })
    }
}
