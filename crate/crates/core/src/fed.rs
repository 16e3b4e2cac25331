//! Protocol driver: local SGD, gradient gossip, periodic averaging by the
//! virtual agent, stragglers and link delays.
//!
//! Time advances in iterations `k = 0..K` with `K = epochs * epoch_len /
//! step_len`. Within iteration `k` every agent:
//!
//! * computes a mini-batch gradient if it still has local updates left in
//!   the current period (`k mod tau < tau_i`), otherwise holds a zero slot;
//! * runs `E` gossip rounds with its neighbors on those slots;
//! * steps its local parameters with the post-gossip gradient.
//!
//! At every exchange boundary the agents upload the sum of the gradients
//! they applied since the previous exchange. Uploads reach the virtual
//! agent after the uplink delay; it then moves its model by `eta` times the
//! averaged sums and emits a [`RoundRecord`]. New models reach the agents
//! after the downlink delay and are adopted at the next exchange boundary.
//! With no delays and `E = 0` this is plain periodic averaging.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{run_consensus_metered, ConsensusConfig, GradSlot};
use crate::cost::{CostLedger, Schedule};
use crate::error::{FirlError, Result};
use crate::params::{expected_grad_norm, minibatch_grad, sgd_step, GradOracle, MiniBatch, ParamVec};
use crate::rng;
use crate::topology::Topology;

/// How many local updates each agent completes per period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauPolicy {
    /// Every agent completes `tau` updates.
    Fixed,
    /// Drawn uniformly from `lo..=hi` per agent and period.
    UniformRange { lo: u64, hi: u64 },
    /// Agent `i` completes `values[i]` updates in every period.
    PerAgent { values: Vec<u64> },
}

impl Default for TauPolicy {
    fn default() -> Self {
        TauPolicy::Fixed
    }
}

impl TauPolicy {
    fn draw<R: Rng>(&self, rng: &mut R, agent: usize, tau: u64) -> u64 {
        match self {
            TauPolicy::Fixed => tau,
            TauPolicy::UniformRange { lo, hi } => rng.random_range(*lo..=*hi),
            TauPolicy::PerAgent { values } => values[agent],
        }
    }

    /// Per-agent counts when they are the same in every period.
    pub fn static_counts(&self, n_agents: usize, tau: u64) -> Option<Vec<u64>> {
        match self {
            TauPolicy::Fixed => Some(vec![tau; n_agents]),
            TauPolicy::UniformRange { .. } => None,
            TauPolicy::PerAgent { values } => Some(values.clone()),
        }
    }

    /// Short description such as `10`, `10~15` or `1~15`.
    pub fn label(&self, tau: u64) -> String {
        match self {
            TauPolicy::Fixed => tau.to_string(),
            TauPolicy::UniformRange { lo, hi } => format!("{lo}~{hi}"),
            TauPolicy::PerAgent { values } => {
                let lo = values.iter().min().copied().unwrap_or(tau);
                let hi = values.iter().max().copied().unwrap_or(tau);
                if lo == hi {
                    lo.to_string()
                } else {
                    format!("{lo}~{hi}")
                }
            }
        }
    }
}

/// Divisor of the virtual agent's average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Number of agents that actually contributed.
    #[default]
    Participants,
    /// The configured cap `m`, even if fewer agents contributed.
    M,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    /// Agents in the system.
    pub n_total: usize,
    /// Maximum number of agents aggregated per exchange.
    pub m: usize,
    pub tau: u64,
    #[serde(default)]
    pub tau_policy: TauPolicy,
    pub eta: f64,
    /// Maximum epoch length in environment steps.
    pub epoch_len: u64,
    pub epochs: u64,
    /// Transitions per step; one step is one iteration.
    pub step_len: u64,
    #[serde(default = "ConsensusConfig::disabled")]
    pub consensus: ConsensusConfig,
    #[serde(default)]
    pub uplink_delay_epochs: u64,
    #[serde(default)]
    pub downlink_delay_epochs: u64,
    /// 1: agents exchange with the virtual agent at every period boundary.
    /// n > 1: only at boundaries that are multiples of n epochs.
    #[serde(default = "one")]
    pub param_apply_period_epochs: u64,
    #[serde(default)]
    pub denominator: Denominator,
    pub seed: u64,
}

fn one() -> u64 {
    1
}

impl FedConfig {
    pub fn schedule(&self) -> Schedule {
        Schedule { epoch_len: self.epoch_len, epochs: self.epochs, step_len: self.step_len, tau: self.tau }
    }

    pub fn iterations(&self) -> Result<u64> {
        self.schedule().iterations()
    }

    pub fn iterations_per_epoch(&self) -> u64 {
        self.epoch_len / self.step_len.max(1)
    }

    /// Iterations between two exchanges with the virtual agent.
    pub fn exchange_interval(&self) -> u64 {
        if self.param_apply_period_epochs <= 1 {
            self.tau
        } else {
            self.param_apply_period_epochs * self.iterations_per_epoch()
        }
    }

    pub fn uplink_delay_iters(&self) -> u64 {
        self.uplink_delay_epochs * self.iterations_per_epoch()
    }

    pub fn downlink_delay_iters(&self) -> u64 {
        self.downlink_delay_epochs * self.iterations_per_epoch()
    }

    /// Checks every protocol invariant. Run before any work is done.
    pub fn validate(&self, topology: Option<&Topology>) -> Result<()> {
        let bad = |msg: String| Err(FirlError::Config(msg));
        if self.n_total == 0 || self.m == 0 || self.m > self.n_total {
            return bad(format!("need 1 <= m <= n_total, got m={} n_total={}", self.m, self.n_total));
        }
        if self.tau == 0 {
            return Err(FirlError::DivisionByZero("tau is zero"));
        }
        match &self.tau_policy {
            TauPolicy::Fixed => {}
            &TauPolicy::UniformRange { lo, hi } => {
                if lo == 0 || lo > hi || hi > self.tau {
                    return bad(format!("local update range {lo}..={hi} must lie within 1..={}", self.tau));
                }
            }
            TauPolicy::PerAgent { values } => {
                if values.len() != self.n_total {
                    return bad(format!("{} local update counts for {} agents", values.len(), self.n_total));
                }
                if values.iter().any(|&v| v == 0 || v > self.tau) {
                    return bad(format!("local update counts must lie within 1..={}", self.tau));
                }
            }
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.eta));
        }
        if self.epoch_len == 0 || self.epochs == 0 {
            return bad("epoch length and epoch count must be positive".into());
        }
        if self.step_len == 0 {
            return Err(FirlError::DivisionByZero("transitions per step is zero"));
        }
        if self.epoch_len % self.step_len != 0 {
            return bad(format!(
                "epoch length {} is not a multiple of the step length {}",
                self.epoch_len, self.step_len
            ));
        }
        self.schedule().periods()?;
        if self.param_apply_period_epochs == 0 {
            return bad("param_apply_period_epochs must be positive".into());
        }
        if self.exchange_interval() % self.tau != 0 {
            return bad(format!(
                "exchange interval {} iterations is not a multiple of tau={}",
                self.exchange_interval(),
                self.tau
            ));
        }
        match topology {
            Some(t) => {
                if t.n_agents() != self.n_total {
                    return bad(format!("topology has {} agents, config has {}", t.n_agents(), self.n_total));
                }
                self.consensus.validate(&t.spectral()?)?;
            }
            None if self.consensus.rounds > 0 => {
                return bad("gossip rounds > 0 require a topology".into());
            }
            None => {}
        }
        Ok(())
    }
}

/// Agents with at least one completed local update, at most `m` of them,
/// lowest ids first.
pub fn straggler_select(progress: &[u64], m: usize) -> Vec<usize> {
    progress
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= 1)
        .map(|(i, _)| i)
        .take(m)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IterationContext {
    pub k: u64,
    pub epoch: u64,
    /// Iteration index within the epoch.
    pub step: u64,
    pub step_len: u64,
    pub epoch_len: u64,
}

/// A learning task shared by all agents.
pub trait Problem {
    type Oracle: GradOracle;

    fn oracle(&self) -> &Self::Oracle;

    fn n_agents(&self) -> usize;

    fn initial_params(&self) -> ParamVec;

    /// Mini-batches for one iteration. `thetas` are the agents' current
    /// parameters; an entry is `None` when the agent produced no batch.
    /// Inactive agents may still interact with a shared environment.
    fn local_batches(
        &mut self,
        ctx: &IterationContext,
        thetas: &[ParamVec],
        active: &[bool],
    ) -> Result<Vec<Option<MiniBatch<<Self::Oracle as GradOracle>::Sample>>>>;

    /// A probe set that does not need to be collected from a baseline run.
    fn canonical_probe(&self) -> Option<MiniBatch<<Self::Oracle as GradOracle>::Sample>> {
        None
    }

    fn f_inf(&self) -> Option<f64> {
        None
    }

    /// Problem-specific event counts reported in run summaries.
    fn counters(&self) -> Vec<(&'static str, u64)> {
        Vec::new()
    }
}

/// Emitted whenever the virtual agent updates its model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Iterations completed when the update happened.
    pub k: u64,
    pub theta_bar: ParamVec,
    pub probe_grad_norm_sq: f64,
    /// Local updates of every agent in the exchange window that produced this update.
    pub per_agent_updates: Vec<u64>,
    pub participants: usize,
    pub cost: CostLedger,
    /// No agent qualified; the model was left unchanged.
    pub skipped: bool,
}

/// Per-iteration log, kept only when tracing is enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub k: u64,
    /// Own gradients before gossip, `None` if the agent computed none.
    pub raw: Vec<Option<ParamVec>>,
    /// Gradients actually applied, `None` if the agent did not step.
    pub applied: Vec<Option<ParamVec>>,
    /// Agent parameters after the local step and any adoption at the end of `k`.
    pub thetas: Vec<ParamVec>,
    pub theta_bar: ParamVec,
    pub adopted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: u64,
    pub averaging_rounds: u64,
    pub skipped_rounds: u64,
    /// Probe gradient norm at the initial model.
    pub psi2: f64,
    /// Probe gradient norm of the virtual model averaged over iterations.
    pub psi1_hat: f64,
    pub final_probe_grad_norm_sq: f64,
    pub ledger: CostLedger,
    /// Local updates completed by each agent over the whole run.
    pub local_updates: Vec<u64>,
    /// Uploads still in flight at the end of the run.
    pub dropped_uploads: u64,
}

struct Contribution {
    /// `(agent, sum of applied gradients)` for each participant.
    sums: Vec<(usize, ParamVec)>,
    progress: Vec<u64>,
}

pub struct Simulation<'a, S> {
    cfg: &'a FedConfig,
    topology: Option<&'a Topology>,
    probe: Option<&'a MiniBatch<S>>,
    iterations: u64,
    exchange_interval: u64,
    thetas: Vec<ParamVec>,
    theta_bar: ParamVec,
    grad_sums: Vec<ParamVec>,
    progress: Vec<u64>,
    tau_i: Vec<u64>,
    tau_rng: ChaCha8Rng,
    uplink: VecDeque<(u64, Contribution)>,
    downlink: VecDeque<(u64, ParamVec)>,
    received: Option<ParamVec>,
    ledger: CostLedger,
    k: u64,
    psi2: f64,
    held_norm: f64,
    held_since: u64,
    norm_integral: f64,
    rounds: u64,
    skipped: u64,
    local_updates: Vec<u64>,
    trace: Option<Vec<IterationTrace>>,
}

impl<'a, S> Simulation<'a, S> {
    /// Validates the configuration against the problem and prepares the
    /// initial state. All agents and the virtual agent start from the
    /// problem's initial parameters.
    pub fn new<P>(
        cfg: &'a FedConfig,
        topology: Option<&'a Topology>,
        problem: &P,
        probe: Option<&'a MiniBatch<S>>,
    ) -> Result<Self>
    where
        P: Problem,
        P::Oracle: GradOracle<Sample = S>,
    {
        cfg.validate(topology)?;
        if problem.n_agents() != cfg.n_total {
            return Err(FirlError::Config(format!(
                "problem has {} agents, config has {}",
                problem.n_agents(),
                cfg.n_total
            )));
        }
        let theta0 = problem.initial_params();
        if theta0.dim() != problem.oracle().dim() {
            return Err(FirlError::DimensionMismatch { expected: problem.oracle().dim(), got: theta0.dim() });
        }
        let psi2 = match probe {
            Some(p) => expected_grad_norm(problem.oracle(), &theta0, p)?,
            None => f64::NAN,
        };
        let n = cfg.n_total;
        let dim = theta0.dim();
        Ok(Simulation {
            cfg,
            topology,
            probe,
            iterations: cfg.iterations()?,
            exchange_interval: cfg.exchange_interval(),
            thetas: vec![theta0.clone(); n],
            theta_bar: theta0,
            grad_sums: vec![ParamVec::zeros(dim); n],
            progress: vec![0; n],
            tau_i: vec![cfg.tau; n],
            tau_rng: rng::stream(cfg.seed, &[0x7a0]),
            uplink: VecDeque::new(),
            downlink: VecDeque::new(),
            received: None,
            ledger: CostLedger::default(),
            k: 0,
            psi2,
            held_norm: psi2,
            held_since: 0,
            norm_integral: 0.0,
            rounds: 0,
            skipped: 0,
            local_updates: vec![0; n],
            trace: None,
        })
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Option<Vec<IterationTrace>> {
        self.trace.take()
    }

    pub fn is_done(&self) -> bool {
        self.k >= self.iterations
    }

    pub fn iteration(&self) -> u64 {
        self.k
    }

    pub fn theta_bar(&self) -> &ParamVec {
        &self.theta_bar
    }

    pub fn thetas(&self) -> &[ParamVec] {
        &self.thetas
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    /// Local update counts for the current period.
    pub fn tau_i(&self) -> &[u64] {
        &self.tau_i
    }

    /// Runs one iteration and returns the records it produced.
    pub fn step<P>(&mut self, problem: &mut P) -> Result<Vec<RoundRecord>>
    where
        P: Problem,
        P::Oracle: GradOracle<Sample = S>,
    {
        self.step_observed(problem, &mut |_| {})
    }

    /// As [`Simulation::step`], passing every computed batch sample to `observe`.
    pub fn step_observed<P>(&mut self, problem: &mut P, observe: &mut dyn FnMut(&S)) -> Result<Vec<RoundRecord>>
    where
        P: Problem,
        P::Oracle: GradOracle<Sample = S>,
    {
        let cfg = self.cfg;
        let n = cfg.n_total;
        let k = self.k;
        if k >= self.iterations {
            return Err(FirlError::Config("simulation already finished".into()));
        }
        if k % cfg.tau == 0 {
            for i in 0..n {
                self.tau_i[i] = cfg.tau_policy.draw(&mut self.tau_rng, i, cfg.tau);
            }
        }
        let in_period = k % cfg.tau;
        let active: Vec<bool> = self.tau_i.iter().map(|&t| in_period < t).collect();
        let ipe = cfg.iterations_per_epoch();
        let ctx = IterationContext {
            k,
            epoch: k / ipe,
            step: k % ipe,
            step_len: cfg.step_len,
            epoch_len: cfg.epoch_len,
        };
        let batches = problem.local_batches(&ctx, &self.thetas, &active)?;
        if batches.len() != n {
            return Err(FirlError::SlotCount { expected: n, got: batches.len() });
        }
        let oracle = problem.oracle();
        let dim = self.theta_bar.dim();
        let mut slots = Vec::with_capacity(n);
        let mut raw = Vec::with_capacity(n);
        for (i, batch) in batches.iter().enumerate() {
            match (active[i], batch) {
                (true, Some(b)) => {
                    b.samples().iter().for_each(&mut *observe);
                    let g = minibatch_grad(oracle, &self.thetas[i], b)?;
                    self.progress[i] += 1;
                    self.local_updates[i] += 1;
                    self.ledger.record_local_updates(1);
                    raw.push(Some(g.clone()));
                    slots.push(GradSlot::ready(i, g));
                }
                _ => {
                    raw.push(None);
                    slots.push(GradSlot::pending(i, dim));
                }
            }
        }
        let slots = match self.topology {
            Some(t) if cfg.consensus.rounds > 0 => run_consensus_metered(slots, t, &cfg.consensus, &mut self.ledger)?,
            _ => slots,
        };
        let mut applied = Vec::with_capacity(n);
        for (i, slot) in slots.into_iter().enumerate() {
            if !slot.is_ready() {
                applied.push(None);
                continue;
            }
            let g = slot.into_vector();
            self.thetas[i] = sgd_step(&self.thetas[i], &g, cfg.eta)?;
            self.grad_sums[i].axpy(1.0, &g)?;
            applied.push(Some(g));
        }

        let now = k + 1;
        let boundary = now % self.exchange_interval == 0;
        if boundary {
            self.upload(now);
        }
        let records = self.serve(now, oracle)?;
        while self.downlink.front().is_some_and(|(t, _)| *t <= now) {
            self.received = self.downlink.pop_front().map(|(_, theta)| theta);
        }
        let mut adopted = false;
        if boundary {
            if let Some(theta) = self.received.take() {
                self.thetas.iter_mut().for_each(|t| *t = theta.clone());
                adopted = true;
            }
        }
        if let Some(trace) = self.trace.as_mut() {
            trace.push(IterationTrace {
                k,
                raw,
                applied,
                thetas: self.thetas.clone(),
                theta_bar: self.theta_bar.clone(),
                adopted,
            });
        }
        self.k = now;
        Ok(records)
    }

    fn upload(&mut self, now: u64) {
        let participants = straggler_select(&self.progress, self.cfg.m);
        let dim = self.theta_bar.dim();
        let sums = participants
            .iter()
            .map(|&i| (i, std::mem::replace(&mut self.grad_sums[i], ParamVec::zeros(dim))))
            .collect();
        self.ledger.record_uploads(participants.len() as u64);
        let progress = std::mem::replace(&mut self.progress, vec![0; self.cfg.n_total]);
        self.grad_sums.iter_mut().for_each(|g| *g = ParamVec::zeros(dim));
        self.uplink
            .push_back((now + self.cfg.uplink_delay_iters(), Contribution { sums, progress }));
    }

    /// Applies every upload that has arrived by `now`.
    fn serve<O: GradOracle<Sample = S>>(&mut self, now: u64, oracle: &O) -> Result<Vec<RoundRecord>> {
        let mut records = Vec::new();
        while self.uplink.front().is_some_and(|(t, _)| *t <= now) {
            let (_, c) = self.uplink.pop_front().unwrap();
            let skipped = c.sums.is_empty();
            if skipped {
                self.skipped += 1;
            } else {
                let denom = match self.cfg.denominator {
                    Denominator::Participants => c.sums.len(),
                    Denominator::M => self.cfg.m,
                } as f64;
                let mut avg = ParamVec::zeros(self.theta_bar.dim());
                for (_, s) in &c.sums {
                    avg.axpy(1.0, s)?;
                }
                avg.as_mut_slice().iter_mut().for_each(|a| *a /= denom);
                self.theta_bar = sgd_step(&self.theta_bar, &avg, self.cfg.eta)?;
                self.rounds += 1;
            }
            let norm = match self.probe {
                Some(p) => expected_grad_norm(oracle, &self.theta_bar, p)?,
                None => f64::NAN,
            };
            self.norm_integral += self.held_norm * (now - self.held_since) as f64;
            self.held_norm = norm;
            self.held_since = now;
            self.downlink
                .push_back((now + self.cfg.downlink_delay_iters(), self.theta_bar.clone()));
            records.push(RoundRecord {
                k: now,
                theta_bar: self.theta_bar.clone(),
                probe_grad_norm_sq: norm,
                per_agent_updates: c.progress,
                participants: c.sums.len(),
                cost: self.ledger,
                skipped,
            });
        }
        Ok(records)
    }

    pub fn finish(self) -> RunSummary {
        let end = self.iterations.max(self.held_since);
        let integral = self.norm_integral + self.held_norm * (end - self.held_since) as f64;
        RunSummary {
            iterations: self.iterations,
            averaging_rounds: self.rounds,
            skipped_rounds: self.skipped,
            psi2: self.psi2,
            psi1_hat: integral / self.iterations as f64,
            final_probe_grad_norm_sq: self.held_norm,
            ledger: self.ledger,
            local_updates: self.local_updates,
            dropped_uploads: self.uplink.iter().map(|(_, c)| c.sums.len() as u64).sum(),
        }
    }
}

/// Runs the whole protocol, handing each record to `sink` as it is produced.
/// On failure the records emitted so far have already reached the sink.
pub fn run_experiment<P, F>(
    cfg: &FedConfig,
    topology: Option<&Topology>,
    problem: &mut P,
    probe: Option<&MiniBatch<<P::Oracle as GradOracle>::Sample>>,
    mut sink: F,
) -> Result<RunSummary>
where
    P: Problem,
    F: FnMut(&RoundRecord) -> Result<()>,
{
    let mut sim = Simulation::new(cfg, topology, problem, probe)?;
    while !sim.is_done() {
        for r in sim.step(problem)? {
            sink(&r)?;
        }
    }
    Ok(sim.finish())
}

/// Collects a probe set by running the single-step baseline (`tau = 1`, no
/// gossip, no delays) of `cfg` and keeping a uniform reservoir sample of
/// `size` training samples.
pub fn collect_probe<P>(
    cfg: &FedConfig,
    problem: &mut P,
    size: usize,
) -> Result<MiniBatch<<P::Oracle as GradOracle>::Sample>>
where
    P: Problem,
    <P::Oracle as GradOracle>::Sample: Clone,
{
    if size == 0 {
        return Err(FirlError::Config("probe size must be positive".into()));
    }
    let baseline = baseline_config(cfg);
    let mut sim = Simulation::new(&baseline, None, problem, None)?;
    let mut rng = rng::stream(cfg.seed, &[0x9b0be]);
    let mut reservoir = Vec::with_capacity(size);
    let mut seen: u64 = 0;
    while !sim.is_done() {
        sim.step_observed(problem, &mut |s| {
            seen += 1;
            if reservoir.len() < size {
                reservoir.push(s.clone());
            } else {
                let j = rng.random_range(0..seen);
                if (j as usize) < size {
                    reservoir[j as usize] = s.clone();
                }
            }
        })?;
    }
    MiniBatch::new(reservoir)
}

/// `cfg` with `tau = 1`, no gossip and no delays.
pub fn baseline_config(cfg: &FedConfig) -> FedConfig {
    FedConfig {
        tau: 1,
        tau_policy: TauPolicy::Fixed,
        consensus: ConsensusConfig::disabled(),
        uplink_delay_epochs: 0,
        downlink_delay_epochs: 0,
        param_apply_period_epochs: 1,
        ..cfg.clone()
    }
}
