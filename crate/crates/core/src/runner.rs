//! Executes a run configuration and writes its artifacts:
//! `metrics.csv`, `summary.json`, `manifest.json` and, when a topology is
//! configured, `topology.edges`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bound::{check_lr_condition, max_feasible_eta, theorem1_bound, BoundInputs};
use crate::config::{ProblemSpec, RunConfig};
use crate::cost::{ledger_reconcile, psi0_closed_form, psi3_closed_form, utility};
use crate::error::{FirlError, Result};
use crate::estimate::{estimate_constants, EstimatorSettings};
use crate::fed::{collect_probe, run_experiment, Problem};
use crate::params::{minibatch_loss, GradOracle, MiniBatch, OracleConstants, ParamVec};
use crate::problems::{SyntheticProblem, SyntheticTask, TrafficTask};
use crate::report::{
    finite, metrics_row, ConstantsSummary, CostSummary, Summary, METRICS_FORMAT_VERSION, METRICS_HEADER,
    SUMMARY_FORMAT_VERSION,
};
use crate::topology::Topology;

/// Evaluation points kept for constant estimation.
const ESTIMATION_POINTS: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub metrics_format_version: u32,
    pub config_path: String,
    /// `sha256("blob <len>\0" + config bytes)`, as git computes object ids.
    pub config_hash: String,
    pub seed: u64,
    pub output_dir: String,
    pub files: BTreeMap<String, String>,
}

/// Git-style object hash of a byte string.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub summary: Summary,
    pub out_dir: PathBuf,
    pub metrics_rows: usize,
}

/// Loads `config_path`, applies the overrides, runs and writes every artifact.
pub fn execute(config_path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<RunOutcome> {
    let bytes = std::fs::read(config_path)
        .map_err(|e| FirlError::Config(format!("cannot read {}: {e}", config_path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| FirlError::Config("config is not UTF-8".into()))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(s) = seed {
        cfg.protocol.seed = s;
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.dir.clone());
    let outcome = run_config(&cfg, base, &out_dir)?;
    let mut files = BTreeMap::new();
    for name in [&cfg.output.metrics, &cfg.output.summary] {
        files.insert(name.clone(), content_hash(&std::fs::read(out_dir.join(name))?));
    }
    let manifest = RunManifest {
        format_version: SUMMARY_FORMAT_VERSION,
        metrics_format_version: METRICS_FORMAT_VERSION,
        config_path: config_path.display().to_string(),
        config_hash: content_hash(&bytes),
        seed: cfg.protocol.seed,
        output_dir: out_dir.display().to_string(),
        files,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(outcome)
}

/// Validates, runs and writes metrics, summary and topology to `out_dir`.
/// Nothing is written if validation fails.
pub fn run_config(cfg: &RunConfig, base_dir: &Path, out_dir: &Path) -> Result<RunOutcome> {
    let topology = cfg.validate(base_dir)?;
    std::fs::create_dir_all(out_dir)?;
    if let Some(t) = &topology {
        std::fs::write(out_dir.join("topology.edges"), t.to_edge_list())?;
    }
    let metrics_path = out_dir.join(&cfg.output.metrics);
    let mut writer = BufWriter::new(File::create(&metrics_path)?);
    writeln!(writer, "{METRICS_HEADER}")?;
    let result = match &cfg.problem {
        ProblemSpec::Synthetic(spec) => {
            let task = SyntheticTask::new(SyntheticProblem::generate(spec.clone())?, cfg.protocol.n_total, cfg.protocol.seed);
            let fresh = task.clone();
            drive(cfg, topology.as_ref(), task, move || Ok(fresh), &mut writer)
        }
        ProblemSpec::RingTraffic(spec) => {
            let seed = cfg.protocol.seed;
            let task = TrafficTask::new(spec.clone(), seed)?;
            let spec = spec.clone();
            drive(cfg, topology.as_ref(), task, move || TrafficTask::new(spec, seed), &mut writer)
        }
    };
    // records emitted before a failure stay on disk
    writer.flush()?;
    let (summary, rows) = result?;
    write_json(&out_dir.join(&cfg.output.summary), &summary)?;
    Ok(RunOutcome { summary, out_dir: out_dir.to_path_buf(), metrics_rows: rows })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| FirlError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn drive<P, F, W>(
    cfg: &RunConfig,
    topology: Option<&Topology>,
    mut problem: P,
    fresh: F,
    writer: &mut W,
) -> Result<(Summary, usize)>
where
    P: Problem,
    F: FnOnce() -> Result<P>,
    W: Write,
    <P::Oracle as GradOracle>::Sample: Clone,
{
    let proto = &cfg.protocol;
    let probe = match problem.canonical_probe() {
        Some(p) => p,
        None => collect_probe(proto, &mut fresh()?, cfg.probe_size)?,
    };
    let theta0 = problem.initial_params();
    let expected_rounds = proto.iterations()? / proto.exchange_interval();
    let stride = (expected_rounds / ESTIMATION_POINTS).max(1);
    let mut points = vec![theta0.clone()];
    let mut rows = 0usize;
    let run = run_experiment(proto, topology, &mut problem, Some(&probe), |r| {
        writeln!(writer, "{}", metrics_row(r))?;
        if !r.skipped && (rows as u64 + 1) % stride == 0 {
            points.push(r.theta_bar.clone());
        }
        rows += 1;
        Ok(())
    })?;

    let mut warnings = Vec::new();
    if run.skipped_rounds > 0 {
        warnings.push(format!("{} averaging rounds had no qualifying agent", run.skipped_rounds));
    }
    let spectral = topology.map(|t| t.spectral()).transpose()?;
    let mu2 = spectral.as_ref().map(|s| s.mu2);
    let rounds = proto.consensus.rounds;

    let ledger = run.ledger.coefficients();
    // the closed forms assume one exchange per period of tau iterations
    let per_period = proto.exchange_interval() == proto.tau;
    let closed_form = match (proto.tau_policy.static_counts(proto.n_total, proto.tau), proto.n_total == proto.m) {
        (Some(counts), true) if per_period => Some(match topology {
            Some(t) if rounds > 0 => psi3_closed_form(&proto.schedule(), &counts, t, rounds as u64)?,
            _ => psi0_closed_form(&proto.schedule(), &counts)?,
        }),
        _ => None,
    };
    let reconciliation = closed_form.map(|c| ledger_reconcile(&run.ledger, &c));
    if reconciliation.is_some_and(|r| !r.matches) {
        warnings.push("realized costs differ from the closed form; the ledger is authoritative".into());
    }
    let cost_value = ledger.price(&cfg.cost_model);
    let cost = CostSummary {
        kind: if rounds > 0 { "psi3" } else { "psi0" }.into(),
        ledger,
        closed_form,
        reconciliation,
        value: cost_value,
    };

    let oracle = problem.oracle();
    let (constants, source) = match oracle.constants() {
        Some(c) => (Some(c), "analytic"),
        None => {
            let settings = EstimatorSettings {
                batch_size: proto.step_len as usize,
                repeats: cfg.estimator_repeats,
                seed: proto.seed,
            };
            match estimate_constants(oracle, &probe, &points, &settings) {
                Ok(c) => (Some(c), "estimated"),
                Err(e) => {
                    warnings.push(format!("constant estimation failed: {e}"));
                    (None, "estimated")
                }
            }
        }
    };
    let f_gap = cfg.f_gap.unwrap_or_else(|| initial_gap(&problem, &probe, &theta0, &points));
    let constants = constants.map(|c: OracleConstants| ConstantsSummary {
        lipschitz: c.lipschitz,
        sigma_sq: c.sigma_sq,
        beta: c.beta,
        f_gap,
        source: source.into(),
    });

    let mut bound = None;
    let mut lr_slack = None;
    let mut eta_max = None;
    if let Some(c) = &constants {
        let inputs = BoundInputs {
            f_gap: c.f_gap,
            eta: proto.eta,
            lipschitz: c.lipschitz,
            sigma_sq: c.sigma_sq,
            beta: c.beta,
            m: proto.m,
            tau: proto.tau as usize,
            iterations: run.iterations,
            epsilon: proto.consensus.epsilon,
            mu2: mu2.unwrap_or(0.0),
            rounds: rounds as u32,
        };
        match theorem1_bound(&inputs) {
            Ok(b) => {
                if let Some(w) = &b.warning {
                    warnings.push(w.clone());
                }
                bound = Some(b);
            }
            Err(e) => warnings.push(format!("bound not evaluated: {e}")),
        }
        lr_slack = finite(-check_lr_condition(proto.eta, c.lipschitz, c.beta, proto.m, proto.tau as usize).lhs);
        eta_max = max_feasible_eta(c.lipschitz, c.beta, proto.m, proto.tau as usize).ok();
    }

    let alpha = cfg.cost_model.alpha;
    let measured = utility(run.psi2, run.psi1_hat, cost_value, alpha);
    if let Err(e) = &measured {
        warnings.push(format!("utility not evaluated: {e}"));
    }
    let utility_bound = bound.as_ref().and_then(|b| utility(run.psi2, b.value, cost_value, alpha).ok());

    let summary = Summary {
        format_version: SUMMARY_FORMAT_VERSION,
        label: cfg.label(),
        tau: proto.tau,
        tau_spec: proto.tau_policy.label(proto.tau),
        gossip_rounds: rounds,
        epsilon: proto.consensus.epsilon,
        seed: proto.seed,
        n_total: proto.n_total,
        m: proto.m,
        mu2,
        degree_sum: topology.map(|t| t.degree_sum()),
        iterations: run.iterations,
        averaging_rounds: run.averaging_rounds,
        skipped_rounds: run.skipped_rounds,
        dropped_uploads: run.dropped_uploads,
        cost,
        psi1_hat: finite(run.psi1_hat),
        psi2: finite(run.psi2),
        final_probe_grad_norm_sq: finite(run.final_probe_grad_norm_sq),
        constants,
        theorem1_bound: bound,
        utility_measured: measured.ok().and_then(finite),
        utility_bound: utility_bound.and_then(finite),
        lr_condition_slack: lr_slack,
        max_feasible_eta: eta_max,
        problem_counters: problem.counters().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        warnings,
    };
    Ok((summary, rows))
}

/// `F(theta_0) - F_inf` on the probe. Without a known lower bound the
/// smallest probe loss seen along the run stands in for `F_inf`.
fn initial_gap<P: Problem>(
    problem: &P,
    probe: &MiniBatch<<P::Oracle as GradOracle>::Sample>,
    theta0: &ParamVec,
    points: &[ParamVec],
) -> f64 {
    let oracle = problem.oracle();
    let f0 = minibatch_loss(oracle, theta0, probe);
    let f_inf = problem
        .f_inf()
        .unwrap_or_else(|| points.iter().map(|p| minibatch_loss(oracle, p, probe)).fold(f0, f64::min));
    (f0 - f_inf).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn git_style_hash() {
        // sha256 object id of an empty blob
        assert_eq!(content_hash(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
    }
}
