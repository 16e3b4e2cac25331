//! Run summaries, the metrics CSV layout and comparison tables built from
//! saved summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bound::BoundReport;
use crate::cost::{CostCoefficients, Reconciliation};
use crate::error::{FirlError, Result};
use crate::fed::RoundRecord;

pub const SUMMARY_FORMAT_VERSION: u32 = 1;
pub const METRICS_FORMAT_VERSION: u32 = 1;
pub const METRICS_HEADER: &str = "k,probe_grad_norm_sq,participants,c1_events,c2_events,w1_events,w2_events";

pub fn metrics_row(r: &RoundRecord) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.k,
        r.probe_grad_norm_sq,
        r.participants,
        r.cost.c1_events,
        r.cost.c2_events,
        r.cost.w1_events,
        r.cost.w2_events
    )
}

/// `Some(x)` for finite `x`.
pub fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    /// `psi0` without gossip, `psi3` with it.
    pub kind: String,
    /// Realized event counts.
    pub ledger: CostCoefficients,
    /// Nominal counts; present when every agent's update count is fixed.
    pub closed_form: Option<CostCoefficients>,
    pub reconciliation: Option<Reconciliation>,
    /// Ledger counts priced by the cost model.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsSummary {
    pub lipschitz: f64,
    pub sigma_sq: f64,
    pub beta: f64,
    pub f_gap: f64,
    /// `analytic` or `estimated`.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub format_version: u32,
    pub label: String,
    pub tau: u64,
    pub tau_spec: String,
    pub gossip_rounds: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub n_total: usize,
    pub m: usize,
    pub mu2: Option<f64>,
    pub degree_sum: Option<usize>,
    pub iterations: u64,
    pub averaging_rounds: u64,
    pub skipped_rounds: u64,
    pub dropped_uploads: u64,
    pub cost: CostSummary,
    pub psi1_hat: Option<f64>,
    pub psi2: Option<f64>,
    pub final_probe_grad_norm_sq: Option<f64>,
    pub constants: Option<ConstantsSummary>,
    pub theorem1_bound: Option<BoundReport>,
    pub utility_measured: Option<f64>,
    pub utility_bound: Option<f64>,
    /// Minus the left-hand side of the learning-rate condition; nonnegative when it holds.
    pub lr_condition_slack: Option<f64>,
    pub max_feasible_eta: Option<f64>,
    pub problem_counters: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub tau_spec: String,
    pub gossip_rounds: usize,
    pub mu2: Option<f64>,
    pub c1: u64,
    pub c2: u64,
    pub w1: u64,
    pub w2: u64,
    pub psi1_hat: Option<f64>,
    pub theorem1_bound: Option<f64>,
    pub utility_measured: Option<f64>,
    pub source: String,
}

impl TableRow {
    pub fn from_summary(s: &Summary, source: &Path) -> Self {
        TableRow {
            label: s.label.clone(),
            tau_spec: s.tau_spec.clone(),
            gossip_rounds: s.gossip_rounds,
            mu2: s.mu2,
            c1: s.cost.ledger.c1,
            c2: s.cost.ledger.c2,
            w1: s.cost.ledger.w1,
            w2: s.cost.ledger.w2,
            psi1_hat: s.psi1_hat,
            theorem1_bound: s.theorem1_bound.as_ref().map(|b| b.value),
            utility_measured: s.utility_measured,
            source: source.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub rows: Vec<TableRow>,
    /// Matched paths without a readable summary, with the reason.
    pub missing: Vec<(PathBuf, String)>,
}

/// Loads every summary matched by `pattern`. A matched directory stands for
/// the `summary.json` inside it. Rows are sorted by path.
pub fn load_table(pattern: &str) -> Result<Table> {
    let paths = glob::glob(pattern).map_err(|e| FirlError::Config(format!("bad glob pattern: {e}")))?;
    let mut found: Vec<PathBuf> = Vec::new();
    let mut table = Table::default();
    for entry in paths {
        match entry {
            Ok(p) if p.is_dir() => found.push(p.join("summary.json")),
            Ok(p) => found.push(p),
            Err(e) => table.missing.push((e.path().to_path_buf(), e.to_string())),
        }
    }
    found.sort();
    found.dedup();
    for path in found {
        let parsed = std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<Summary>(&t).map_err(|e| e.to_string()));
        match parsed {
            Ok(s) => table.rows.push(TableRow::from_summary(&s, &path)),
            Err(reason) => table.missing.push((path, reason)),
        }
    }
    Ok(table)
}

pub const TABLE_HEADER: &str = "label,tau,E,mu2,C1,C2,W1,W2,psi1_hat,theorem1_bound,utility_measured,source";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_csv(rows: &[TableRow]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&r.label),
            csv_field(&r.tau_spec),
            r.gossip_rounds,
            opt(r.mu2),
            r.c1,
            r.c2,
            r.w1,
            r.w2,
            opt(r.psi1_hat),
            opt(r.theorem1_bound),
            opt(r.utility_measured),
            csv_field(&r.source)
        );
    }
    out
}

pub fn render_json(rows: &[TableRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("rows serialize");
    s.push('\n');
    s
}
