//! Run configuration document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::{FirlError, Result};
use crate::fed::FedConfig;
use crate::problems::{SyntheticSpec, TrafficSpec};
use crate::topology::{build_topology, parse_edge_list, RandomGraphSpec, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologySpec {
    Complete { m: usize },
    Ring { m: usize },
    Path { m: usize },
    Edges { m: usize, edges: Vec<(usize, usize)> },
    /// Edge-list text file, relative to the config file.
    EdgeFile { m: usize, path: PathBuf },
    Random(RandomGraphSpec),
}

impl TopologySpec {
    pub fn build(&self, base_dir: &Path) -> Result<Topology> {
        match self {
            TopologySpec::Complete { m } => Topology::complete(*m),
            TopologySpec::Ring { m } => Topology::ring(*m),
            TopologySpec::Path { m } => Topology::path(*m),
            TopologySpec::Edges { m, edges } => build_topology(*m, edges),
            TopologySpec::EdgeFile { m, path } => {
                let text = std::fs::read_to_string(base_dir.join(path))
                    .map_err(|e| FirlError::Config(format!("cannot read edge file {}: {e}", path.display())))?;
                build_topology(*m, &parse_edge_list(&text)?)
            }
            TopologySpec::Random(spec) => spec.generate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Synthetic(SyntheticSpec),
    RingTraffic(TrafficSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Output directory, relative to the working directory.
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_metrics")]
    pub metrics: String,
    #[serde(default = "default_summary")]
    pub summary: String,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_metrics() -> String {
    "metrics.csv".into()
}
fn default_summary() -> String {
    "summary.json".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: default_out_dir(), metrics: default_metrics(), summary: default_summary() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Row label in comparison tables.
    #[serde(default)]
    pub label: Option<String>,
    pub protocol: FedConfig,
    #[serde(default)]
    pub topology: Option<TopologySpec>,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub cost_model: CostModel,
    /// Samples kept for the probe set when the problem has no canonical one.
    #[serde(default = "default_probe_size")]
    pub probe_size: usize,
    /// Mini-batches per point when estimating noise constants.
    #[serde(default = "default_estimator_repeats")]
    pub estimator_repeats: usize,
    /// Overrides the initial suboptimality used by the bound.
    #[serde(default)]
    pub f_gap: Option<f64>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_probe_size() -> usize {
    4096
}
fn default_estimator_repeats() -> usize {
    16
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| FirlError::Config(format!("invalid run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FirlError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| {
            let p = &self.protocol;
            let mut s = format!("tau={}", p.tau_policy.label(p.tau));
            if p.consensus.rounds > 0 {
                s.push_str(&format!(" E={}", p.consensus.rounds));
            }
            s
        })
    }

    /// Builds the topology and checks every cross-module invariant before
    /// anything runs.
    pub fn validate(&self, base_dir: &Path) -> Result<Option<Topology>> {
        self.cost_model.validate()?;
        if self.probe_size == 0 || self.estimator_repeats == 0 {
            return Err(FirlError::Config("probe_size and estimator_repeats must be positive".into()));
        }
        if let Some(g) = self.f_gap {
            if !(g.is_finite() && g >= 0.0) {
                return Err(FirlError::Config(format!("f_gap must be finite and nonnegative, got {g}")));
            }
        }
        let topology = self.topology.as_ref().map(|t| t.build(base_dir)).transpose()?;
        self.protocol.validate(topology.as_ref())?;
        let agents = match &self.problem {
            ProblemSpec::Synthetic(s) => {
                s.validate()?;
                self.protocol.n_total
            }
            ProblemSpec::RingTraffic(t) => {
                t.validate()?;
                t.env.n_controlled
            }
        };
        if agents != self.protocol.n_total {
            return Err(FirlError::Config(format!(
                "problem has {agents} agents, protocol has {}",
                self.protocol.n_total
            )));
        }
        Ok(topology)
    }
}
