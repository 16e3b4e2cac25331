//! Agent interaction graphs and their Laplacian spectra.
//!
//! A [`Topology`] is an undirected, simple, connected graph over the agents.
//! Connectivity is checked at construction, so holding a `Topology` means the
//! consensus step has a well-defined limit.
//!
//! Note on degree: [`SpectralInfo::delta`] is `max_i |neighbors(i)| + 1`,
//! one more than the usual maximum degree. The gossip step size must lie in
//! `(0, 1 / delta)`.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{FirlError, Result};
use crate::linalg::{symmetric_eigenvalues, SquareMatrix, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n_agents: usize,
    /// Normalized `(low, high)` pairs, sorted.
    edges: Vec<(usize, usize)>,
    /// Sorted neighbor ids per agent.
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, agent: usize) -> &[usize] {
        &self.neighbors[agent]
    }

    pub fn degree(&self, agent: usize) -> usize {
        self.neighbors[agent].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn degree_sum(&self) -> usize {
        2 * self.edges.len()
    }

    /// `max_i |neighbors(i)| + 1`.
    pub fn delta(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0) + 1
    }

    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.n_agents * (self.n_agents - 1) / 2
    }

    pub fn contains_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    /// Integer Laplacian `D - A`; row sums are exactly zero.
    pub fn laplacian_int(&self) -> Vec<Vec<i64>> {
        laplacian_int(self.n_agents, &self.edges)
    }

    pub fn laplacian(&self) -> SquareMatrix {
        to_matrix(&self.laplacian_int())
    }

    /// Full Laplacian spectrum.
    pub fn spectral(&self) -> Result<SpectralInfo> {
        let laplacian = self.laplacian();
        let eigenvalues = symmetric_eigenvalues(&laplacian, JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS)?;
        debug_assert!(eigenvalues[0].abs() < 1e-9);
        Ok(SpectralInfo {
            mu2: eigenvalues[1],
            mu_max: *eigenvalues.last().unwrap(),
            delta: self.delta(),
            eigenvalues,
            laplacian,
        })
    }

    /// Relabels agents: new id of agent `i` is `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Topology> {
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        build_topology(self.n_agents, &edges)
    }

    /// One `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    pub fn complete(m: usize) -> Result<Topology> {
        let mut edges = Vec::new();
        for a in 0..m {
            for b in (a + 1)..m {
                edges.push((a, b));
            }
        }
        build_topology(m, &edges)
    }

    pub fn ring(m: usize) -> Result<Topology> {
        if m < 3 {
            return Topology::path(m);
        }
        let edges: Vec<_> = (0..m).map(|i| (i, (i + 1) % m)).collect();
        build_topology(m, &edges)
    }

    pub fn path(m: usize) -> Result<Topology> {
        let edges: Vec<_> = (0..m.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        build_topology(m, &edges)
    }
}

/// Validates and builds a topology.
pub fn build_topology(m: usize, edges: &[(usize, usize)]) -> Result<Topology> {
    if m < 2 {
        return Err(FirlError::Config(format!("topology needs at least 2 agents, got {m}")));
    }
    let mut norm = Vec::with_capacity(edges.len());
    for &(a, b) in edges {
        if a >= m || b >= m {
            return Err(FirlError::InvalidEdge(a, b, "endpoint out of range"));
        }
        if a == b {
            return Err(FirlError::InvalidEdge(a, b, "self-loop"));
        }
        norm.push((a.min(b), a.max(b)));
    }
    norm.sort_unstable();
    if let Some(w) = norm.windows(2).find(|w| w[0] == w[1]) {
        return Err(FirlError::InvalidEdge(w[0].0, w[0].1, "duplicate edge"));
    }
    let mut neighbors = vec![Vec::new(); m];
    for &(a, b) in &norm {
        neighbors[a].push(b);
        neighbors[b].push(a);
    }
    neighbors.iter_mut().for_each(|n| n.sort_unstable());
    let components = count_components(&neighbors);
    if components != 1 {
        return Err(FirlError::Disconnected { components });
    }
    Ok(Topology { n_agents: m, edges: norm, neighbors })
}

fn count_components(neighbors: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; neighbors.len()];
    let mut components = 0;
    for start in 0..neighbors.len() {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &w in &neighbors[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    components
}

fn laplacian_int(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<i64>> {
    let mut l = vec![vec![0i64; n]; n];
    for &(a, b) in edges {
        l[a][b] -= 1;
        l[b][a] -= 1;
        l[a][a] += 1;
        l[b][b] += 1;
    }
    l
}

fn to_matrix(l: &[Vec<i64>]) -> SquareMatrix {
    let rows: Vec<Vec<f64>> = l.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    SquareMatrix::from_rows(&rows)
}

/// Laplacian eigenvalues of an arbitrary simple graph, connected or not.
/// Bypasses the connectivity gate of [`build_topology`].
pub fn laplacian_spectrum(n: usize, edges: &[(usize, usize)]) -> Result<Vec<f64>> {
    symmetric_eigenvalues(&to_matrix(&laplacian_int(n, edges)), JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralInfo {
    pub laplacian: SquareMatrix,
    /// Ascending; the first is zero up to round-off.
    pub eigenvalues: Vec<f64>,
    /// Algebraic connectivity.
    pub mu2: f64,
    pub mu_max: f64,
    pub delta: usize,
}

impl SpectralInfo {
    /// Worst per-round contraction `max |1 - eps * mu|` over nonzero eigenvalues.
    pub fn contraction_factor(&self, epsilon: f64) -> f64 {
        self.eigenvalues[1..]
            .iter()
            .map(|mu| (1.0 - epsilon * mu).abs())
            .fold(0.0, f64::max)
    }
}

/// Admissible gossip step sizes, the open interval `(0, upper)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonRange {
    pub upper: f64,
}

impl EpsilonRange {
    pub fn contains(&self, epsilon: f64) -> bool {
        epsilon > 0.0 && epsilon < self.upper
    }

    pub fn validate(&self, epsilon: f64) -> Result<f64> {
        if self.contains(epsilon) {
            Ok(epsilon)
        } else {
            Err(FirlError::EpsilonOutOfRange { epsilon, upper: self.upper })
        }
    }
}

pub fn epsilon_bound(spectral: &SpectralInfo) -> EpsilonRange {
    EpsilonRange { upper: 1.0 / spectral.delta as f64 }
}

/// Seeded random graph generator.
///
/// Each attempt shuffles all agent pairs and greedily accepts a pair while
/// both endpoints are below the maximum degree (and the edge budget, if
/// any, is not exhausted). The attempt is kept if every degree is at least
/// the minimum and the graph is connected; otherwise a new shuffle is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomGraphSpec {
    pub m: usize,
    pub seed: u64,
    pub degree_range: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_edges: Option<usize>,
}

pub const MAX_GENERATOR_ATTEMPTS: usize = 10_000;

impl RandomGraphSpec {
    pub fn generate(&self) -> Result<Topology> {
        let (lo, hi) = self.degree_range;
        let m = self.m;
        if m < 2 || lo > hi || hi == 0 || hi >= m {
            return Err(FirlError::Config(format!(
                "infeasible random graph: m={m}, degree range [{lo}, {hi}]"
            )));
        }
        if let Some(e) = self.n_edges {
            if 2 * e < m * lo || 2 * e > m * hi || e < m - 1 {
                return Err(FirlError::Config(format!(
                    "infeasible random graph: {e} edges with m={m}, degree range [{lo}, {hi}]"
                )));
            }
        }
        let mut rng = rng::stream(self.seed, &[0x70b0]);
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(m * (m - 1) / 2);
        for a in 0..m {
            for b in (a + 1)..m {
                pairs.push((a, b));
            }
        }
        for _ in 0..MAX_GENERATOR_ATTEMPTS {
            pairs.shuffle(&mut rng);
            let mut deg = vec![0usize; m];
            let mut chosen = Vec::new();
            for &(a, b) in &pairs {
                if self.n_edges.is_some_and(|e| chosen.len() == e) {
                    break;
                }
                if deg[a] < hi && deg[b] < hi {
                    deg[a] += 1;
                    deg[b] += 1;
                    chosen.push((a, b));
                }
            }
            if self.n_edges.is_some_and(|e| chosen.len() != e) || deg.iter().any(|&d| d < lo) {
                continue;
            }
            if let Ok(t) = build_topology(m, &chosen) {
                return Ok(t);
            }
        }
        Err(FirlError::Config(format!(
            "no connected graph found in {MAX_GENERATOR_ATTEMPTS} attempts for m={m}, degree range [{lo}, {hi}]"
        )))
    }
}

/// Parses `i j` lines; blank lines and `#` comments are ignored.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<usize> {
            tok.and_then(|t| t.parse().ok())
                .ok_or_else(|| FirlError::Config(format!("edge list line {}: expected `i j`", lineno + 1)))
        };
        let a = parse(it.next())?;
        let b = parse(it.next())?;
        if it.next().is_some() {
            return Err(FirlError::Config(format!("edge list line {}: trailing tokens", lineno + 1)));
        }
        edges.push((a, b));
    }
    Ok(edges)
}
