//! Command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input, 3 failure during a run. Errors
//! are reported as one line on stderr: `error: <validation|runtime>: <reason>`.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::bound::{check_lr_condition, max_feasible_eta, theorem1_bound, BoundInputs};
use crate::error::{FirlError, Result};
use crate::report::{load_table, render_csv, render_json};
use crate::runner::execute;
use crate::topology::RandomGraphSpec;

#[derive(Debug, Parser)]
#[command(name = "firl", version, about = "Federated RL simulator with gradient gossip and cost accounting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration and write metrics, summary and manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the protocol seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a comparison table from saved run summaries.
    Table {
        /// Pattern matching summary files or run directories.
        #[arg(long)]
        glob: String,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Evaluate the convergence bound and learning-rate condition. Every
    /// numeric flag accepts a comma-separated list; one row is printed per
    /// combination.
    Bound {
        #[arg(long)]
        eta: String,
        #[arg(long = "L")]
        lipschitz: String,
        #[arg(long)]
        sigma2: String,
        #[arg(long)]
        m: String,
        #[arg(long)]
        tau: String,
        #[arg(long = "K")]
        iterations: String,
        #[arg(long, default_value = "0")]
        epsilon: String,
        #[arg(long, default_value = "0")]
        mu2: String,
        #[arg(long = "E", default_value = "0")]
        rounds: String,
        #[arg(long, default_value = "0")]
        beta: String,
        /// Initial suboptimality `F(theta_0) - F_inf`.
        #[arg(long = "f-gap", default_value = "1")]
        f_gap: String,
    },
    /// Generate a random topology and print it as an edge list.
    Topology {
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 3)]
        min_degree: usize,
        #[arg(long, default_value_t = 4)]
        max_degree: usize,
        #[arg(long)]
        edges: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Output of a successful command.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Output {
    pub stdout: String,
    pub stderr: String,
}

pub fn exit_code(err: &FirlError) -> i32 {
    if err.is_validation() {
        2
    } else {
        3
    }
}

pub fn error_line(err: &FirlError) -> String {
    let kind = if err.is_validation() { "validation" } else { "runtime" };
    format!("error: {kind}: {}", err.to_string().replace('\n', " "))
}

pub fn dispatch(cli: Cli) -> Result<Output> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let o = execute(&config, seed, out.as_deref())?;
            let mut stderr = String::new();
            for w in &o.summary.warnings {
                let _ = writeln!(stderr, "warning: {w}");
            }
            Ok(Output {
                stdout: format!("wrote {} records to {}\n", o.metrics_rows, o.out_dir.display()),
                stderr,
            })
        }
        Command::Table { glob, format } => {
            let table = load_table(&glob)?;
            let mut stderr = String::new();
            for (path, reason) in &table.missing {
                let _ = writeln!(stderr, "skipped {}: {reason}", path.display());
            }
            let stdout = match format {
                Format::Csv => render_csv(&table.rows),
                Format::Json => render_json(&table.rows),
            };
            Ok(Output { stdout, stderr })
        }
        Command::Bound { eta, lipschitz, sigma2, m, tau, iterations, epsilon, mu2, rounds, beta, f_gap } => {
            let grid = BoundGrid {
                eta: parse_list(&eta, "eta")?,
                lipschitz: parse_list(&lipschitz, "L")?,
                sigma_sq: parse_list(&sigma2, "sigma2")?,
                m: parse_list(&m, "m")?,
                tau: parse_list(&tau, "tau")?,
                iterations: parse_list(&iterations, "K")?,
                epsilon: parse_list(&epsilon, "epsilon")?,
                mu2: parse_list(&mu2, "mu2")?,
                rounds: parse_list(&rounds, "E")?,
                beta: parse_list(&beta, "beta")?,
                f_gap: parse_list(&f_gap, "f-gap")?,
            };
            Ok(Output { stdout: bound_table(&grid)?, stderr: String::new() })
        }
        Command::Topology { m, min_degree, max_degree, edges, seed } => {
            let spec = RandomGraphSpec { m, seed, degree_range: (min_degree, max_degree), n_edges: edges };
            let t = spec.generate()?;
            let s = t.spectral()?;
            let header = format!(
                "# m={m} edges={} degree_sum={} mu2={} delta={}\n",
                t.edges().len(),
                t.degree_sum(),
                s.mu2,
                s.delta
            );
            Ok(Output { stdout: header + &t.to_edge_list(), stderr: String::new() })
        }
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, name: &str) -> Result<Vec<T>> {
    let values: std::result::Result<Vec<T>, _> = text.split(',').map(|s| s.trim().parse::<T>()).collect();
    match values {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(FirlError::Config(format!("--{name}: expected a comma-separated list of numbers, got '{text}'"))),
    }
}

struct BoundGrid {
    eta: Vec<f64>,
    lipschitz: Vec<f64>,
    sigma_sq: Vec<f64>,
    m: Vec<usize>,
    tau: Vec<usize>,
    iterations: Vec<u64>,
    epsilon: Vec<f64>,
    mu2: Vec<f64>,
    rounds: Vec<u32>,
    beta: Vec<f64>,
    f_gap: Vec<f64>,
}

impl BoundGrid {
    /// Cartesian product, last flag varying fastest.
    fn points(&self) -> Vec<BoundInputs> {
        let sizes = [
            self.eta.len(),
            self.lipschitz.len(),
            self.sigma_sq.len(),
            self.m.len(),
            self.tau.len(),
            self.iterations.len(),
            self.epsilon.len(),
            self.mu2.len(),
            self.rounds.len(),
            self.beta.len(),
            self.f_gap.len(),
        ];
        let total: usize = sizes.iter().product();
        (0..total)
            .map(|mut flat| {
                let mut idx = [0usize; 11];
                for d in (0..11).rev() {
                    idx[d] = flat % sizes[d];
                    flat /= sizes[d];
                }
                BoundInputs {
                    eta: self.eta[idx[0]],
                    lipschitz: self.lipschitz[idx[1]],
                    sigma_sq: self.sigma_sq[idx[2]],
                    m: self.m[idx[3]],
                    tau: self.tau[idx[4]],
                    iterations: self.iterations[idx[5]],
                    epsilon: self.epsilon[idx[6]],
                    mu2: self.mu2[idx[7]],
                    rounds: self.rounds[idx[8]],
                    beta: self.beta[idx[9]],
                    f_gap: self.f_gap[idx[10]],
                }
            })
            .collect()
    }
}

pub const BOUND_HEADER: &str =
    "eta,L,sigma2,m,tau,K,epsilon,mu2,E,beta,f_gap,lr_lhs,lr_satisfied,max_eta,term1,term2,term3,bound";

/// One CSV row per grid point. A point the bound rejects fails the whole
/// command, naming the learning-rate check for that point.
fn bound_table(grid: &BoundGrid) -> Result<String> {
    let mut out = String::from(BOUND_HEADER);
    out.push('\n');
    for p in grid.points() {
        let lr = check_lr_condition(p.eta, p.lipschitz, p.beta, p.m, p.tau);
        let report = theorem1_bound(&p).map_err(|e| {
            FirlError::Config(format!(
                "{e} (eta={}: learning-rate condition {}, lhs={})",
                p.eta,
                if lr.satisfied { "satisfied" } else { "violated" },
                lr.lhs
            ))
        })?;
        let max_eta = max_feasible_eta(p.lipschitz, p.beta, p.m, p.tau)
            .map(|v| v.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.eta,
            p.lipschitz,
            p.sigma_sq,
            p.m,
            p.tau,
            p.iterations,
            p.epsilon,
            p.mu2,
            p.rounds,
            p.beta,
            p.f_gap,
            lr.lhs,
            lr.satisfied,
            max_eta,
            report.terms[0],
            report.terms[1],
            report.terms[2],
            report.value
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bound_cli(eta: &str, extra: &[&str]) -> Result<Output> {
        let mut args = vec!["firl", "bound", "--eta", eta, "--L", "2", "--sigma2", "4", "--m", "7", "--tau", "10"];
        args.extend_from_slice(&["--K", "3000", "--epsilon", "0.15", "--mu2", "1.5", "--beta", "0.5"]);
        args.extend_from_slice(extra);
        dispatch(Cli::try_parse_from(args).unwrap())
    }

    fn column(out: &str, name: &str) -> Vec<f64> {
        let idx = BOUND_HEADER.split(',').position(|c| c == name).unwrap();
        out.lines().skip(1).map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
    }

    #[test]
    fn gossip_sweep_decreases_bound() {
        let out = bound_cli("0.01", &["--E", "0,1,2,3,4,5"]).unwrap().stdout;
        let b = column(&out, "bound");
        assert_eq!(b.len(), 6);
        assert!(b.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn tau_sweep_third_term_grows() {
        let taus: Vec<String> = (1..=15).map(|t| t.to_string()).collect();
        // K = 360360 is divisible by every tau up to 15
        let mut args = vec!["firl", "bound", "--eta", "0.001", "--L", "2", "--sigma2", "4", "--m", "7"];
        let joined = taus.join(",");
        args.extend_from_slice(&["--tau", &joined, "--K", "360360", "--beta", "0.5"]);
        let out = dispatch(Cli::try_parse_from(args).unwrap()).unwrap().stdout;
        let t3 = column(&out, "term3");
        assert!(t3.windows(2).all(|w| w[1] >= w[0]));
        assert!(column(&out, "lr_lhs").iter().all(|l| *l <= 0.0));
    }

    #[test]
    fn zero_eta_is_feasible_but_rejected() {
        let err = bound_cli("0", &[]).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        let line = error_line(&err);
        assert!(line.contains("division by zero") && line.contains("condition satisfied"), "{line}");
    }

    #[test]
    fn bad_list_rejected() {
        assert!(bound_cli("0.01", &["--E", "1,x"]).is_err());
    }
}
