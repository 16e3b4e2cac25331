//! Smooth nonconvex finite-sum objective with known constants.
//!
//! Component `j` is `f_j(x) = 1/2 |A_j x - b_j|^2 + c * sum_l sin^2(x_l)`.
//! Components are generated in per-agent shards: every agent has its own
//! diagonal scaling and target center, so local objectives disagree and
//! local steps drift apart the way heterogeneous clients do.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FirlError, Result};
use crate::fed::{IterationContext, Problem};
use crate::linalg::{solve, symmetric_eigenvalues, SquareMatrix, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE};
use crate::params::{minibatch_grad, GradOracle, MiniBatch, OracleConstants, ParamVec};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub agents: usize,
    pub components_per_agent: usize,
    /// Spread of agent-specific scalings and centers; 0 makes shards iid.
    #[serde(default = "default_heterogeneity")]
    pub heterogeneity: f64,
    /// Per-component perturbation of the design matrices.
    #[serde(default = "default_design_noise")]
    pub design_noise: f64,
    /// Per-component target noise.
    #[serde(default = "default_target_noise")]
    pub target_noise: f64,
    /// Weight `c` of the sin^2 term.
    #[serde(default = "default_nonconvex")]
    pub nonconvex: f64,
    /// Samples per local mini-batch.
    pub batch_size: usize,
    /// Distance of the common starting point from the origin.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    pub seed: u64,
}

fn default_heterogeneity() -> f64 {
    1.0
}
fn default_design_noise() -> f64 {
    0.3
}
fn default_target_noise() -> f64 {
    0.5
}
fn default_nonconvex() -> f64 {
    0.1
}
fn default_init_scale() -> f64 {
    3.0
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.agents == 0 || self.components_per_agent == 0 || self.batch_size == 0 {
            return Err(FirlError::Config("synthetic problem sizes must be positive".into()));
        }
        for (name, v) in [
            ("heterogeneity", self.heterogeneity),
            ("design_noise", self.design_noise),
            ("target_noise", self.target_noise),
            ("nonconvex", self.nonconvex),
            ("init_scale", self.init_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(FirlError::Config(format!("{name} must be finite and nonnegative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Component {
    /// Row-major `dim x dim`.
    a: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    spec: SyntheticSpec,
    components: Vec<Component>,
    lipschitz: f64,
    f_inf: f64,
    sigma_sq: f64,
    beta: f64,
    /// Minimizer of the quadratic part, where the noise constant is taken.
    reference: ParamVec,
}

impl SyntheticProblem {
    pub fn generate(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        let h = spec.heterogeneity;
        let mut components = Vec::with_capacity(spec.agents * spec.components_per_agent);
        for agent in 0..spec.agents {
            let mut rng = rng::stream(spec.seed, &[0x5e7, agent as u64]);
            let scale: Vec<f64> = (0..d).map(|_| 1.0 + h * rng.random_range(-0.5..0.5)).collect();
            let center: Vec<f64> = (0..d).map(|_| h * gauss(&mut rng)).collect();
            for _ in 0..spec.components_per_agent {
                let mut a = vec![0.0; d * d];
                for r in 0..d {
                    for c in 0..d {
                        let diag = if r == c { scale[r] } else { 0.0 };
                        a[r * d + c] = diag + spec.design_noise * gauss(&mut rng) / (d as f64).sqrt();
                    }
                }
                let b: Vec<f64> = (0..d)
                    .map(|r| {
                        let ac: f64 = (0..d).map(|c| a[r * d + c] * center[c]).sum();
                        ac + spec.target_noise * gauss(&mut rng)
                    })
                    .collect();
                components.push(Component { a, b });
            }
        }
        Self::from_components(spec, components)
    }

    /// Problem with identity designs `A_j = I` and the given targets.
    pub fn with_identity_design(spec: SyntheticSpec, targets: Vec<Vec<f64>>) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        if targets.len() != spec.agents * spec.components_per_agent || targets.iter().any(|t| t.len() != d) {
            return Err(FirlError::Config("target count or dimension mismatch".into()));
        }
        let eye: Vec<f64> = (0..d * d).map(|i| if i / d == i % d { 1.0 } else { 0.0 }).collect();
        let components = targets.into_iter().map(|b| Component { a: eye.clone(), b }).collect();
        Self::from_components(spec, components)
    }

    fn from_components(spec: SyntheticSpec, components: Vec<Component>) -> Result<Self> {
        let d = spec.dim;
        let mut lipschitz: f64 = 0.0;
        for comp in &components {
            let eig = symmetric_eigenvalues(&gram(&comp.a, d), JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS)?;
            lipschitz = lipschitz.max(*eig.last().unwrap());
        }
        lipschitz += 2.0 * spec.nonconvex;
        let mut p = SyntheticProblem {
            spec,
            components,
            lipschitz,
            f_inf: 0.0,
            sigma_sq: 0.0,
            beta: 0.0,
            reference: ParamVec::zeros(d),
        };
        let (x_star, q_min) = p.quadratic_minimizer()?;
        p.f_inf = q_min.max(0.0);
        let b = p.spec.batch_size as f64;
        p.sigma_sq = p.single_sample_variance(&x_star) / b;
        p.beta = p.fit_beta(&x_star);
        p.reference = x_star;
        Ok(p)
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    /// Point at which the reported noise constant was measured.
    pub fn reference_point(&self) -> &ParamVec {
        &self.reference
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Lower bound on `F`: the minimum of the quadratic part.
    pub fn f_inf(&self) -> f64 {
        self.f_inf
    }

    /// Component index range owned by an agent.
    pub fn shard(&self, agent: usize) -> std::ops::Range<usize> {
        let n = self.spec.components_per_agent;
        let agent = agent % self.spec.agents;
        agent * n..(agent + 1) * n
    }

    pub fn initial_params(&self) -> ParamVec {
        let mut rng = rng::stream(self.spec.seed, &[0x1417]);
        let raw: Vec<f64> = (0..self.spec.dim).map(|_| gauss(&mut rng)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        ParamVec::from(raw.into_iter().map(|v| v / norm * self.spec.init_scale).collect::<Vec<_>>())
    }

    pub fn full_batch(&self) -> MiniBatch<usize> {
        MiniBatch::new((0..self.components.len()).collect()).expect("non-empty")
    }

    /// `size` indices drawn uniformly with replacement from all components.
    pub fn sample_batch<R: Rng>(&self, rng: &mut R, size: usize) -> Result<MiniBatch<usize>> {
        MiniBatch::new((0..size).map(|_| rng.random_range(0..self.components.len())).collect())
    }

    /// `size` indices drawn uniformly with replacement from an agent's shard.
    pub fn agent_batch<R: Rng>(&self, rng: &mut R, agent: usize, size: usize) -> Result<MiniBatch<usize>> {
        let shard = self.shard(agent);
        MiniBatch::new((0..size).map(|_| rng.random_range(shard.clone())).collect())
    }

    pub fn full_gradient(&self, theta: &ParamVec) -> Result<ParamVec> {
        minibatch_grad(self, theta, &self.full_batch())
    }

    pub fn objective(&self, theta: &ParamVec) -> f64 {
        crate::params::minibatch_loss(self, theta, &self.full_batch())
    }

    /// Exact `E_j |grad f_j(x) - grad F(x)|^2` for a uniformly drawn component.
    pub fn single_sample_variance(&self, theta: &ParamVec) -> f64 {
        let full = match self.full_gradient(theta) {
            Ok(g) => g,
            Err(_) => return f64::NAN,
        };
        let total: f64 = (0..self.components.len())
            .map(|j| self.sample_grad(theta, &j).dist_sq(&full).unwrap_or(f64::NAN))
            .sum();
        total / self.components.len() as f64
    }

    fn quadratic_minimizer(&self) -> Result<(ParamVec, f64)> {
        let d = self.spec.dim;
        let n = self.components.len() as f64;
        let mut h = SquareMatrix::zeros(d);
        let mut q = vec![0.0; d];
        for comp in &self.components {
            let g = gram(&comp.a, d);
            for r in 0..d {
                for c in 0..d {
                    h.set(r, c, h.get(r, c) + g.get(r, c) / n);
                }
                let atb: f64 = (0..d).map(|k| comp.a[k * d + r] * comp.b[k]).sum();
                q[r] += atb / n;
            }
        }
        let x = ParamVec::from(solve(&h, &q)?);
        let value = self
            .components
            .iter()
            .map(|comp| 0.5 * residual(comp, x.as_slice(), d).iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / n;
        Ok((x, value))
    }

    /// Smallest beta with `V(x)/b <= beta |grad F(x)|^2 + sigma^2` over a
    /// fixed seeded set of points around `center`.
    fn fit_beta(&self, center: &ParamVec) -> f64 {
        let mut rng = rng::stream(self.spec.seed, &[0xbe7a]);
        let b = self.spec.batch_size as f64;
        let mut beta: f64 = 0.0;
        for _ in 0..32 {
            let x: Vec<f64> = center
                .as_slice()
                .iter()
                .map(|c| c + self.spec.init_scale * gauss(&mut rng))
                .collect();
            let x = ParamVec::from(x);
            let g = match self.full_gradient(&x) {
                Ok(g) => g.norm_sq(),
                Err(_) => continue,
            };
            let excess = self.single_sample_variance(&x) / b - self.sigma_sq;
            if g > 1e-12 && excess > 0.0 {
                beta = beta.max(excess / g);
            }
        }
        beta
    }
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `A^T A` for row-major `A`.
fn gram(a: &[f64], d: usize) -> SquareMatrix {
    let mut g = SquareMatrix::zeros(d);
    for r in 0..d {
        for c in 0..d {
            let v: f64 = (0..d).map(|k| a[k * d + r] * a[k * d + c]).sum();
            g.set(r, c, v);
        }
    }
    g
}

fn residual(comp: &Component, x: &[f64], d: usize) -> Vec<f64> {
    (0..d)
        .map(|r| (0..d).map(|c| comp.a[r * d + c] * x[c]).sum::<f64>() - comp.b[r])
        .collect()
}

impl GradOracle for SyntheticProblem {
    type Sample = usize;

    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn loss(&self, theta: &ParamVec, sample: &usize) -> f64 {
        let comp = &self.components[*sample];
        let x = theta.as_slice();
        let quad = 0.5 * residual(comp, x, self.spec.dim).iter().map(|v| v * v).sum::<f64>();
        let wave: f64 = x.iter().map(|v| v.sin().powi(2)).sum();
        quad + self.spec.nonconvex * wave
    }

    fn sample_grad(&self, theta: &ParamVec, sample: &usize) -> ParamVec {
        let d = self.spec.dim;
        let comp = &self.components[*sample];
        let x = theta.as_slice();
        let res = residual(comp, x, d);
        let g: Vec<f64> = (0..d)
            .map(|c| {
                let atr: f64 = (0..d).map(|r| comp.a[r * d + c] * res[r]).sum();
                atr + self.spec.nonconvex * (2.0 * x[c]).sin()
            })
            .collect();
        ParamVec::from(g)
    }

    fn constants(&self) -> Option<OracleConstants> {
        Some(OracleConstants { lipschitz: self.lipschitz, beta: self.beta, sigma_sq: self.sigma_sq })
    }
}

/// The synthetic problem split across agents: agent `i` draws its
/// mini-batches from shard `i mod agents`. `seed` drives the sampling only;
/// the objective itself is fixed by the problem's own seed.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    problem: SyntheticProblem,
    n_agents: usize,
    seed: u64,
}

impl SyntheticTask {
    pub fn new(problem: SyntheticProblem, n_agents: usize, seed: u64) -> Self {
        SyntheticTask { problem, n_agents, seed }
    }

    pub fn problem(&self) -> &SyntheticProblem {
        &self.problem
    }
}

impl Problem for SyntheticTask {
    type Oracle = SyntheticProblem;

    fn oracle(&self) -> &SyntheticProblem {
        &self.problem
    }

    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn initial_params(&self) -> ParamVec {
        self.problem.initial_params()
    }

    fn local_batches(
        &mut self,
        ctx: &IterationContext,
        _thetas: &[ParamVec],
        active: &[bool],
    ) -> Result<Vec<Option<MiniBatch<usize>>>> {
        let seed = self.seed;
        let size = self.problem.spec.batch_size;
        active
            .iter()
            .enumerate()
            .map(|(i, &on)| {
                if !on {
                    return Ok(None);
                }
                let mut rng = rng::stream(seed, &[0xba7c, i as u64, ctx.k]);
                self.problem.agent_batch(&mut rng, i, size).map(Some)
            })
            .collect()
    }

    fn canonical_probe(&self) -> Option<MiniBatch<usize>> {
        Some(self.problem.full_batch())
    }

    fn f_inf(&self) -> Option<f64> {
        Some(self.problem.f_inf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    pub(crate) fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            dim: 4,
            agents: 3,
            components_per_agent: 8,
            heterogeneity: 1.0,
            design_noise: 0.3,
            target_noise: 0.5,
            nonconvex: 0.1,
            batch_size: 2,
            init_scale: 3.0,
            seed: 17,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = SyntheticProblem::generate(small_spec()).unwrap();
        let b = SyntheticProblem::generate(small_spec()).unwrap();
        assert_eq!(a.components, b.components);
        assert_eq!(a.initial_params(), b.initial_params());
        assert_eq!(a.n_components(), 24);
    }

    #[test]
    fn identity_quadratic_has_unit_lipschitz() {
        let spec = SyntheticSpec { dim: 2, agents: 1, components_per_agent: 2, nonconvex: 0.0, ..small_spec() };
        let p = SyntheticProblem::with_identity_design(spec, vec![vec![1.0, 0.0], vec![3.0, 2.0]]).unwrap();
        assert!((p.lipschitz() - 1.0).abs() < 1e-12);
        // F = mean of 1/2|x - b_j|^2, gradient x - mean(b)
        let g = p.full_gradient(&ParamVec::from(vec![0.0, 0.0])).unwrap();
        assert_eq!(g.as_slice(), &[-2.0, -1.0]);
        assert!(p.f_inf() > 0.0);
    }

    #[test]
    fn full_batch_has_no_noise() {
        let p = SyntheticProblem::generate(small_spec()).unwrap();
        let theta = p.initial_params();
        let g1 = minibatch_grad(&p, &theta, &p.full_batch()).unwrap();
        assert_eq!(g1, p.full_gradient(&theta).unwrap());
    }

    #[test]
    fn objective_above_lower_bound() {
        let p = SyntheticProblem::generate(small_spec()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = ParamVec::from((0..4).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<_>>());
            assert!(p.objective(&x) >= p.f_inf() - 1e-12);
        }
        assert!(p.f_inf() >= 0.0);
    }

    #[test]
    fn shards_partition_components() {
        let p = SyntheticProblem::generate(small_spec()).unwrap();
        assert_eq!(p.shard(0), 0..8);
        assert_eq!(p.shard(2), 16..24);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let b = p.agent_batch(&mut rng, 1, 50).unwrap();
        assert!(b.samples().iter().all(|j| (8..16).contains(j)));
    }

    #[test]
    fn constants_reported() {
        let p = SyntheticProblem::generate(small_spec()).unwrap();
        let c = p.constants().unwrap();
        assert!(c.lipschitz > 0.0 && c.sigma_sq > 0.0 && c.beta >= 0.0);
    }
}
