//! Learning-rate feasibility and the expected-gradient-norm bound for
//! periodic averaging with gradient gossip.
//!
//! With smoothness `L`, variance constants `beta` and `sigma^2`, `m`
//! agents, period `tau` and `E` gossip rounds per iteration, the step size
//! must satisfy
//!
//! ```text
//! eta L (beta/m + 1) - 1 + 2 eta^2 L^2 tau beta + eta^2 L^2 tau (tau + 1) <= 0
//! ```
//!
//! and then the time-averaged squared gradient norm after `K` iterations is
//! at most
//!
//! ```text
//! 2 (F0 - Finf) / (eta K) + eta L sigma^2 / m + eta^2 sigma^2 L^2 (tau + 1) (1 - eps mu2)^(2E)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{FirlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrCheck {
    pub satisfied: bool,
    /// Left-hand side of the condition; feasible iff `<= 0`.
    pub lhs: f64,
}

pub fn lr_condition_lhs(eta: f64, lipschitz: f64, beta: f64, m: usize, tau: usize) -> f64 {
    let (m, tau) = (m as f64, tau as f64);
    let el = eta * lipschitz;
    el * (beta / m + 1.0) - 1.0 + 2.0 * el * el * tau * beta + el * el * tau * (tau + 1.0)
}

pub fn check_lr_condition(eta: f64, lipschitz: f64, beta: f64, m: usize, tau: usize) -> LrCheck {
    let lhs = lr_condition_lhs(eta, lipschitz, beta, m, tau);
    LrCheck { satisfied: lhs <= 0.0, lhs }
}

/// Largest feasible step size, found by bisection on the increasing
/// left-hand side. The returned value is on the feasible side.
pub fn max_feasible_eta(lipschitz: f64, beta: f64, m: usize, tau: usize) -> Result<f64> {
    if !(lipschitz > 0.0) || beta < 0.0 || m == 0 || tau == 0 {
        return Err(FirlError::Config("need L > 0, beta >= 0, m >= 1, tau >= 1".into()));
    }
    let f = |eta: f64| lr_condition_lhs(eta, lipschitz, beta, m, tau);
    let mut lo = 0.0;
    let mut hi = 1.0 / lipschitz;
    while f(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// `F(theta_0) - F_inf`.
    pub f_gap: f64,
    pub eta: f64,
    pub lipschitz: f64,
    pub sigma_sq: f64,
    pub beta: f64,
    pub m: usize,
    pub tau: usize,
    pub iterations: u64,
    pub epsilon: f64,
    pub mu2: f64,
    pub rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub value: f64,
    pub terms: [f64; 3],
    pub lr: LrCheck,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

pub fn theorem1_bound(inp: &BoundInputs) -> Result<BoundReport> {
    if inp.eta == 0.0 {
        return Err(FirlError::DivisionByZero("learning rate is zero"));
    }
    if inp.iterations == 0 {
        return Err(FirlError::DivisionByZero("iteration count is zero"));
    }
    if inp.m == 0 || inp.tau == 0 {
        return Err(FirlError::Config("m and tau must be positive".into()));
    }
    if inp.iterations % inp.tau as u64 != 0 {
        return Err(FirlError::Config(format!(
            "iteration count {} is not divisible by tau={}",
            inp.iterations, inp.tau
        )));
    }
    if inp.rounds > 0 && !(inp.epsilon > 0.0 && inp.epsilon * inp.mu2 < 1.0 && inp.mu2 > 0.0) {
        return Err(FirlError::EpsilonOutOfRange {
            epsilon: inp.epsilon,
            upper: if inp.mu2 > 0.0 { 1.0 / inp.mu2 } else { 0.0 },
        });
    }
    let eta = inp.eta;
    let l = inp.lipschitz;
    let first = 2.0 * inp.f_gap / (eta * inp.iterations as f64);
    let second = eta * l * inp.sigma_sq / inp.m as f64;
    let contraction = (1.0 - inp.epsilon * inp.mu2).powi(2 * inp.rounds as i32);
    let contraction = if inp.rounds == 0 { 1.0 } else { contraction };
    let third = eta * eta * inp.sigma_sq * l * l * (inp.tau as f64 + 1.0) * contraction;
    let lr = check_lr_condition(eta, l, inp.beta, inp.m, inp.tau);
    let warning = (!lr.satisfied).then(|| format!("learning-rate condition violated (lhs={:.6e})", lr.lhs));
    Ok(BoundReport { value: first + second + third, terms: [first, second, third], lr, warning })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> BoundInputs {
        BoundInputs {
            f_gap: 10.0,
            eta: 0.01,
            lipschitz: 2.0,
            sigma_sq: 4.0,
            beta: 0.5,
            m: 7,
            tau: 10,
            iterations: 3000,
            epsilon: 0.15,
            mu2: 1.5,
            rounds: 1,
        }
    }

    #[test]
    fn zero_eta_lhs() {
        assert_eq!(lr_condition_lhs(0.0, 3.0, 1.0, 4, 5), -1.0);
        assert!(check_lr_condition(0.0, 3.0, 1.0, 4, 5).satisfied);
    }

    #[test]
    fn quadratic_case_gives_half() {
        // 2 eta^2 + eta - 1 = (2 eta - 1)(eta + 1)
        let eta = max_feasible_eta(1.0, 0.0, 1, 1).unwrap();
        assert!((eta - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bisection_brackets_root() {
        for &(l, beta, m, tau) in &[(1.0, 0.0, 1, 1), (2.5, 0.3, 7, 10), (0.1, 4.0, 3, 15)] {
            let eta = max_feasible_eta(l, beta, m, tau).unwrap();
            let lhs = lr_condition_lhs(eta, l, beta, m, tau);
            assert!((-1e-10..=0.0).contains(&lhs), "lhs {lhs}");
            assert!(lr_condition_lhs(eta + 1e-8, l, beta, m, tau) > 0.0);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let mut b = base();
        b.eta = 0.0;
        assert!(matches!(theorem1_bound(&b), Err(FirlError::DivisionByZero(_))));
        let mut b = base();
        b.iterations = 0;
        assert!(matches!(theorem1_bound(&b), Err(FirlError::DivisionByZero(_))));
        let mut b = base();
        b.iterations = 3001;
        assert!(theorem1_bound(&b).is_err());
    }

    #[test]
    fn no_gossip_third_term() {
        let mut b = base();
        b.rounds = 0;
        b.mu2 = 123.0;
        let r = theorem1_bound(&b).unwrap();
        let expected = b.eta * b.eta * b.sigma_sq * b.lipschitz.powi(2) * (b.tau as f64 + 1.0);
        assert!((r.terms[2] - expected).abs() < 1e-15);
    }

    #[test]
    fn noiseless_bound_vanishes() {
        let mut b = base();
        b.sigma_sq = 0.0;
        b.iterations = 3_000_000_000;
        assert!(theorem1_bound(&b).unwrap().value < 1e-5);
    }

    #[test]
    fn infeasible_eta_warns() {
        let mut b = base();
        b.eta = 1.0;
        let r = theorem1_bound(&b).unwrap();
        assert!(!r.lr.satisfied && r.warning.is_some());
        assert!(theorem1_bound(&base()).unwrap().warning.is_none());
    }

    #[test]
    fn more_rounds_and_connectivity_help() {
        let mut prev = f64::INFINITY;
        for e in 0..6 {
            let mut b = base();
            b.rounds = e;
            let v = theorem1_bound(&b).unwrap().value;
            assert!(v < prev);
            prev = v;
        }
        let mut prev = f64::INFINITY;
        for mu2 in [0.5, 1.0, 2.0, 4.0, 6.0] {
            let mut b = base();
            b.mu2 = mu2;
            let v = theorem1_bound(&b).unwrap().value;
            assert!(v < prev);
            prev = v;
        }
    }
}
