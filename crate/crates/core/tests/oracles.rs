//! Hand-derived reference values checked against the library.

mod common;

use common::*;
use firl::bound::{check_lr_condition, max_feasible_eta, theorem1_bound, BoundInputs};
use firl::consensus::{gossip_round, GradSlot};
use firl::cost::{psi0_closed_form, psi3_closed_form, Schedule};
use firl::params::{GradOracle, ParamVec};
use firl::problems::policy::{PolicyLoss, SoftmaxPolicy, Transition};
use firl::problems::traffic::{RingParams, RingTrafficEnv};
use firl::rng;
use firl::topology::{build_topology, Topology};
use rand::Rng;

fn central_diff<O: GradOracle>(oracle: &O, theta: &ParamVec, s: &O::Sample, h: f64) -> Vec<f64> {
    (0..theta.dim())
        .map(|j| {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up.as_mut_slice()[j] += h;
            down.as_mut_slice()[j] -= h;
            (oracle.loss(&up, s) - oracle.loss(&down, s)) / (2.0 * h)
        })
        .collect()
}

fn rel_err(analytic: &ParamVec, numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.as_slice().iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = numeric.iter().map(|n| n * n).sum::<f64>().sqrt().max(1.0);
    diff / scale
}

#[test]
fn synthetic_gradients_match_finite_differences() {
    let p = synthetic_spec(4, 1.0);
    let problem = firl::problems::SyntheticProblem::generate(p).unwrap();
    let mut r = rng::stream(11, &[1]);
    for _ in 0..20 {
        let theta = ParamVec::from((0..10).map(|_| r.random_range(-3.0..3.0)).collect::<Vec<_>>());
        let j = r.random_range(0..problem.n_components());
        let g = problem.sample_grad(&theta, &j);
        assert!(rel_err(&g, &central_diff(&problem, &theta, &j, 1e-5)) < 1e-6);
    }
}

#[test]
fn policy_gradients_match_finite_differences() {
    let policy = SoftmaxPolicy::uniform_levels(6, 5).unwrap();
    let oracle = PolicyLoss { policy };
    let mut r = rng::stream(12, &[1]);
    for _ in 0..20 {
        let theta = ParamVec::from((0..30).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let obs: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
        let s = Transition {
            obs: obs.clone(),
            action: r.random_range(0..5),
            reward: 0.0,
            next_obs: obs,
            advantage: r.random_range(-3.0..3.0),
        };
        let g = oracle.sample_grad(&theta, &s);
        assert!(rel_err(&g, &central_diff(&oracle, &theta, &s, 1e-5)) < 1e-6);
    }
}

/// The full gradient is `L`-Lipschitz on random pairs.
#[test]
fn synthetic_full_gradient_is_smooth() {
    let problem = firl::problems::SyntheticProblem::generate(synthetic_spec(7, 2.0)).unwrap();
    let l = problem.lipschitz();
    let mut r = rng::stream(13, &[1]);
    for _ in 0..200 {
        let x = ParamVec::from((0..10).map(|_| r.random_range(-5.0..5.0)).collect::<Vec<_>>());
        let y = ParamVec::from((0..10).map(|_| r.random_range(-5.0..5.0)).collect::<Vec<_>>());
        let gx = problem.full_gradient(&x).unwrap();
        let gy = problem.full_gradient(&y).unwrap();
        assert!(gx.dist_sq(&gy).unwrap().sqrt() <= l * x.dist_sq(&y).unwrap().sqrt() * (1.0 + 1e-12));
    }
}

/// Softmax gradient of a single transition, written out by hand for two
/// actions and one feature.
#[test]
fn two_action_policy_gradient() {
    let oracle = PolicyLoss { policy: SoftmaxPolicy::uniform_levels(1, 2).unwrap() };
    let theta = ParamVec::from(vec![0.0, 2f64.ln()]);
    // pi = (1/3, 2/3)
    let s = Transition { obs: vec![1.0], action: 0, reward: 0.0, next_obs: vec![1.0], advantage: 3.0 };
    let g = oracle.sample_grad(&theta, &s);
    assert!((g.as_slice()[0] - -2.0).abs() < 1e-12);
    assert!((g.as_slice()[1] - 2.0).abs() < 1e-12);
}

/// One car braking behind a faster one on a 3-car ring; the gap is tracked
/// with plain kinematics.
#[test]
fn braking_collision_step_matches_kinematics() {
    let params = RingParams {
        n_vehicles: 3,
        n_controlled: 1,
        ring_length: 3.0,
        v_max: 0.1,
        a_max: 0.01,
        dt: 1.0,
        collision_headway: 0.05,
        brake_headway: 0.0,
        brake_decel: 0.01,
        target_headway: 1.0,
        kappa: 0.0,
        position_jitter: 0.0,
        max_steps: 1000,
    };
    let mut env = RingTrafficEnv::from_state(params, vec![0.3, 1.5, 0.0], vec![0.1; 3]).unwrap();
    assert_eq!(env.controlled(), &[0]);

    let (mut x_front, mut x_back, mut v_front) = (0.3f64, 0.0f64, 0.1f64);
    let mut expected = None;
    for step in 1..=20 {
        v_front = (v_front - 0.01).max(0.0);
        x_front += v_front;
        x_back += 0.1;
        if x_front - x_back <= 0.05 {
            expected = Some(step);
            break;
        }
    }
    let expected = expected.unwrap();
    assert_eq!(expected, 7);

    let mut done_at = None;
    for step in 1..=20 {
        let out = env.step(&[-1.0]).unwrap();
        if out.done {
            assert!(out.collided);
            done_at = Some(step);
            break;
        }
    }
    assert_eq!(done_at, Some(expected));
}

#[test]
fn environment_replays_from_seed() {
    let run = |seed| {
        let mut r = rng::stream(seed, &[0]);
        let mut env = RingTrafficEnv::new(RingParams::default(), &mut r).unwrap();
        let mut total = 0.0;
        for t in 0..200 {
            let a: Vec<f64> = (0..7).map(|i| ((t + i) % 5) as f64 / 2.0 - 1.0).collect();
            let out = env.step(&a).unwrap();
            total += out.rewards[0];
            if out.done {
                break;
            }
        }
        (env.positions().to_vec(), total)
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4), run(5));
}

#[test]
fn gossip_round_on_a_path() {
    // path 0-1-2, eps = 0.25
    let t = Topology::path(3).unwrap();
    let slots: Vec<GradSlot> =
        [4.0, 0.0, 8.0].iter().enumerate().map(|(i, v)| GradSlot::ready(i, ParamVec::from(vec![*v]))).collect();
    let out = gossip_round(&slots, &t, 0.25).unwrap();
    let v: Vec<f64> = out.iter().map(|s| s.vector().as_slice()[0]).collect();
    // 4 + 0.25 (0 - 4), 0 + 0.25 (4 + 8), 8 + 0.25 (0 - 8)
    assert_eq!(v, vec![3.0, 3.0, 6.0]);
}

#[test]
fn algebraic_connectivity_of_small_graphs() {
    let cases = [
        (Topology::path(3).unwrap(), 1.0),
        (Topology::ring(4).unwrap(), 2.0),
        (Topology::complete(5).unwrap(), 5.0),
        // star on 4 nodes has spectrum 0, 1, 1, 4
        (build_topology(4, &[(0, 1), (0, 2), (0, 3)]).unwrap(), 1.0),
    ];
    for (t, mu2) in cases {
        assert!((t.spectral().unwrap().mu2 - mu2).abs() < 1e-9);
    }
}

#[test]
fn bound_by_hand() {
    let inp = BoundInputs {
        f_gap: 1.0,
        eta: 0.1,
        lipschitz: 1.0,
        sigma_sq: 2.0,
        beta: 0.0,
        m: 2,
        tau: 2,
        iterations: 10,
        epsilon: 0.25,
        mu2: 2.0,
        rounds: 1,
    };
    let r = theorem1_bound(&inp).unwrap();
    // 2 / 1, 0.1 * 2 / 2, 0.01 * 2 * 3 * 0.5^2
    let expected = [2.0, 0.1, 0.015];
    for (a, b) in r.terms.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((r.value - 2.115).abs() < 1e-12);
    // 0.1 - 1 + 0.01 * 2 * 3
    assert!((check_lr_condition(0.1, 1.0, 0.0, 2, 2).lhs - -0.84).abs() < 1e-12);

    // with beta = 0: eta L + 6 (eta L)^2 = 1 has root (-1 + 5) / 12
    let eta = max_feasible_eta(1.0, 0.0, 2, 2).unwrap();
    assert!((eta - 1.0 / 3.0).abs() < 1e-12 && check_lr_condition(eta, 1.0, 0.0, 2, 2).satisfied);
}

#[test]
fn closed_form_costs_by_hand() {
    let s = Schedule { epoch_len: 1500, epochs: 500, step_len: 250, tau: 10 };
    let c = psi0_closed_form(&s, &[10, 9, 8, 7, 7, 6, 5]).unwrap();
    // 3000 iterations, 300 periods
    assert_eq!((c.c1, c.c2, c.w1, c.w2), (7 * 300, 52 * 300, 0, 0));
    let ring = Topology::ring(7).unwrap();
    let c = psi3_closed_form(&s, &[10; 7], &ring, 2).unwrap();
    assert_eq!((c.c1, c.c2, c.w1, c.w2), (2100, 21000, 14 * 2 * 3000, 14 * 2 * 3000));
}
