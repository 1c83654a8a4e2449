//! Random instances and brute-force oracles shared by the integration tests.

#![allow(dead_code)]

use glow_core::coverage::Occupancy;
use glow_core::env::random_mdp;
use glow_core::mdp::{Policy, TabularMdp, ValueFunction};
use rand::Rng;

pub fn mdp<R: Rng>(rng: &mut R, max_s: usize, max_a: usize, max_h: usize) -> TabularMdp {
    let s = rng.gen_range(1..=max_s);
    let a = rng.gen_range(1..=max_a);
    let h = rng.gen_range(1..=max_h);
    let sparsity = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..0.7) };
    random_mdp(s, a, h, sparsity, rng).unwrap()
}

pub fn randomized_policy<R: Rng>(rng: &mut R, s: usize, a: usize, h: usize) -> Policy {
    let mut probs = Vec::with_capacity(h * s * a);
    for _ in 0..h * s {
        let row: Vec<f64> = (0..a).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let total: f64 = row.iter().sum();
        probs.extend(row.iter().map(|v| v / total));
    }
    Policy::randomized(s, a, probs).unwrap()
}

pub fn deterministic_policy<R: Rng>(rng: &mut R, s: usize, a: usize, h: usize) -> Policy {
    Policy::deterministic(s, a, (0..h * s).map(|_| rng.gen_range(0..a)).collect()).unwrap()
}

pub fn any_policy<R: Rng>(rng: &mut R, s: usize, a: usize, h: usize) -> Policy {
    if rng.gen_bool(0.5) {
        randomized_policy(rng, s, a, h)
    } else {
        deterministic_policy(rng, s, a, h)
    }
}

pub fn value_function<R: Rng>(rng: &mut R, s: usize, a: usize, h: usize) -> ValueFunction {
    ValueFunction::from_values(s, a, h, (0..h * s * a).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

/// Random per-layer distribution; `zeros` sprinkles exact zeros in.
pub fn random_occupancy<R: Rng>(rng: &mut R, s: usize, a: usize, h: usize, zeros: bool) -> Occupancy {
    let cells = s * a;
    let mut mass = Vec::with_capacity(h * cells);
    for _ in 0..h {
        let mut row: Vec<f64> = (0..cells)
            .map(|_| if zeros && rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() + 1e-3 })
            .collect();
        if row.iter().all(|&v| v == 0.0) {
            row[rng.gen_range(0..cells)] = 1.0;
        }
        let total: f64 = row.iter().sum();
        mass.extend(row.iter().map(|v| v / total));
    }
    Occupancy::new(s, a, h, mass).unwrap()
}

/// Every deterministic policy, in lexicographic order of the action table.
pub fn all_deterministic(s: usize, a: usize, h: usize) -> Vec<Policy> {
    let slots = s * h;
    let total = a.pow(slots as u32);
    (0..total)
        .map(|mut code| {
            let mut actions = vec![0; slots];
            for slot in actions.iter_mut().rev() {
                *slot = code % a;
                code /= a;
            }
            Policy::deterministic(s, a, actions).unwrap()
        })
        .collect()
}

/// Exact Q^pi by backward recursion written against the raw tables.
pub fn q_pi_oracle(mdp: &TabularMdp, pi: &Policy) -> Vec<f64> {
    let (s, a, h) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut q = vec![0.0; h * s * a];
    for layer in (0..h).rev() {
        for x in 0..s {
            for act in 0..a {
                let mut v = mdp.mean_reward(layer, x, act);
                if layer + 1 < h {
                    for (x2, p) in mdp.transition(layer, x, act).iter().enumerate() {
                        let cont: f64 = (0..a)
                            .map(|b| pi.prob(layer + 1, x2, b) * q[((layer + 1) * s + x2) * a + b])
                            .sum();
                        v += p * cont;
                    }
                }
                q[(layer * s + x) * a + act] = v;
            }
        }
    }
    q
}

/// Exact occupancy via forward recursion on the raw tables.
pub fn occupancy_oracle(mdp: &TabularMdp, pi: &Policy) -> Vec<f64> {
    let (s, a, h) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut out = vec![0.0; h * s * a];
    let mut states = mdp.initial_dist().to_vec();
    for layer in 0..h {
        let mut next = vec![0.0; s];
        for x in 0..s {
            for act in 0..a {
                let m = states[x] * pi.prob(layer, x, act);
                out[(layer * s + x) * a + act] = m;
                if layer + 1 < h {
                    for (x2, p) in mdp.transition(layer, x, act).iter().enumerate() {
                        next[x2] += m * p;
                    }
                }
            }
        }
        states = next;
    }
    out
}

/// `(f_h - T_h f_{h+1})(x, a)` for every cell, from the raw tables.
pub fn bellman_residual(mdp: &TabularMdp, f: &ValueFunction, h: usize) -> Vec<f64> {
    let (s, a) = (mdp.num_states(), mdp.num_actions());
    let mut out = Vec::with_capacity(s * a);
    for x in 0..s {
        for act in 0..a {
            let mut backup = mdp.mean_reward(h, x, act);
            if h + 1 < mdp.horizon() {
                for (x2, p) in mdp.transition(h, x, act).iter().enumerate() {
                    let best = (0..a).map(|b| f.get(h + 1, x2, b)).fold(f64::NEG_INFINITY, f64::max);
                    backup += p * best;
                }
            }
            out.push(f.get(h, x, act) - backup);
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
