//! Environment generators: random tabular MDPs, combination locks, and
//! block-MDP lifts with decodable emissions.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::mdp::{PolicyClass, RewardDist, TabularMdp};
use crate::{Error, Result};

/// Largest explicit policy class `make_env` will enumerate.
pub const POLICY_ENUM_BUDGET: usize = 4096;

/// Generator configuration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum EnvSpec {
    /// Random transitions; `sparsity` in `[0, 1)` is the fraction of
    /// successor states zeroed out of each row (at least one survives).
    Random {
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        sparsity: f64,
    },
    /// Chain with one rewarding action sequence. State 0 is on track,
    /// state 1 is the absorbing dead state.
    CombinationLock {
        horizon: usize,
        #[cfg_attr(feature = "serde", serde(default = "default_lock_actions"))]
        num_actions: usize,
    },
    /// Rich-observation lift of a latent MDP: each latent state emits one of
    /// `emissions_per_state` private observations.
    BlockLift {
        latent: Box<EnvSpec>,
        emissions_per_state: usize,
    },
}

#[cfg(feature = "serde")]
fn default_lock_actions() -> usize {
    2
}

/// Builds the instance and, when it is small enough to enumerate, the class
/// of every deterministic policy.
pub fn make_env<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> Result<(TabularMdp, Option<PolicyClass>)> {
    let mdp = build(spec, rng)?;
    let class = PolicyClass::all_deterministic(
        mdp.num_states(),
        mdp.num_actions(),
        mdp.horizon(),
        POLICY_ENUM_BUDGET,
    )
    .ok();
    Ok((mdp, class))
}

fn build<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> Result<TabularMdp> {
    match spec {
        EnvSpec::Random {
            num_states,
            num_actions,
            horizon,
            sparsity,
        } => random_mdp(*num_states, *num_actions, *horizon, *sparsity, rng),
        EnvSpec::CombinationLock { horizon, num_actions } => {
            let combo: Vec<usize> = (0..*horizon).map(|_| rng.gen_range(0..(*num_actions).max(1))).collect();
            combination_lock(*num_actions, &combo)
        }
        EnvSpec::BlockLift {
            latent,
            emissions_per_state,
        } => {
            let base = build(latent, rng)?;
            block_lift_random(&base, *emissions_per_state, rng)
        }
    }
}

/// Random MDP with Bernoulli rewards on `{0, 1/H}`.
pub fn random_mdp<R: Rng + ?Sized>(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    sparsity: f64,
    rng: &mut R,
) -> Result<TabularMdp> {
    if num_states == 0 || num_actions == 0 || horizon == 0 {
        return Err(Error::InvalidConfig(format!(
            "random MDP needs positive sizes (S={num_states}, A={num_actions}, H={horizon})"
        )));
    }
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::InvalidConfig(format!("sparsity {sparsity} not in [0, 1)")));
    }
    let keep = libm::round((1.0 - sparsity) * num_states as f64).max(1.0) as usize;
    let cells = horizon * num_states * num_actions;
    let mut transitions = Vec::with_capacity(cells * num_states);
    let mut order: Vec<usize> = (0..num_states).collect();
    for _ in 0..cells {
        transitions.extend(random_simplex(&mut order, keep, rng));
    }
    let pay = 1.0 / horizon as f64;
    let rewards = (0..cells).map(|_| RewardDist::bernoulli(pay, rng.gen())).collect();
    let initial = random_simplex(&mut order, num_states, rng);
    TabularMdp::new(num_states, num_actions, horizon, transitions, rewards, initial)
}

/// A probability vector with `keep` random nonzero entries.
fn random_simplex<R: Rng + ?Sized>(order: &mut [usize], keep: usize, rng: &mut R) -> Vec<f64> {
    order.shuffle(rng);
    let mut row = vec![0.0; order.len()];
    let mut total = 0.0;
    for &i in &order[..keep] {
        // Bounded away from zero so the support really has `keep` states.
        let v = 0.05 + rng.gen::<f64>();
        row[i] = v;
        total += v;
    }
    for v in &mut row {
        *v /= total;
    }
    // Push the rounding residue onto the largest entry.
    let drift = 1.0 - row.iter().sum::<f64>();
    if let Some(m) = crate::math::argmax(&row) {
        row[m] += drift;
    }
    row
}

/// Combination lock opened by `combo[h]` at every layer.
///
/// Playing the correct action on track pays `1/H` and stays on track; any
/// other action drops into the dead state forever. The optimal value is 1.
pub fn combination_lock(num_actions: usize, combo: &[usize]) -> Result<TabularMdp> {
    let horizon = combo.len();
    if horizon == 0 || num_actions < 2 {
        return Err(Error::InvalidConfig(format!(
            "combination lock needs H >= 1 and at least 2 actions (H={horizon}, A={num_actions})"
        )));
    }
    if combo.iter().any(|&c| c >= num_actions) {
        return Err(Error::InvalidConfig("combination entry out of action range".into()));
    }
    let s = 2;
    let pay = 1.0 / horizon as f64;
    let mut transitions = Vec::with_capacity(horizon * s * num_actions * s);
    let mut rewards = Vec::with_capacity(horizon * s * num_actions);
    for &secret in combo {
        for x in 0..s {
            for a in 0..num_actions {
                let open = x == 0 && a == secret;
                transitions.extend_from_slice(if open { &[1.0, 0.0] } else { &[0.0, 1.0] });
                rewards.push(RewardDist::deterministic(if open { pay } else { 0.0 }));
            }
        }
    }
    TabularMdp::new(s, num_actions, horizon, transitions, rewards, vec![1.0, 0.0])
}

/// Lifts `latent` with random emission weights over a block partition:
/// latent state `s` owns observations `s*E .. (s+1)*E`.
pub fn block_lift_random<R: Rng + ?Sized>(latent: &TabularMdp, per_state: usize, rng: &mut R) -> Result<TabularMdp> {
    if per_state == 0 {
        return Err(Error::InvalidConfig("emissions_per_state must be positive".into()));
    }
    let obs = latent.num_states() * per_state;
    let emissions: Vec<Vec<f64>> = (0..latent.num_states())
        .map(|s| {
            let mut row = vec![0.0; obs];
            let weights: Vec<f64> = (0..per_state).map(|_| 0.05 + rng.gen::<f64>()).collect();
            let total: f64 = weights.iter().sum();
            for (k, w) in weights.iter().enumerate() {
                row[s * per_state + k] = w / total;
            }
            row
        })
        .collect();
    block_lift(latent, &emissions)
}

/// Lifts `latent` through emission laws `q(· | s)`, one row per latent state.
///
/// Rows must have pairwise disjoint supports covering every observation, so
/// the latent state is decodable from the observation.
pub fn block_lift(latent: &TabularMdp, emissions: &[Vec<f64>]) -> Result<TabularMdp> {
    let ls = latent.num_states();
    if emissions.len() != ls {
        return Err(Error::ShapeMismatch("one emission row per latent state"));
    }
    let obs = emissions[0].len();
    let mut owner = vec![usize::MAX; obs];
    for (s, row) in emissions.iter().enumerate() {
        if row.len() != obs {
            return Err(Error::ShapeMismatch("emission rows differ in length"));
        }
        crate::mdp::check_simplex(row).map_err(|e| Error::InvalidModel(format!("emission row {s}: {e}")))?;
        for (o, &q) in row.iter().enumerate() {
            if q > 0.0 {
                if owner[o] != usize::MAX {
                    return Err(Error::InvalidModel(format!(
                        "observation {o} emitted by latent states {} and {s}",
                        owner[o]
                    )));
                }
                owner[o] = s;
            }
        }
    }
    if let Some(o) = owner.iter().position(|&s| s == usize::MAX) {
        return Err(Error::InvalidModel(format!("observation {o} is never emitted")));
    }
    let (a_n, horizon) = (latent.num_actions(), latent.horizon());
    let mut transitions = Vec::with_capacity(horizon * obs * a_n * obs);
    let mut rewards = Vec::with_capacity(horizon * obs * a_n);
    for h in 0..horizon {
        for &s in &owner {
            for a in 0..a_n {
                let lat = latent.transition(h, s, a);
                transitions.extend((0..obs).map(|o2| lat[owner[o2]] * emissions[owner[o2]][o2]));
                rewards.push(latent.reward(h, s, a).clone());
            }
        }
    }
    let initial = (0..obs)
        .map(|o| latent.initial_dist()[owner[o]] * emissions[owner[o]][o])
        .collect();
    TabularMdp::new(obs, a_n, horizon, transitions, rewards, initial)
}
