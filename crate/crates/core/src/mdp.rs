//! Finite episodic MDPs, policies and value functions.
//!
//! Tables are stored flat in layer-major order: a `(h, x, a)` entry lives at
//! `(h * S + x) * A + a`, a transition row `(h, x, a, ·)` at
//! `((h * S + x) * A + a) * S`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math::{argmax, sample_index};
use crate::{Error, Result};

/// Tolerance for probability vectors summing to one.
pub const PROB_TOL: f64 = 1e-12;

/// One atom of a finite reward distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RewardAtom {
    pub value: f64,
    pub prob: f64,
}

/// Finite discrete reward law for one `(h, x, a)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardDist {
    atoms: Vec<RewardAtom>,
}

impl RewardDist {
    pub fn new(atoms: Vec<RewardAtom>) -> Self {
        Self { atoms }
    }

    pub fn deterministic(value: f64) -> Self {
        Self::new(vec![RewardAtom { value, prob: 1.0 }])
    }

    /// Two-point law on `{0, value}` paying `value` with probability `prob`.
    pub fn bernoulli(value: f64, prob: f64) -> Self {
        if prob >= 1.0 {
            Self::deterministic(value)
        } else if prob <= 0.0 {
            Self::deterministic(0.0)
        } else {
            Self::new(vec![
                RewardAtom { value: 0.0, prob: 1.0 - prob },
                RewardAtom { value, prob },
            ])
        }
    }

    pub fn atoms(&self) -> &[RewardAtom] {
        &self.atoms
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.value * a.prob).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.atoms.iter().map(|a| a.value * a.value * a.prob).sum()
    }

    /// Probability mass on exactly `value` (summed over duplicate atoms).
    pub fn prob_of(&self, value: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.value == value)
            .map(|a| a.prob)
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0.0;
        for atom in &self.atoms {
            if atom.prob > 0.0 {
                acc += atom.prob;
                last = atom.value;
                if u < acc {
                    return atom.value;
                }
            }
        }
        last
    }

    fn validate(&self, max_value: f64) -> core::result::Result<(), alloc::string::String> {
        if self.atoms.is_empty() {
            return Err("reward distribution has no atoms".into());
        }
        let mut total = 0.0;
        for atom in &self.atoms {
            if !(atom.prob >= 0.0) || !atom.prob.is_finite() {
                return Err(format!("reward probability {} is not a probability", atom.prob));
            }
            if !(atom.value >= 0.0 && atom.value <= max_value + PROB_TOL) {
                return Err(format!(
                    "reward value {} outside [0, {}]",
                    atom.value, max_value
                ));
            }
            total += atom.prob;
        }
        if (total - 1.0).abs() > PROB_TOL {
            return Err(format!("reward probabilities sum to {total}"));
        }
        Ok(())
    }
}

/// Finite episodic MDP with layered transitions and rewards.
///
/// Rewards are supported on `[0, 1/H]`, so every trajectory's return lies in
/// `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    transitions: Vec<f64>,
    rewards: Vec<RewardDist>,
    initial: Vec<f64>,
}

impl TabularMdp {
    /// Builds and validates an MDP from flat tables.
    ///
    /// `transitions` has length `H * S * A * S`, `rewards` length `H * S * A`.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transitions: Vec<f64>,
        rewards: Vec<RewardDist>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::InvalidModel(format!(
                "sizes must be positive (S={num_states}, A={num_actions}, H={horizon})"
            )));
        }
        let cells = horizon * num_states * num_actions;
        if transitions.len() != cells * num_states {
            return Err(Error::ShapeMismatch("transition table"));
        }
        if rewards.len() != cells {
            return Err(Error::ShapeMismatch("reward table"));
        }
        if initial.len() != num_states {
            return Err(Error::ShapeMismatch("initial distribution"));
        }
        check_simplex(&initial).map_err(|e| Error::InvalidModel(format!("initial distribution: {e}")))?;
        for (row_idx, row) in transitions.chunks(num_states).enumerate() {
            check_simplex(row).map_err(|e| {
                let (h, x, a) = unflatten(row_idx, num_states, num_actions);
                Error::InvalidModel(format!("transition row (h={h}, x={x}, a={a}): {e}"))
            })?;
        }
        let max_reward = 1.0 / horizon as f64;
        for (idx, dist) in rewards.iter().enumerate() {
            dist.validate(max_reward).map_err(|e| {
                let (h, x, a) = unflatten(idx, num_states, num_actions);
                Error::InvalidModel(format!("reward (h={h}, x={x}, a={a}): {e}"))
            })?;
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            transitions,
            rewards,
            initial,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Index of the absorbing state recorded as the successor of the last layer.
    pub fn terminal_state(&self) -> usize {
        self.num_states
    }

    /// Number of `(x, a)` cells in one layer.
    pub fn cells(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self, h: usize, x: usize, a: usize) -> &[f64] {
        let start = self.cell_index(h, x, a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    pub fn reward(&self, h: usize, x: usize, a: usize) -> &RewardDist {
        &self.rewards[self.cell_index(h, x, a)]
    }

    pub fn mean_reward(&self, h: usize, x: usize, a: usize) -> f64 {
        self.reward(h, x, a).mean()
    }

    /// Flat transition table, `H * S * A * S` entries.
    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    pub fn rewards(&self) -> &[RewardDist] {
        &self.rewards
    }

    /// `M_h(x' | x, a)` with the terminal successor on the last layer.
    pub fn next_state_prob(&self, h: usize, x: usize, a: usize, next: usize) -> f64 {
        if h + 1 == self.horizon {
            if next == self.terminal_state() {
                1.0
            } else {
                0.0
            }
        } else if next >= self.num_states {
            0.0
        } else {
            self.transition(h, x, a)[next]
        }
    }

    /// Builds a model taking layer `h` from `layers[h]`.
    ///
    /// All sources must share sizes and the initial distribution; the result
    /// uses the initial distribution of `layers[0]`.
    pub fn splice(layers: &[&TabularMdp]) -> Result<Self> {
        let first = *layers.first().ok_or(Error::Empty("layer sources"))?;
        if layers.len() != first.horizon {
            return Err(Error::ShapeMismatch("one source per layer"));
        }
        let (s, a) = (first.num_states, first.num_actions);
        let mut transitions = Vec::with_capacity(first.transitions.len());
        let mut rewards = Vec::with_capacity(first.rewards.len());
        for (h, src) in layers.iter().enumerate() {
            if !src.same_shape(first) {
                return Err(Error::ShapeMismatch("spliced models differ in size"));
            }
            let lo = h * s * a;
            let hi = lo + s * a;
            transitions.extend_from_slice(&src.transitions[lo * s..hi * s]);
            rewards.extend_from_slice(&src.rewards[lo..hi]);
        }
        Self::new(s, a, first.horizon, transitions, rewards, first.initial.clone())
    }

    pub fn same_shape(&self, other: &TabularMdp) -> bool {
        self.num_states == other.num_states
            && self.num_actions == other.num_actions
            && self.horizon == other.horizon
    }

    #[inline]
    pub(crate) fn cell_index(&self, h: usize, x: usize, a: usize) -> usize {
        (h * self.num_states + x) * self.num_actions + a
    }

    pub(crate) fn check_layer(&self, h: usize) -> Result<()> {
        if h >= self.horizon {
            Err(Error::LayerOutOfRange {
                layer: h,
                horizon: self.horizon,
            })
        } else {
            Ok(())
        }
    }
}

fn unflatten(idx: usize, s: usize, a: usize) -> (usize, usize, usize) {
    (idx / (s * a), (idx / a) % s, idx % a)
}

pub(crate) fn check_simplex(p: &[f64]) -> core::result::Result<(), alloc::string::String> {
    let mut total = 0.0;
    for &v in p {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(format!("entry {v} is not a probability"));
        }
        total += v;
    }
    if (total - 1.0).abs() > PROB_TOL {
        return Err(format!("entries sum to {total}"));
    }
    Ok(())
}

/// Layered table of reals indexed by `(h, x, a)`; `f_{H+1} = 0` implicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    values: Vec<f64>,
}

impl ValueFunction {
    pub fn zeros(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        Self {
            num_states,
            num_actions,
            horizon,
            values: vec![0.0; num_states * num_actions * horizon],
        }
    }

    pub fn from_values(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != num_states * num_actions * horizon {
            return Err(Error::ShapeMismatch("value table"));
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            values,
        })
    }

    pub fn shaped_like(mdp: &TabularMdp) -> Self {
        Self::zeros(mdp.num_states, mdp.num_actions, mdp.horizon)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, h: usize, x: usize, a: usize) -> f64 {
        self.values[(h * self.num_states + x) * self.num_actions + a]
    }

    #[inline]
    pub fn set(&mut self, h: usize, x: usize, a: usize, v: f64) {
        self.values[(h * self.num_states + x) * self.num_actions + a] = v;
    }

    /// The `S * A` slice of layer `h`.
    pub fn layer(&self, h: usize) -> &[f64] {
        let n = self.num_states * self.num_actions;
        &self.values[h * n..(h + 1) * n]
    }

    pub fn layer_mut(&mut self, h: usize) -> &mut [f64] {
        let n = self.num_states * self.num_actions;
        &mut self.values[h * n..(h + 1) * n]
    }

    /// `max_a f_h(x, a)`, zero past the horizon or at the terminal state.
    #[inline]
    pub fn state_value(&self, h: usize, x: usize) -> f64 {
        if h >= self.horizon || x >= self.num_states {
            return 0.0;
        }
        let row = &self.layer(h)[x * self.num_actions..(x + 1) * self.num_actions];
        row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn fits(&self, mdp: &TabularMdp) -> bool {
        self.num_states == mdp.num_states
            && self.num_actions == mdp.num_actions
            && self.horizon == mdp.horizon
    }

    pub fn max_abs_diff(&self, other: &ValueFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Deterministic or randomized layered policy.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Action per `(h, x)`.
    Deterministic {
        num_states: usize,
        num_actions: usize,
        actions: Vec<usize>,
    },
    /// Probability vector over actions per `(h, x)`.
    Randomized {
        num_states: usize,
        num_actions: usize,
        probs: Vec<f64>,
    },
}

impl Policy {
    pub fn deterministic(num_states: usize, num_actions: usize, actions: Vec<usize>) -> Result<Self> {
        if num_states == 0 || actions.len() % num_states != 0 {
            return Err(Error::ShapeMismatch("deterministic policy table"));
        }
        if actions.iter().any(|&a| a >= num_actions) {
            return Err(Error::InvalidDistribution("action index out of range".into()));
        }
        Ok(Self::Deterministic {
            num_states,
            num_actions,
            actions,
        })
    }

    pub fn randomized(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        let row = num_states * num_actions;
        if row == 0 || probs.len() % row != 0 {
            return Err(Error::ShapeMismatch("randomized policy table"));
        }
        for r in probs.chunks(num_actions) {
            check_simplex(r).map_err(|e| Error::InvalidDistribution(format!("policy row: {e}")))?;
        }
        Ok(Self::Randomized {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn uniform(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        Self::Randomized {
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions * horizon],
        }
    }

    pub fn num_states(&self) -> usize {
        match self {
            Self::Deterministic { num_states, .. } | Self::Randomized { num_states, .. } => *num_states,
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            Self::Deterministic { num_actions, .. } | Self::Randomized { num_actions, .. } => *num_actions,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Self::Deterministic {
                num_states, actions, ..
            } => actions.len() / num_states,
            Self::Randomized {
                num_states,
                num_actions,
                probs,
            } => probs.len() / (num_states * num_actions),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Self::Deterministic { .. })
    }

    /// `π_h(a | x)`.
    #[inline]
    pub fn prob(&self, h: usize, x: usize, a: usize) -> f64 {
        match self {
            Self::Deterministic {
                num_states, actions, ..
            } => {
                if actions[h * num_states + x] == a {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Randomized {
                num_states,
                num_actions,
                probs,
            } => probs[(h * num_states + x) * num_actions + a],
        }
    }

    /// The action of a deterministic policy; `None` for randomized ones.
    pub fn action(&self, h: usize, x: usize) -> Option<usize> {
        match self {
            Self::Deterministic {
                num_states, actions, ..
            } => Some(actions[h * num_states + x]),
            Self::Randomized { .. } => None,
        }
    }

    /// Samples `a ~ π_h(· | x)`; deterministic policies consume no randomness.
    pub fn sample_action<R: Rng + ?Sized>(&self, h: usize, x: usize, rng: &mut R) -> usize {
        match self {
            Self::Deterministic {
                num_states, actions, ..
            } => actions[h * num_states + x],
            Self::Randomized {
                num_states,
                num_actions,
                probs,
            } => {
                let start = (h * num_states + x) * num_actions;
                sample_index(&probs[start..start + num_actions], rng.gen())
            }
        }
    }

    /// The same policy written as point masses.
    pub fn to_randomized(&self) -> Policy {
        match self {
            Self::Randomized { .. } => self.clone(),
            Self::Deterministic {
                num_states,
                num_actions,
                actions,
            } => {
                let mut probs = vec![0.0; actions.len() * num_actions];
                for (i, &a) in actions.iter().enumerate() {
                    probs[i * num_actions + a] = 1.0;
                }
                Self::Randomized {
                    num_states: *num_states,
                    num_actions: *num_actions,
                    probs,
                }
            }
        }
    }
}

/// One step `(x_h, a_h, r_h, x_{h+1})` of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Exactly `H` transitions; the last successor is the terminal index.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Where the policies of a [`PolicyClass`] came from.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyProvenance {
    /// Greedy policies of a value class; `sources[i]` is the first member
    /// inducing policy `i`.
    InducedFromValues { sources: Vec<usize> },
    Explicit,
}

/// Ordered finite set of deterministic policies.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyClass {
    policies: Vec<Policy>,
    provenance: PolicyProvenance,
}

impl PolicyClass {
    pub fn explicit(policies: Vec<Policy>) -> Result<Self> {
        if policies.is_empty() {
            return Err(Error::Empty("policy class"));
        }
        Ok(Self {
            policies,
            provenance: PolicyProvenance::Explicit,
        })
    }

    /// `{π_f : f ∈ F}` with duplicates removed, ordered by first inducing member.
    pub fn induced(values: &[ValueFunction]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("value class"));
        }
        let mut policies: Vec<Policy> = Vec::new();
        let mut sources = Vec::new();
        for (i, f) in values.iter().enumerate() {
            let pi = greedy_policy(f);
            if !policies.contains(&pi) {
                policies.push(pi);
                sources.push(i);
            }
        }
        Ok(Self {
            policies,
            provenance: PolicyProvenance::InducedFromValues { sources },
        })
    }

    /// Every deterministic policy, `A^(S H)` of them, in lexicographic order.
    pub fn all_deterministic(num_states: usize, num_actions: usize, horizon: usize, budget: usize) -> Result<Self> {
        let slots = num_states * horizon;
        let mut count: usize = 1;
        for _ in 0..slots {
            count = count.checked_mul(num_actions).filter(|&c| c <= budget).ok_or(
                Error::BudgetExceeded {
                    required: (num_actions as u128).saturating_pow(slots as u32),
                    budget: budget as u128,
                },
            )?;
        }
        let mut policies = Vec::with_capacity(count);
        let mut actions = vec![0usize; slots];
        for _ in 0..count {
            policies.push(Policy::Deterministic {
                num_states,
                num_actions,
                actions: actions.clone(),
            });
            for slot in actions.iter_mut().rev() {
                *slot += 1;
                if *slot < num_actions {
                    break;
                }
                *slot = 0;
            }
        }
        Self::explicit(policies)
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn provenance(&self) -> &PolicyProvenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn position(&self, pi: &Policy) -> Option<usize> {
        self.policies.iter().position(|p| p == pi)
    }
}

/// `[T_h f](x, a) = E[r_h] + Σ_x' P_h(x' | x, a) max_a' f_{h+1}(x', a')`.
pub fn bellman_apply(mdp: &TabularMdp, f: &ValueFunction, h: usize) -> Result<Vec<f64>> {
    mdp.check_layer(h)?;
    if !f.fits(mdp) {
        return Err(Error::ShapeMismatch("value function does not fit the MDP"));
    }
    let next: Vec<f64> = (0..mdp.num_states).map(|x| f.state_value(h + 1, x)).collect();
    Ok(backup_layer(mdp, h, &next))
}

/// Layer `h` of the Bellman backup of a next-layer state-value vector.
pub(crate) fn backup_layer(mdp: &TabularMdp, h: usize, next_values: &[f64]) -> Vec<f64> {
    let (s, a) = (mdp.num_states, mdp.num_actions);
    let last = h + 1 == mdp.horizon;
    let mut out = vec![0.0; s * a];
    for x in 0..s {
        for act in 0..a {
            let mut v = mdp.mean_reward(h, x, act);
            if !last {
                v += mdp
                    .transition(h, x, act)
                    .iter()
                    .zip(next_values)
                    .map(|(p, nv)| p * nv)
                    .sum::<f64>();
            }
            out[x * a + act] = v;
        }
    }
    out
}

/// Optimal action values by backward induction.
pub fn q_star(mdp: &TabularMdp) -> ValueFunction {
    let mut q = ValueFunction::shaped_like(mdp);
    let mut next = vec![0.0; mdp.num_states];
    for h in (0..mdp.horizon).rev() {
        let layer = backup_layer(mdp, h, &next);
        q.layer_mut(h).copy_from_slice(&layer);
        for (x, nv) in next.iter_mut().enumerate() {
            *nv = q.state_value(h, x);
        }
    }
    q
}

/// Action values `Q^π` of a fixed policy.
pub fn q_pi(mdp: &TabularMdp, pi: &Policy) -> ValueFunction {
    let (s, a) = (mdp.num_states, mdp.num_actions);
    let mut q = ValueFunction::shaped_like(mdp);
    let mut next = vec![0.0; s];
    for h in (0..mdp.horizon).rev() {
        let layer = backup_layer(mdp, h, &next);
        q.layer_mut(h).copy_from_slice(&layer);
        for (x, nv) in next.iter_mut().enumerate() {
            *nv = (0..a).map(|act| pi.prob(h, x, act) * layer[x * a + act]).sum();
        }
    }
    q
}

/// Greedy policy `π_f`, ties to the lowest action index.
pub fn greedy_policy(f: &ValueFunction) -> Policy {
    let (s, a) = (f.num_states, f.num_actions);
    let mut actions = Vec::with_capacity(s * f.horizon);
    for h in 0..f.horizon {
        let layer = f.layer(h);
        for x in 0..s {
            actions.push(argmax(&layer[x * a..(x + 1) * a]).unwrap_or(0));
        }
    }
    Policy::Deterministic {
        num_states: s,
        num_actions: a,
        actions,
    }
}

/// An optimal deterministic policy, greedy on `Q*`.
pub fn optimal_policy(mdp: &TabularMdp) -> Policy {
    greedy_policy(&q_star(mdp))
}

/// Per-layer state distributions `P^π[x_h = x]`, layer-major.
pub fn state_distributions(mdp: &TabularMdp, pi: &Policy) -> Vec<f64> {
    let (s, a) = (mdp.num_states, mdp.num_actions);
    let mut out = Vec::with_capacity(s * mdp.horizon);
    let mut current = mdp.initial.clone();
    for h in 0..mdp.horizon {
        out.extend_from_slice(&current);
        if h + 1 == mdp.horizon {
            break;
        }
        let mut next = vec![0.0; s];
        for x in 0..s {
            if current[x] == 0.0 {
                continue;
            }
            for act in 0..a {
                let w = current[x] * pi.prob(h, x, act);
                if w == 0.0 {
                    continue;
                }
                for (n, p) in next.iter_mut().zip(mdp.transition(h, x, act)) {
                    *n += w * p;
                }
            }
        }
        current = next;
    }
    out
}

/// Expected return `J(π)` by forward propagation.
pub fn j_value(mdp: &TabularMdp, pi: &Policy) -> f64 {
    let (s, a) = (mdp.num_states, mdp.num_actions);
    let states = state_distributions(mdp, pi);
    let mut total = 0.0;
    for h in 0..mdp.horizon {
        for x in 0..s {
            let px = states[h * s + x];
            if px == 0.0 {
                continue;
            }
            for act in 0..a {
                total += px * pi.prob(h, x, act) * mdp.mean_reward(h, x, act);
            }
        }
    }
    total
}

/// Samples a trajectory with `x_1 ~ d_1`, `a_h ~ π_h`, `r_h ~ R_h`, `x_{h+1} ~ P_h`.
pub fn sample_trajectory<R: Rng + ?Sized>(mdp: &TabularMdp, pi: &Policy, rng: &mut R) -> Trajectory {
    let mut steps = Vec::with_capacity(mdp.horizon);
    let mut x = sample_index(&mdp.initial, rng.gen());
    for h in 0..mdp.horizon {
        let a = pi.sample_action(h, x, rng);
        let r = mdp.reward(h, x, a).sample(rng);
        let next = if h + 1 == mdp.horizon {
            mdp.terminal_state()
        } else {
            sample_index(mdp.transition(h, x, a), rng.gen())
        };
        steps.push(Transition {
            state: x,
            action: a,
            reward: r,
            next_state: next,
        });
        x = next;
    }
    Trajectory { steps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_state(horizon: usize, reward: f64) -> TabularMdp {
        TabularMdp::new(
            1,
            1,
            horizon,
            vec![1.0; horizon],
            vec![RewardDist::deterministic(reward); horizon],
            vec![1.0],
        )
        .unwrap()
    }

    /// Two states, two actions; action 1 moves to state 1, which pays 1/H on the last layer.
    fn chain(horizon: usize) -> TabularMdp {
        let (s, a) = (2, 2);
        let mut p = vec![0.0; horizon * s * a * s];
        let mut r = Vec::new();
        for h in 0..horizon {
            for x in 0..s {
                for act in 0..a {
                    let base = ((h * s + x) * a + act) * s;
                    p[base + act] = 1.0;
                    let pay = if h + 1 == horizon && x == 1 { 1.0 / horizon as f64 } else { 0.0 };
                    r.push(RewardDist::deterministic(pay));
                }
            }
        }
        TabularMdp::new(s, a, horizon, p, r, vec![1.0, 0.0]).unwrap()
    }

    #[test]
    fn rejects_bad_rows_and_rewards() {
        let err = TabularMdp::new(1, 1, 1, vec![0.9], vec![RewardDist::deterministic(0.0)], vec![1.0]);
        assert!(matches!(err, Err(Error::InvalidModel(_))));
        let err = TabularMdp::new(1, 1, 2, vec![1.0, 1.0], vec![RewardDist::deterministic(0.6); 2], vec![1.0]);
        assert!(matches!(err, Err(Error::InvalidModel(_))));
        let err = TabularMdp::new(1, 1, 1, vec![1.0], vec![RewardDist::deterministic(0.0)], vec![0.5]);
        assert!(matches!(err, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn terminal_layer_backup_is_mean_reward() {
        let mdp = chain(3);
        let f = ValueFunction::from_values(2, 2, 3, (0..12).map(|i| i as f64 / 12.0).collect()).unwrap();
        let out = bellman_apply(&mdp, &f, 2).unwrap();
        for x in 0..2 {
            for a in 0..2 {
                assert_eq!(out[x * 2 + a], mdp.mean_reward(2, x, a));
            }
        }
        let zero = ValueFunction::shaped_like(&mdp);
        for h in 0..3 {
            let out = bellman_apply(&mdp, &zero, h).unwrap();
            for x in 0..2 {
                for a in 0..2 {
                    assert_eq!(out[x * 2 + a], mdp.mean_reward(h, x, a));
                }
            }
        }
        assert_eq!(
            bellman_apply(&mdp, &zero, 3),
            Err(Error::LayerOutOfRange { layer: 3, horizon: 3 })
        );
    }

    #[test]
    fn chain_matches_hand_recursion() {
        // Hand recursion: V_H(1) = 1/H, V_H(0) = 0, and at earlier layers either
        // action can reach state 1 in one step, so Q_h(x, 1) = 1/H, Q_h(x, 0) = V_{h+1}(0).
        let h_total = 3;
        let mdp = chain(h_total);
        let q = q_star(&mdp);
        let pay = 1.0 / 3.0;
        for x in 0..2 {
            assert_eq!(q.get(2, x, 0), if x == 1 { pay } else { 0.0 });
            assert_eq!(q.get(2, x, 1), if x == 1 { pay } else { 0.0 });
            for h in 0..2 {
                assert_eq!(q.get(h, x, 1), pay);
                assert_eq!(q.get(h, x, 0), pay * if h == 0 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn one_state_closed_form() {
        let h_total = 4;
        let mdp = one_state(h_total, 0.25);
        let q = q_star(&mdp);
        for h in 0..h_total {
            let expect = (h_total - h) as f64 / h_total as f64;
            assert!((q.get(h, 0, 0) - expect).abs() < 1e-15);
        }
        let pi = greedy_policy(&q);
        assert!((j_value(&mdp, &pi) - 1.0).abs() < 1e-15);
        assert_eq!(j_value(&one_state(3, 0.0), &pi), 0.0);
    }

    #[test]
    fn greedy_ties_and_preferences() {
        let f = ValueFunction::zeros(3, 4, 2);
        let pi = greedy_policy(&f);
        for h in 0..2 {
            for x in 0..3 {
                assert_eq!(pi.action(h, x), Some(0));
            }
        }
        let g = ValueFunction::from_values(1, 2, 1, vec![0.1, 0.9]).unwrap();
        assert_eq!(greedy_policy(&g).action(0, 0), Some(1));
    }

    #[test]
    fn deterministic_trajectory_ignores_seed() {
        let mdp = chain(4);
        let pi = Policy::deterministic(2, 2, vec![1, 0, 0, 1, 1, 1, 0, 0]).unwrap();
        let first = sample_trajectory(&mdp, &pi, &mut ChaCha8Rng::seed_from_u64(1));
        for seed in 2..6 {
            assert_eq!(sample_trajectory(&mdp, &pi, &mut ChaCha8Rng::seed_from_u64(seed)), first);
        }
        assert_eq!(first.steps.len(), 4);
        assert_eq!(first.steps[3].next_state, mdp.terminal_state());
    }

    #[test]
    fn splice_takes_layers_from_sources() {
        let a = chain(2);
        let b = one_state(2, 0.5);
        assert!(TabularMdp::splice(&[&a, &b]).is_err());
        let mut c = chain(2);
        c.rewards[0] = RewardDist::deterministic(0.5);
        let s = TabularMdp::splice(&[&c, &a]).unwrap();
        assert_eq!(s.mean_reward(0, 0, 0), 0.5);
        let s = TabularMdp::splice(&[&a, &c]).unwrap();
        assert_eq!(s.mean_reward(0, 0, 0), 0.0);
    }

    #[test]
    fn all_deterministic_enumerates_every_table() {
        let class = PolicyClass::all_deterministic(2, 2, 2, 1 << 10).unwrap();
        assert_eq!(class.len(), 16);
        let mut seen = alloc::collections::BTreeSet::new();
        for p in class.policies() {
            if let Policy::Deterministic { actions, .. } = p {
                seen.insert(actions.clone());
            }
        }
        assert_eq!(seen.len(), 16);
        assert!(PolicyClass::all_deterministic(4, 3, 5, 1000).is_err());
    }

    #[test]
    fn induced_class_deduplicates_in_order() {
        let f0 = ValueFunction::from_values(1, 2, 1, vec![0.1, 0.9]).unwrap();
        let f1 = ValueFunction::from_values(1, 2, 1, vec![0.9, 0.1]).unwrap();
        let f2 = ValueFunction::from_values(1, 2, 1, vec![0.0, 0.5]).unwrap();
        let class = PolicyClass::induced(&[f0, f1, f2]).unwrap();
        assert_eq!(class.len(), 2);
        assert_eq!(
            class.provenance(),
            &PolicyProvenance::InducedFromValues { sources: vec![0, 1] }
        );
    }
}
