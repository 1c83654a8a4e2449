//! Layered transition datasets and the per-layer sufficient statistics that
//! every estimator in the crate reads.
//!
//! A [`LayerSummary`] is a normalized moment table for one layer. It can come
//! from a finite dataset or, in exact-expectation mode, from a data
//! distribution and the true model; estimators never know which.

use alloc::vec;
use alloc::vec::Vec;

use crate::coverage::Occupancy;
use crate::mdp::{TabularMdp, Transition, ValueFunction};
use crate::{Error, Result};

/// Origin of one stored tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Collected online: `trajectory` within `iteration` (both 1-based).
    Online { iteration: usize, trajectory: usize },
    /// Drawn from offline distribution number `source`, `index` in generation order.
    Offline { source: usize, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub transition: Transition,
    pub provenance: Provenance,
}

/// Running counts for one layer. Successor index `S` is the terminal state.
#[derive(Debug, Clone, PartialEq)]
struct LayerStats {
    count: Vec<f64>,
    next: Vec<f64>,
    reward_next: Vec<f64>,
    reward_sq: Vec<f64>,
}

impl LayerStats {
    fn new(cells: usize, successors: usize) -> Self {
        Self {
            count: vec![0.0; cells],
            next: vec![0.0; cells * successors],
            reward_next: vec![0.0; cells * successors],
            reward_sq: vec![0.0; cells],
        }
    }
}

/// Per-layer multisets of `(x, a, r, x')` tuples with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredDataset {
    num_states: usize,
    num_actions: usize,
    layers: Vec<Vec<Sample>>,
    stats: Vec<LayerStats>,
}

impl LayeredDataset {
    pub fn new(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        let cells = num_states * num_actions;
        Self {
            num_states,
            num_actions,
            layers: vec![Vec::new(); horizon],
            stats: vec![LayerStats::new(cells, num_states + 1); horizon],
        }
    }

    pub fn for_mdp(mdp: &TabularMdp) -> Self {
        Self::new(mdp.num_states(), mdp.num_actions(), mdp.horizon())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, h: usize) -> &[Sample] {
        &self.layers[h]
    }

    pub fn layer_len(&self, h: usize) -> usize {
        self.layers[h].len()
    }

    /// Smallest layer cardinality.
    pub fn min_layer_len(&self) -> usize {
        self.layers.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(Vec::is_empty)
    }

    pub fn push(&mut self, h: usize, transition: Transition, provenance: Provenance) -> Result<()> {
        if h >= self.layers.len() {
            return Err(Error::LayerOutOfRange {
                layer: h,
                horizon: self.layers.len(),
            });
        }
        let Transition {
            state,
            action,
            reward,
            next_state,
        } = transition;
        if state >= self.num_states || action >= self.num_actions || next_state > self.num_states {
            return Err(Error::ShapeMismatch("transition indices outside the dataset shape"));
        }
        let z = state * self.num_actions + action;
        let succ = self.num_states + 1;
        let stats = &mut self.stats[h];
        stats.count[z] += 1.0;
        stats.next[z * succ + next_state] += 1.0;
        stats.reward_next[z * succ + next_state] += reward;
        stats.reward_sq[z] += reward * reward;
        self.layers[h].push(Sample { transition, provenance });
        Ok(())
    }

    /// Appends every step of a trajectory, step `h` into layer `h`.
    pub fn push_trajectory(&mut self, steps: &[Transition], iteration: usize, trajectory: usize) -> Result<()> {
        for (h, &step) in steps.iter().enumerate() {
            self.push(h, step, Provenance::Online { iteration, trajectory })?;
        }
        Ok(())
    }

    /// Copies the first `count` tuples of every layer of `other`.
    pub fn extend_prefix(&mut self, other: &LayeredDataset, count: usize) -> Result<()> {
        if other.horizon() != self.horizon() {
            return Err(Error::ShapeMismatch("datasets differ in horizon"));
        }
        for h in 0..other.horizon() {
            let have = other.layer_len(h);
            if have < count {
                return Err(Error::UndersizedOffline { layer: h, have, need: count });
            }
            for s in &other.layers[h][..count] {
                self.push(h, s.transition, s.provenance)?;
            }
        }
        Ok(())
    }

    /// Normalized statistics of layer `h`.
    pub fn summary(&self, h: usize) -> Result<LayerSummary> {
        let n = self.layers.get(h).map(Vec::len).ok_or(Error::LayerOutOfRange {
            layer: h,
            horizon: self.layers.len(),
        })?;
        if n == 0 {
            return Err(Error::Empty("dataset layer"));
        }
        let inv = 1.0 / n as f64;
        let st = &self.stats[h];
        let scale = |v: &Vec<f64>| v.iter().map(|c| c * inv).collect();
        Ok(LayerSummary {
            num_states: self.num_states,
            num_actions: self.num_actions,
            layer: h,
            last_layer: h + 1 == self.horizon(),
            mass: scale(&st.count),
            next: scale(&st.next),
            reward_next: scale(&st.reward_next),
            reward_sq: scale(&st.reward_sq),
        })
    }

    /// Empirical `(x, a)` law of every layer.
    pub fn empirical_occupancy(&self) -> Result<Occupancy> {
        let mut mass = Vec::with_capacity(self.num_states * self.num_actions * self.horizon());
        for h in 0..self.horizon() {
            mass.extend(self.summary(h)?.mass);
        }
        Occupancy::new(self.num_states, self.num_actions, self.horizon(), mass)
    }
}

/// Normalized moments of one layer's data law over `(x, a, r, x')`.
///
/// Fields are indexed by cell `z = x * A + a` and successor `x'` in `0..=S`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSummary {
    num_states: usize,
    num_actions: usize,
    layer: usize,
    last_layer: bool,
    /// `P[z]`.
    mass: Vec<f64>,
    /// `P[z, x']`.
    next: Vec<f64>,
    /// `E[r 1{z, x'}]`.
    reward_next: Vec<f64>,
    /// `E[r^2 1{z}]`.
    reward_sq: Vec<f64>,
}

impl LayerSummary {
    /// Population moments under `(x, a) ~ mu_h`, `r ~ R_h`, `x' ~ P_h`.
    pub fn exact(mdp: &TabularMdp, mu: &Occupancy, h: usize) -> Result<Self> {
        mdp.check_layer(h)?;
        if !mu.fits(mdp) {
            return Err(Error::ShapeMismatch("data distribution does not fit the MDP"));
        }
        let (s, a) = (mdp.num_states(), mdp.num_actions());
        let succ = s + 1;
        let last = h + 1 == mdp.horizon();
        let mass = mu.layer(h).to_vec();
        let mut next = vec![0.0; s * a * succ];
        let mut reward_next = vec![0.0; s * a * succ];
        let mut reward_sq = vec![0.0; s * a];
        for x in 0..s {
            for act in 0..a {
                let z = x * a + act;
                let m = mass[z];
                if m == 0.0 {
                    continue;
                }
                let reward = mdp.reward(h, x, act);
                let rbar = reward.mean();
                reward_sq[z] = m * reward.second_moment();
                for x2 in 0..succ {
                    let p = mdp.next_state_prob(h, x, act, x2);
                    next[z * succ + x2] = m * p;
                    reward_next[z * succ + x2] = m * p * rbar;
                }
            }
        }
        Ok(Self {
            num_states: s,
            num_actions: a,
            layer: h,
            last_layer: last,
            mass,
            next,
            reward_next,
            reward_sq,
        })
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// `max_a' f_{h+1}(x', a')` for every successor, zero at the terminal state.
    pub fn next_values(&self, f: &ValueFunction) -> Vec<f64> {
        let mut v = vec![0.0; self.num_states + 1];
        if !self.last_layer {
            for (x, slot) in v.iter_mut().take(self.num_states).enumerate() {
                *slot = f.state_value(self.layer + 1, x);
            }
        }
        v
    }

    /// Per-cell `E[Δf 1{z}]` with `Δf = f_h(x, a) - r - max_a' f_{h+1}(x', a')`.
    ///
    /// The residual statistic for a weight `w` is then
    /// `sum_z w(z) e(z) - alpha * sum_z P[z] w(z)^2`.
    pub fn residual_moments(&self, fh: &[f64], next_values: &[f64]) -> Vec<f64> {
        let succ = self.num_states + 1;
        (0..self.mass.len())
            .map(|z| {
                if self.mass[z] == 0.0 {
                    return 0.0;
                }
                let row = z * succ..(z + 1) * succ;
                let r: f64 = self.reward_next[row.clone()].iter().sum();
                let v: f64 = self.next[row].iter().zip(next_values).map(|(p, nv)| p * nv).sum();
                self.mass[z] * fh[z] - r - v
            })
            .collect()
    }

    /// `E[w Δf] - alpha E[w^2]` for an evaluated weight layer.
    pub fn residual_statistic(&self, moments: &[f64], w: &[f64], alpha: f64) -> f64 {
        let mut linear = 0.0;
        let mut quad = 0.0;
        for ((&e, &m), &wv) in moments.iter().zip(&self.mass).zip(w) {
            if m == 0.0 {
                continue;
            }
            linear += wv * e;
            quad += m * wv * wv;
        }
        linear - alpha * quad
    }

    /// `E[w Δf]` and `E[w^2]` separately.
    pub fn weighted_moments(&self, moments: &[f64], w: &[f64]) -> (f64, f64) {
        let mut linear = 0.0;
        let mut quad = 0.0;
        for ((&e, &m), &wv) in moments.iter().zip(&self.mass).zip(w) {
            if m == 0.0 {
                continue;
            }
            linear += wv * e;
            quad += m * wv * wv;
        }
        (linear, quad)
    }

    /// `E[(g(x, a) - r - v(x'))^2]` for a candidate layer slice `g`.
    pub fn squared_loss(&self, g: &[f64], next_values: &[f64]) -> f64 {
        let succ = self.num_states + 1;
        let mut total: f64 = self.reward_sq.iter().sum();
        for z in 0..self.mass.len() {
            if self.mass[z] == 0.0 {
                continue;
            }
            for x2 in 0..succ {
                let p = self.next[z * succ + x2];
                if p == 0.0 {
                    continue;
                }
                let gap = g[z] - next_values[x2];
                total += p * gap * gap - 2.0 * gap * self.reward_next[z * succ + x2];
            }
        }
        total
    }

    /// `E[max_a f_h(x, a)]` under the state marginal of this layer.
    pub fn state_value_mean(&self, f: &ValueFunction) -> f64 {
        let a = self.num_actions;
        (0..self.num_states)
            .map(|x| {
                let px: f64 = self.mass[x * a..(x + 1) * a].iter().sum();
                if px == 0.0 {
                    0.0
                } else {
                    px * f.state_value(self.layer, x)
                }
            })
            .sum()
    }
}

/// What an estimator averages over.
#[derive(Debug, Clone, Copy)]
pub enum Evidence<'a> {
    /// Empirical means over a finite dataset.
    Sampled(&'a LayeredDataset),
    /// Exact expectations under `distribution` and the true model; sample-size
    /// dependent schedules use `nominal_size`.
    Exact {
        mdp: &'a TabularMdp,
        distribution: &'a Occupancy,
        nominal_size: usize,
    },
}

impl Evidence<'_> {
    pub fn horizon(&self) -> usize {
        match self {
            Evidence::Sampled(d) => d.horizon(),
            Evidence::Exact { mdp, .. } => mdp.horizon(),
        }
    }

    pub fn summary(&self, h: usize) -> Result<LayerSummary> {
        match self {
            Evidence::Sampled(d) => d.summary(h),
            Evidence::Exact { mdp, distribution, .. } => LayerSummary::exact(mdp, distribution, h),
        }
    }

    /// Number of samples per layer (minimum over layers for datasets).
    pub fn size(&self) -> usize {
        match self {
            Evidence::Sampled(d) => d.min_layer_len(),
            Evidence::Exact { nominal_size, .. } => *nominal_size,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.size() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::combination_lock;
    use crate::mdp::{q_star, RewardDist};

    fn tr(state: usize, action: usize, reward: f64, next_state: usize) -> Transition {
        Transition {
            state,
            action,
            reward,
            next_state,
        }
    }

    #[test]
    fn residual_statistic_by_hand() {
        // One layer, 2 states, 1 action, f = (0.6, 0.2), so Δf = f(x) - r.
        let f = ValueFunction::from_values(2, 1, 1, vec![0.6, 0.2]).unwrap();
        let mut ds = LayeredDataset::new(2, 1, 1);
        let online = Provenance::Online { iteration: 1, trajectory: 1 };
        ds.push(0, tr(0, 0, 1.0, 2), online).unwrap();
        ds.push(0, tr(0, 0, 0.0, 2), online).unwrap();
        ds.push(0, tr(1, 0, 0.5, 2), online).unwrap();
        let s = ds.summary(0).unwrap();
        let e = s.residual_moments(f.layer(0), &s.next_values(&f));
        let w = [2.0, 1.0];
        // Δ = (-0.4, 0.6, -0.3); w = (2, 2, 1); mean(Δw) = (-0.8 + 1.2 - 0.3)/3.
        // mean(w^2) = (4 + 4 + 1)/3 = 3; alpha = 0.5.
        let expect = 0.1 / 3.0 - 0.5 * 3.0;
        assert!((s.residual_statistic(&e, &w, 0.5) - expect).abs() < 1e-15);
        assert_eq!(s.residual_statistic(&e, &[0.0, 0.0], 0.5), 0.0);
        // Squared loss: (0.16 + 0.36 + 0.09)/3.
        assert!((s.squared_loss(f.layer(0), &s.next_values(&f)) - 0.61 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn exact_summary_kills_qstar_residuals() {
        let mdp = combination_lock(2, &[1, 0, 1]).unwrap();
        let q = q_star(&mdp);
        let mu = Occupancy::uniform(2, 2, 3);
        for h in 0..3 {
            let s = LayerSummary::exact(&mdp, &mu, h).unwrap();
            let e = s.residual_moments(q.layer(h), &s.next_values(&q));
            assert!(e.iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn exact_squared_loss_includes_reward_variance() {
        let mdp = TabularMdp::new(1, 1, 1, vec![1.0], vec![RewardDist::bernoulli(1.0, 0.5)], vec![1.0]).unwrap();
        let mu = Occupancy::uniform(1, 1, 1);
        let s = LayerSummary::exact(&mdp, &mu, 0).unwrap();
        assert!((s.squared_loss(&[0.5], &[0.0, 0.0]) - 0.25).abs() < 1e-15);
        assert!((s.squared_loss(&[0.0], &[0.0, 0.0]) - 0.5).abs() < 1e-15);
    }
}
