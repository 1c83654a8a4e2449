//! Finite value-function and weight-function classes.
//!
//! Weight bases are extended non-negative reals (`+inf` allowed). A weight is
//! only ever used through [`WeightFunction::eval`], which clips the base at the
//! caller's scale, then applies the sign and the layer mask.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::coverage::Occupancy;
use crate::math::{clip, ln, ratio};
use crate::mdp::{backup_layer, q_star, PolicyClass, RewardDist, TabularMdp, ValueFunction};
use crate::{Error, Result};

/// Default cap on the number of tuples the mixture augmentation may enumerate.
pub const DEFAULT_MIXTURE_BUDGET: u128 = 1_000_000;

/// Ordered finite class `F` of value functions.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueClass {
    members: Vec<ValueFunction>,
    nominal_log_size: f64,
    qstar_index: Option<usize>,
}

impl ValueClass {
    /// Class with `log |F|` taken from the member count.
    pub fn new(members: Vec<ValueFunction>) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("value class"))?;
        let (s, a, h) = (first.num_states(), first.num_actions(), first.horizon());
        if members
            .iter()
            .any(|f| f.num_states() != s || f.num_actions() != a || f.horizon() != h)
        {
            return Err(Error::ShapeMismatch("value class members differ in shape"));
        }
        let nominal_log_size = ln(members.len() as f64);
        Ok(Self {
            members,
            nominal_log_size,
            qstar_index: None,
        })
    }

    /// `{Q*} ∪ others`, with `Q*` first unless `shuffle` is set.
    pub fn with_qstar<R: Rng + ?Sized>(
        qstar: ValueFunction,
        others: Vec<ValueFunction>,
        shuffle: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut members = Vec::with_capacity(others.len() + 1);
        members.push(qstar);
        members.extend(others);
        let mut order: Vec<usize> = (0..members.len()).collect();
        if shuffle {
            order.shuffle(rng);
        }
        let qstar_index = order.iter().position(|&i| i == 0);
        let mut slots: Vec<Option<ValueFunction>> = members.into_iter().map(Some).collect();
        let members = order.iter().map(|&i| slots[i].take().expect("permutation")).collect();
        let mut class = Self::new(members)?;
        class.qstar_index = qstar_index;
        Ok(class)
    }

    pub fn with_nominal_log_size(mut self, log_size: f64) -> Self {
        self.nominal_log_size = log_size;
        self
    }

    /// Records where `Q*` sits, for diagnostics only.
    pub fn with_qstar_index(mut self, index: Option<usize>) -> Self {
        self.qstar_index = index;
        self
    }

    /// Random reordering; the `Q*` index follows its member.
    pub fn shuffled<R: Rng + ?Sized>(mut self, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..self.members.len()).collect();
        order.shuffle(rng);
        let mut slots: Vec<Option<ValueFunction>> = self.members.into_iter().map(Some).collect();
        self.members = order.iter().map(|&i| slots[i].take().expect("permutation")).collect();
        self.qstar_index = self.qstar_index.and_then(|q| order.iter().position(|&i| i == q));
        self
    }

    pub fn members(&self) -> &[ValueFunction] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn nominal_log_size(&self) -> f64 {
        self.nominal_log_size
    }

    pub fn qstar_index(&self) -> Option<usize> {
        self.qstar_index
    }

    /// The induced policy class `{pi_f : f in F}`.
    pub fn policy_class(&self) -> PolicyClass {
        PolicyClass::induced(&self.members).expect("value class is nonempty")
    }
}

/// `{Q*}` plus `extras` tables perturbed entrywise by `U(-0.5, 0.5)` and clamped
/// to `[0, 1]`.
pub fn tabular_value_class<R: Rng + ?Sized>(mdp: &TabularMdp, extras: usize, shuffle: bool, rng: &mut R) -> ValueClass {
    let qs = q_star(mdp);
    let others = (0..extras)
        .map(|_| {
            let values = qs
                .values()
                .iter()
                .map(|&v| (v + rng.gen::<f64>() - 0.5).clamp(0.0, 1.0))
                .collect();
            ValueFunction::from_values(qs.num_states(), qs.num_actions(), qs.horizon(), values).expect("same shape")
        })
        .collect();
    ValueClass::with_qstar(qs, others, shuffle, rng).expect("nonempty")
}

/// `Q*` of `mdp` with every reward from layer `depth` on replaced by zero.
///
/// These tables are Bellman-consistent along any path that never collects
/// reward past `depth`, so data from their own greedy policies cannot refute
/// them.
pub fn truncated_qstar(mdp: &TabularMdp, depth: usize) -> ValueFunction {
    let per_layer = mdp.num_states() * mdp.num_actions();
    let rewards = mdp
        .rewards()
        .iter()
        .enumerate()
        .map(|(i, r)| if i / per_layer >= depth { RewardDist::deterministic(0.0) } else { r.clone() })
        .collect();
    let cut = TabularMdp::new(
        mdp.num_states(),
        mdp.num_actions(),
        mdp.horizon(),
        mdp.transitions().to_vec(),
        rewards,
        mdp.initial_dist().to_vec(),
    )
    .expect("same dynamics");
    q_star(&cut)
}

/// `{Q*}` plus the reward truncations at every depth `0..H`, deduplicated.
pub fn truncated_value_class<R: Rng + ?Sized>(mdp: &TabularMdp, shuffle: bool, rng: &mut R) -> ValueClass {
    let qs = q_star(mdp);
    let mut others: Vec<ValueFunction> = Vec::new();
    for depth in 0..mdp.horizon() {
        let f = truncated_qstar(mdp, depth);
        if f != qs && !others.contains(&f) {
            others.push(f);
        }
    }
    ValueClass::with_qstar(qs, others, shuffle, rng).expect("nonempty")
}

/// A Bellman-complete class: the layer-`h` slices are closed under the backup
/// of the layer-`h+1` slices, and member 0 is `Q*`.
///
/// Each layer gains `extras` random slices with entries in `[0, (H-h)/H]`; the
/// slices are then packed into members, padding short layers with their last
/// slice.
pub fn complete_value_class<R: Rng + ?Sized>(mdp: &TabularMdp, extras: usize, rng: &mut R) -> ValueClass {
    let (s, a, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut slices: Vec<Vec<Vec<f64>>> = vec![Vec::new(); horizon];
    let mut next_values: Vec<Vec<f64>> = vec![vec![0.0; s]];
    for h in (0..horizon).rev() {
        let top = (horizon - h) as f64 / horizon as f64;
        let mut layer: Vec<Vec<f64>> = next_values.iter().map(|v| backup_layer(mdp, h, v)).collect();
        for _ in 0..extras {
            layer.push((0..s * a).map(|_| rng.gen::<f64>() * top).collect());
        }
        next_values = layer
            .iter()
            .map(|slice| {
                (0..s)
                    .map(|x| slice[x * a..(x + 1) * a].iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .collect()
            })
            .collect();
        slices[h] = layer;
    }
    let count = slices.iter().map(Vec::len).max().unwrap_or(1);
    let members = (0..count)
        .map(|i| {
            let mut f = ValueFunction::zeros(s, a, horizon);
            for (h, layer) in slices.iter().enumerate() {
                f.layer_mut(h).copy_from_slice(&layer[i.min(layer.len() - 1)]);
            }
            f
        })
        .collect();
    ValueClass::new(members).expect("nonempty").with_qstar_index(Some(0))
}

/// Layered weight table with sign and optional active layer.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFunction {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    base: Vec<f64>,
    sign: f64,
    mask: Option<usize>,
}

impl WeightFunction {
    /// Unsigned, unmasked weight; entries must be `>= 0` or `+inf`.
    pub fn new(num_states: usize, num_actions: usize, horizon: usize, base: Vec<f64>) -> Result<Self> {
        if base.len() != num_states * num_actions * horizon {
            return Err(Error::ShapeMismatch("weight table"));
        }
        if base.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidModel("weight entries must be nonnegative".into()));
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            base,
            sign: 1.0,
            mask: None,
        })
    }

    pub fn constant(num_states: usize, num_actions: usize, horizon: usize, value: f64) -> Self {
        Self::new(num_states, num_actions, horizon, vec![value; num_states * num_actions * horizon])
            .expect("valid constant weight")
    }

    pub fn with_sign(mut self, negative: bool) -> Self {
        self.sign = if negative { -1.0 } else { 1.0 };
        self
    }

    pub fn with_mask(mut self, layer: Option<usize>) -> Self {
        self.mask = layer;
        self
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

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn base_layer(&self, h: usize) -> &[f64] {
        let n = self.num_states * self.num_actions;
        &self.base[h * n..(h + 1) * n]
    }

    pub fn is_negative(&self) -> bool {
        self.sign < 0.0
    }

    pub fn mask(&self) -> Option<usize> {
        self.mask
    }

    pub fn active(&self, h: usize) -> bool {
        self.mask.map_or(true, |m| m == h)
    }

    /// `sign * clip(base_h(x, a), gamma) * 1{h active}`.
    #[inline]
    pub fn eval(&self, h: usize, x: usize, a: usize, gamma: f64) -> f64 {
        if !self.active(h) {
            return 0.0;
        }
        self.sign * clip(self.base[(h * self.num_states + x) * self.num_actions + a], gamma)
    }

    /// Evaluated layer `h` as an `S * A` vector.
    pub fn eval_layer(&self, h: usize, gamma: f64) -> Vec<f64> {
        if !self.active(h) {
            return vec![0.0; self.num_states * self.num_actions];
        }
        self.base_layer(h).iter().map(|&w| self.sign * clip(w, gamma)).collect()
    }

    fn same_shape(&self, other: &WeightFunction) -> bool {
        self.num_states == other.num_states && self.num_actions == other.num_actions && self.horizon == other.horizon
    }
}

/// How a weight class produces its members.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightMode {
    /// Explicit list.
    Static(Vec<WeightFunction>),
    /// Density ratios `d^pi / rho` computed on demand from the exact
    /// occupancies of a policy class (in class order). `signed` requests the
    /// signed, layer-masked closure of every materialized set.
    Oracle { occupancies: Vec<Occupancy>, signed: bool },
}

/// Finite weight class `W` with the `log |W|` used by schedules.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightClass {
    mode: WeightMode,
    nominal_log_size: f64,
}

impl WeightClass {
    pub fn from_static(members: Vec<WeightFunction>) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("weight class"))?;
        if members.iter().any(|w| !w.same_shape(first)) {
            return Err(Error::ShapeMismatch("weight class members differ in shape"));
        }
        let nominal_log_size = ln(members.len() as f64);
        Ok(Self {
            mode: WeightMode::Static(members),
            nominal_log_size,
        })
    }

    /// Oracle class over `pi_class`; `log |W|` is `ln(|Pi| * iterations)`,
    /// one ratio per policy and per reference the run will use.
    pub fn oracle(mdp: &TabularMdp, pi_class: &PolicyClass, iterations: usize) -> Self {
        let occupancies: Vec<Occupancy> = pi_class
            .policies()
            .iter()
            .map(|p| crate::coverage::occupancy(mdp, p))
            .collect();
        let nominal_log_size = ln((occupancies.len() * iterations.max(1)) as f64);
        Self {
            mode: WeightMode::Oracle {
                occupancies,
                signed: false,
            },
            nominal_log_size,
        }
    }

    pub fn with_nominal_log_size(mut self, log_size: f64) -> Self {
        self.nominal_log_size = log_size;
        self
    }

    pub fn mode(&self) -> &WeightMode {
        &self.mode
    }

    pub fn nominal_log_size(&self) -> f64 {
        self.nominal_log_size
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self.mode, WeightMode::Oracle { .. })
    }

    pub fn static_members(&self) -> Option<&[WeightFunction]> {
        match &self.mode {
            WeightMode::Static(m) => Some(m),
            WeightMode::Oracle { .. } => None,
        }
    }

    /// Materializes the members for reference distribution `rho`: static
    /// members as stored, oracle members as unclipped `d^pi / rho` (plus the
    /// signed closure when requested).
    pub fn materialize(&self, rho: &Occupancy) -> Vec<WeightFunction> {
        match &self.mode {
            WeightMode::Static(m) => m.clone(),
            WeightMode::Oracle { occupancies, signed } => {
                let raw: Vec<WeightFunction> = occupancies.iter().map(|d| ratio_weight(d, rho)).collect();
                if *signed {
                    signed_closure(&raw)
                } else {
                    raw
                }
            }
        }
    }
}

/// Unclipped `d / rho` as a weight.
pub fn ratio_weight(d: &Occupancy, rho: &Occupancy) -> WeightFunction {
    let base = d.mass().iter().zip(rho.mass()).map(|(&p, &q)| ratio(p, q)).collect();
    WeightFunction::new(d.num_states(), d.num_actions(), d.horizon(), base).expect("ratios are nonnegative")
}

/// `clip(d^pi_h / rho_h, gamma_t)` for every `pi` in `pi_class`, in class order.
pub fn oracle_weights(mdp: &TabularMdp, pi_class: &PolicyClass, rho: &Occupancy, gamma_t: f64) -> Result<Vec<WeightFunction>> {
    if gamma_t <= 0.0 {
        return Err(Error::InvalidConfig("clip scale must be positive".into()));
    }
    if !rho.fits(mdp) {
        return Err(Error::ShapeMismatch("reference occupancy does not fit the MDP"));
    }
    Ok(pi_class
        .policies()
        .iter()
        .map(|p| {
            let d = crate::coverage::occupancy(mdp, p);
            let base = d.mass().iter().zip(rho.mass()).map(|(&p, &q)| clip(ratio(p, q), gamma_t)).collect();
            WeightFunction::new(d.num_states(), d.num_actions(), d.horizon(), base).expect("clipped ratios")
        })
        .collect())
}

/// Ratios against the prospective history mixture: for each candidate `pi`,
/// `d^pi / ((past_sum + d^pi) / t)` where `past_sum` adds the occupancies of the
/// `t - 1` policies already played.
///
/// The weight of whichever policy is played at round `t` is therefore exactly
/// `d^{pi_t} / dbar^{t+1}`.
pub fn prospective_weights(occupancies: &[Occupancy], past_sum: &[f64], t: usize) -> Vec<WeightFunction> {
    let scale = t as f64;
    occupancies
        .iter()
        .map(|d| {
            let base = d
                .mass()
                .iter()
                .zip(past_sum)
                .map(|(&p, &s)| ratio(p, (s + p) / scale))
                .collect();
            WeightFunction::new(d.num_states(), d.num_actions(), d.horizon(), base).expect("ratios are nonnegative")
        })
        .collect()
}

/// Number of ordered tuples `sum_{t <= T} |W|^t` the mixture augmentation visits.
pub fn mixture_candidate_count(size: usize, rounds: usize) -> u128 {
    let mut total: u128 = 0;
    let mut power: u128 = 1;
    for _ in 0..rounds {
        power = power.saturating_mul(size as u128);
        total = total.saturating_add(power);
    }
    total
}

/// `Mixture(w^1..w^t; t)_h = 1 / mean_s w^s_h` over every tuple of length at most
/// `rounds`, exact duplicates removed (first occurrence kept).
pub fn mixture_augment(w: &WeightClass, rounds: usize, budget: u128) -> Result<WeightClass> {
    let members = w
        .static_members()
        .ok_or(Error::InvalidConfig("mixture augmentation needs a static weight class".into()))?;
    if rounds == 0 {
        return Err(Error::InvalidConfig("mixture augmentation needs at least one round".into()));
    }
    let required = mixture_candidate_count(members.len(), rounds);
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    let first = &members[0];
    let len = first.base.len();
    let mut out: Vec<WeightFunction> = Vec::new();
    let mut tuple: Vec<usize> = Vec::new();
    for t in 1..=rounds {
        tuple.clear();
        tuple.resize(t, 0);
        loop {
            let mut sum = vec![0.0; len];
            for &i in &tuple {
                for (s, &v) in sum.iter_mut().zip(&members[i].base) {
                    *s += v;
                }
            }
            let base: Vec<f64> = sum.iter().map(|&s| ratio(1.0, s / t as f64)).collect();
            let candidate = WeightFunction::new(first.num_states, first.num_actions, first.horizon, base)?;
            if !out.contains(&candidate) {
                out.push(candidate);
            }
            if !advance(&mut tuple, members.len()) {
                break;
            }
        }
    }
    let log_size = rounds as f64 * ln(2.0 * members.len() as f64);
    Ok(WeightClass::from_static(out)?.with_nominal_log_size(log_size))
}

fn advance(tuple: &mut [usize], radix: usize) -> bool {
    for slot in tuple.iter_mut().rev() {
        *slot += 1;
        if *slot < radix {
            return true;
        }
        *slot = 0;
    }
    false
}

/// `W ∪ -W ∪_h (W^(h) ∪ -W^(h))`, where `W^(h)` keeps only layer `h`.
pub fn mabo_augment(w: &WeightClass) -> Result<WeightClass> {
    match &w.mode {
        WeightMode::Static(members) => {
            let horizon = members[0].horizon;
            let log_size = ln(4.0 * horizon as f64) + w.nominal_log_size;
            Ok(WeightClass {
                mode: WeightMode::Static(signed_closure(members)),
                nominal_log_size: log_size,
            })
        }
        WeightMode::Oracle { occupancies, .. } => {
            let horizon = occupancies[0].horizon();
            Ok(WeightClass {
                mode: WeightMode::Oracle {
                    occupancies: occupancies.clone(),
                    signed: true,
                },
                nominal_log_size: ln(4.0 * horizon as f64) + w.nominal_log_size,
            })
        }
    }
}

/// The signed, layer-masked closure of a list, in the order: each `w`, then
/// `-w`, then per layer `w^(h)` and `-w^(h)`. Size `2 (H + 1) |W|`.
pub fn signed_closure(members: &[WeightFunction]) -> Vec<WeightFunction> {
    let mut out = Vec::with_capacity(members.len() * 2 * (members.first().map_or(0, |w| w.horizon) + 1));
    for w in members {
        let plain = w.clone().with_mask(None).with_sign(false);
        out.push(plain.clone());
        out.push(plain.clone().with_sign(true));
        for h in 0..w.horizon {
            out.push(plain.clone().with_mask(Some(h)));
            out.push(plain.clone().with_mask(Some(h)).with_sign(true));
        }
    }
    out
}
