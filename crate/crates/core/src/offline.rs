//! Offline estimation: dataset sampling, three solvers, and the
//! clipped-concentrability risk certificate.
//!
//! All solvers enumerate their class exhaustively and break ties toward the
//! lowest index.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::classes::{ValueClass, WeightFunction};
use crate::coverage::{clipped_concentrability_of, occupancy, Occupancy, OccupancyTag};
use crate::data::{Evidence, LayerSummary, LayeredDataset, Provenance};
use crate::math::{argmax, argmin, ln, sample_index};
use crate::mdp::{greedy_policy, j_value, optimal_policy, q_star, Policy, TabularMdp, Transition, ValueFunction};
use crate::{Error, Result};

/// Per-layer distribution over `(x, a)` that offline tuples are drawn from.
pub type DataDistribution = Occupancy;

/// The occupancy of `pi` as a data distribution.
pub fn data_from_policy(mdp: &TabularMdp, pi: &Policy) -> DataDistribution {
    occupancy(mdp, pi).with_tag(OccupancyTag::Explicit)
}

/// Uniform over the `(x, a)` cells whose state some policy can reach.
pub fn uniform_over_reachable(mdp: &TabularMdp) -> DataDistribution {
    let (s, a, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut reach: Vec<bool> = mdp.initial_dist().iter().map(|&p| p > 0.0).collect();
    let mut mass = Vec::with_capacity(s * a * horizon);
    for h in 0..horizon {
        let count = reach.iter().filter(|&&r| r).count() * a;
        for x in 0..s {
            for _ in 0..a {
                mass.push(if reach[x] { 1.0 / count as f64 } else { 0.0 });
            }
        }
        if h + 1 < horizon {
            let mut next = vec![false; s];
            for x in (0..s).filter(|&x| reach[x]) {
                for act in 0..a {
                    for (x2, &p) in mdp.transition(h, x, act).iter().enumerate() {
                        next[x2] |= p > 0.0;
                    }
                }
            }
            reach = next;
        }
    }
    Occupancy::new(s, a, horizon, mass).expect("normalized by construction")
}

/// Draws `n` tuples per layer: `(x, a) ~ mu_h`, `r ~ R_h`, `x' ~ P_h`.
///
/// Tuples are generated index-major (index `i` for every layer before `i + 1`),
/// so a length-`t` prefix of each layer is itself an i.i.d. sample.
pub fn sample_offline<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    mu: &DataDistribution,
    n: usize,
    source: usize,
    rng: &mut R,
) -> Result<LayeredDataset> {
    if n == 0 {
        return Err(Error::InvalidConfig("offline sample size must be positive".into()));
    }
    if !mu.fits(mdp) {
        return Err(Error::ShapeMismatch("data distribution does not fit the MDP"));
    }
    let a_n = mdp.num_actions();
    let mut data = LayeredDataset::for_mdp(mdp);
    for index in 0..n {
        for h in 0..mdp.horizon() {
            let z = sample_index(mu.layer(h), rng.gen());
            let (x, a) = (z / a_n, z % a_n);
            let reward = mdp.reward(h, x, a).sample(rng);
            let next_state = if h + 1 == mdp.horizon() {
                mdp.terminal_state()
            } else {
                sample_index(mdp.transition(h, x, a), rng.gen())
            };
            data.push(
                h,
                Transition {
                    state: x,
                    action: a,
                    reward,
                    next_state,
                },
                Provenance::Offline { source, index },
            )?;
        }
    }
    Ok(data)
}

/// Which analysis a [`CcBound`] comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CcSource {
    MaboCr,
    Fqi,
    Mle,
    Custom,
}

/// Risk bound `sum_h (a/n) (CC_h(pi*) + E_p CC_h(pi^)) + b` at clip scale `gamma n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcBound {
    pub gamma: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
    pub source: CcSource,
}

impl CcBound {
    /// `a = 40 / gamma`, `b = 56 H^2 gamma ln(24 |F| |W| H^2 / delta)`.
    pub fn mabo_cr(gamma: f64, horizon: usize, log_f: f64, log_w: f64, delta: f64) -> Self {
        let h = horizon as f64;
        let log = ln(24.0) + log_f + log_w + 2.0 * ln(h) - ln(delta);
        Self::factored(gamma, 40.0, 56.0 * h * h * log, CcSource::MaboCr)
    }

    /// `a = 2 / gamma`, `b = 2048 ln(2 |F| H) gamma`.
    pub fn fqi(gamma: f64, horizon: usize, log_f: f64) -> Self {
        let log = ln(2.0) + log_f + ln(horizon as f64);
        Self::factored(gamma, 2.0, 2048.0 * log, CcSource::Fqi)
    }

    /// `a = 6 / gamma`, `b = 8 ln(|M| H / delta) gamma`.
    pub fn mle(gamma: f64, horizon: usize, log_m: f64, delta: f64) -> Self {
        let log = log_m + ln(horizon as f64) - ln(delta);
        Self::factored(gamma, 6.0, 8.0 * log, CcSource::Mle)
    }

    /// `a_gamma = a / gamma`, `b_gamma = b gamma`.
    pub fn factored(gamma: f64, a: f64, b: f64, source: CcSource) -> Self {
        Self {
            gamma,
            a_gamma: a / gamma,
            b_gamma: b * gamma,
            source,
        }
    }
}

/// Ordered finite class of candidate models sharing sizes and `d_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelClass {
    members: Vec<TabularMdp>,
    truth_index: Option<usize>,
}

impl ModelClass {
    pub fn new(members: Vec<TabularMdp>) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("model class"))?;
        if members
            .iter()
            .any(|m| !m.same_shape(first) || m.initial_dist() != first.initial_dist())
        {
            return Err(Error::ShapeMismatch("models differ in sizes or initial distribution"));
        }
        Ok(Self {
            members,
            truth_index: None,
        })
    }

    /// `others` with the true model inserted at `position`.
    pub fn with_truth(truth: TabularMdp, mut others: Vec<TabularMdp>, position: usize) -> Result<Self> {
        let position = position.min(others.len());
        others.insert(position, truth);
        let mut class = Self::new(others)?;
        class.truth_index = Some(position);
        Ok(class)
    }

    pub fn members(&self) -> &[TabularMdp] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn truth_index(&self) -> Option<usize> {
        self.truth_index
    }

    pub fn log_size(&self) -> f64 {
        ln(self.members.len() as f64)
    }
}

/// Output of an offline solver.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineSolution {
    /// Selected member (layer 0 for per-layer solvers).
    pub index: usize,
    /// Selected member per layer.
    pub layer_indices: Vec<usize>,
    /// Minimized (or, for MLE, maximized) criterion.
    pub objective: f64,
    /// Per-layer criterion at the selection.
    pub layer_objectives: Vec<f64>,
    pub value: ValueFunction,
    pub policy: Policy,
}

fn summaries(evidence: &Evidence<'_>) -> Result<Vec<LayerSummary>> {
    if evidence.is_empty() {
        return Err(Error::Empty("offline dataset"));
    }
    (0..evidence.horizon()).map(|h| evidence.summary(h)).collect()
}

/// Per-layer `(E[w Δf], E[w^2])` of every weight for one value function.
fn weight_moments(sums: &[LayerSummary], f: &ValueFunction, evaluated: &[Vec<Vec<f64>>]) -> Vec<Vec<(f64, f64)>> {
    let moments: Vec<Vec<f64>> = sums
        .iter()
        .map(|s| s.residual_moments(f.layer(s.layer()), &s.next_values(f)))
        .collect();
    evaluated
        .iter()
        .map(|layers| {
            layers
                .iter()
                .zip(sums.iter().zip(&moments))
                .map(|(w, (s, e))| s.weighted_moments(e, w))
                .collect()
        })
        .collect()
}

/// MABO.CR objective `max_w sum_h |Ê[w_h Δf]| - alpha Ê[w_h^2]` of every member,
/// with weights clipped at `gamma n` and `alpha = 8 / (gamma n)`.
pub fn mabo_objectives(evidence: &Evidence<'_>, class: &ValueClass, weights: &[WeightFunction], gamma_n: f64) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::Empty("weight class"));
    }
    let sums = summaries(evidence)?;
    let alpha = 8.0 / gamma_n;
    let evaluated: Vec<Vec<Vec<f64>>> = weights
        .iter()
        .map(|w| sums.iter().map(|s| w.eval_layer(s.layer(), gamma_n)).collect())
        .collect();
    Ok(class
        .members()
        .iter()
        .map(|f| {
            weight_moments(&sums, f, &evaluated)
                .iter()
                .map(|layers| layers.iter().map(|&(lin, quad)| lin.abs() - alpha * quad).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect())
}

/// MABO.CR at the sample-size scale `gamma^(n) = gamma n`.
pub fn mabo_cr(evidence: &Evidence<'_>, class: &ValueClass, weights: &[WeightFunction], gamma: f64) -> Result<OfflineSolution> {
    let n = evidence.size();
    mabo_cr_scaled(evidence, class, weights, gamma * n as f64)
}

/// MABO.CR at an explicit clip scale.
pub fn mabo_cr_scaled(evidence: &Evidence<'_>, class: &ValueClass, weights: &[WeightFunction], gamma_n: f64) -> Result<OfflineSolution> {
    if !(gamma_n > 0.0) {
        return Err(Error::InvalidConfig(format!("clip scale {gamma_n} must be positive")));
    }
    let objectives = mabo_objectives(evidence, class, weights, gamma_n)?;
    let index = argmin(&objectives).expect("nonempty class");
    let value = class.members()[index].clone();
    Ok(OfflineSolution {
        index,
        layer_indices: vec![index; value.horizon()],
        objective: objectives[index],
        layer_objectives: Vec::new(),
        policy: greedy_policy(&value),
        value,
    })
}

/// Fitted Q-iteration over the layer slices of `class`.
pub fn fqi(evidence: &Evidence<'_>, class: &ValueClass) -> Result<OfflineSolution> {
    let sums = summaries(evidence)?;
    let first = &class.members()[0];
    let horizon = first.horizon();
    let mut value = ValueFunction::zeros(first.num_states(), first.num_actions(), horizon);
    let mut layer_indices = vec![0; horizon];
    let mut layer_objectives = vec![0.0; horizon];
    for h in (0..horizon).rev() {
        let s = &sums[h];
        let next = s.next_values(&value);
        let losses: Vec<f64> = class.members().iter().map(|f| s.squared_loss(f.layer(h), &next)).collect();
        let i = argmin(&losses).expect("nonempty class");
        layer_indices[h] = i;
        layer_objectives[h] = losses[i];
        value.layer_mut(h).copy_from_slice(class.members()[i].layer(h));
    }
    Ok(OfflineSolution {
        index: layer_indices[0],
        objective: layer_objectives.iter().sum(),
        layer_indices,
        layer_objectives,
        policy: greedy_policy(&value),
        value,
    })
}

/// Log-likelihood of layer `h` under `model`, averaged per tuple; `-inf` when a
/// tuple has zero probability.
pub fn layer_log_likelihood(evidence: &Evidence<'_>, model: &TabularMdp, h: usize) -> Result<f64> {
    match evidence {
        Evidence::Sampled(data) => {
            let samples = data.layer(h);
            if samples.is_empty() {
                return Err(Error::Empty("dataset layer"));
            }
            let mut total = 0.0;
            for s in samples {
                let t = &s.transition;
                let pr = model.reward(h, t.state, t.action).prob_of(t.reward);
                let pn = model.next_state_prob(h, t.state, t.action, t.next_state);
                if pr <= 0.0 || pn <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                total += ln(pr) + ln(pn);
            }
            Ok(total / samples.len() as f64)
        }
        Evidence::Exact { mdp, distribution, .. } => {
            let (s, a) = (mdp.num_states(), mdp.num_actions());
            let mut total = 0.0;
            for x in 0..s {
                for act in 0..a {
                    let m = distribution.get(h, x, act);
                    if m == 0.0 {
                        continue;
                    }
                    for atom in mdp.reward(h, x, act).atoms() {
                        if atom.prob == 0.0 {
                            continue;
                        }
                        let q = model.reward(h, x, act).prob_of(atom.value);
                        if q <= 0.0 {
                            return Ok(f64::NEG_INFINITY);
                        }
                        total += m * atom.prob * ln(q);
                    }
                    for x2 in 0..=s {
                        let p = mdp.next_state_prob(h, x, act, x2);
                        if p == 0.0 {
                            continue;
                        }
                        let q = model.next_state_prob(h, x, act, x2);
                        if q <= 0.0 {
                            return Ok(f64::NEG_INFINITY);
                        }
                        total += m * p * ln(q);
                    }
                }
            }
            Ok(total)
        }
    }
}

/// Per-layer maximum likelihood over `models`; the output model splices the
/// winners and the policy is optimal for it.
pub fn mle_model(evidence: &Evidence<'_>, models: &ModelClass) -> Result<(TabularMdp, OfflineSolution)> {
    if evidence.is_empty() {
        return Err(Error::Empty("offline dataset"));
    }
    let horizon = models.members()[0].horizon();
    let mut layer_indices = Vec::with_capacity(horizon);
    let mut layer_objectives = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let ll = models
            .members()
            .iter()
            .map(|m| layer_log_likelihood(evidence, m, h))
            .collect::<Result<Vec<f64>>>()?;
        let i = argmax(&ll).expect("nonempty class");
        if ll[i] == f64::NEG_INFINITY {
            return Err(Error::Unsupported { layer: h });
        }
        layer_indices.push(i);
        layer_objectives.push(ll[i]);
    }
    let sources: Vec<&TabularMdp> = layer_indices.iter().map(|&i| &models.members()[i]).collect();
    let model = TabularMdp::splice(&sources)?;
    let value = q_star(&model);
    let policy = greedy_policy(&value);
    Ok((
        model,
        OfflineSolution {
            index: layer_indices[0],
            objective: layer_objectives.iter().sum(),
            layer_indices,
            layer_objectives,
            value,
            policy,
        },
    ))
}

/// Both sides of the clipped-concentrability risk bound.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    /// `J(pi*) - E_p J(pi)`.
    pub risk: f64,
    /// `sum_h (a/n)(CC_h(pi*) + E_p CC_h(pi))`.
    pub coverage_term: f64,
    pub additive_term: f64,
    pub bound: f64,
    pub holds: bool,
    /// `bound - risk`.
    pub slack: f64,
    /// `CC_h(pi*; mu; gamma n)` per layer.
    pub cc_star: Vec<f64>,
    /// `E_p CC_h(pi; mu; gamma n)` per layer.
    pub cc_output: Vec<f64>,
}

/// Evaluates the bound for the output distribution `p` (weights must sum to 1).
pub fn cc_certificate(
    mdp: &TabularMdp,
    output: &[(f64, Policy)],
    mu: &DataDistribution,
    n: usize,
    bound: &CcBound,
) -> Result<CertificateReport> {
    if output.is_empty() {
        return Err(Error::Empty("output distribution"));
    }
    if n == 0 {
        return Err(Error::InvalidConfig("certificate needs n >= 1".into()));
    }
    if !mu.fits(mdp) {
        return Err(Error::ShapeMismatch("data distribution does not fit the MDP"));
    }
    let pi_star = optimal_policy(mdp);
    let j_star = j_value(mdp, &pi_star);
    let scale = bound.gamma * n as f64;
    let d_star = occupancy(mdp, &pi_star);
    let horizon = mdp.horizon();
    let cc_star: Vec<f64> = (0..horizon).map(|h| clipped_concentrability_of(&d_star, mu, scale, h)).collect();
    let mut cc_output = vec![0.0; horizon];
    let mut risk = j_star;
    for (p, pi) in output {
        let d = occupancy(mdp, pi);
        risk -= p * j_value(mdp, pi);
        for (h, slot) in cc_output.iter_mut().enumerate() {
            *slot += p * clipped_concentrability_of(&d, mu, scale, h);
        }
    }
    let coverage_term: f64 = cc_star
        .iter()
        .zip(&cc_output)
        .map(|(a, b)| bound.a_gamma / n as f64 * (a + b))
        .sum();
    let total = coverage_term + bound.b_gamma;
    Ok(CertificateReport {
        risk,
        coverage_term,
        additive_term: bound.b_gamma,
        bound: total,
        holds: risk <= total,
        slack: total - risk,
        cc_star,
        cc_output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::combination_lock;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reachable_uniform_skips_unreachable_states() {
        let mdp = combination_lock(2, &[0, 1]).unwrap();
        let mu = uniform_over_reachable(&mdp);
        assert_eq!(mu.layer(0), &[0.5, 0.5, 0.0, 0.0]);
        assert_eq!(mu.layer(1), &[0.25; 4]);
    }

    #[test]
    fn point_mass_data_shares_cells() {
        let mdp = combination_lock(2, &[0, 1]).unwrap();
        let mu = Occupancy::new(2, 2, 2, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let d = sample_offline(&mdp, &mu, 20, 0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(d.layer(0).iter().all(|s| (s.transition.state, s.transition.action) == (0, 1)));
        assert!(d.layer(1).iter().all(|s| (s.transition.state, s.transition.action) == (1, 1)));
    }

    #[test]
    fn factored_bounds_scale_with_gamma() {
        for g in [0.01, 0.1, 0.5, 1.0] {
            let b = CcBound::mabo_cr(g, 3, 1.0, 2.0, 0.05);
            let b2 = CcBound::mabo_cr(2.0 * g, 3, 1.0, 2.0, 0.05);
            assert!((b.a_gamma * g - 40.0).abs() < 1e-12);
            assert!((b2.b_gamma / (2.0 * g) - b.b_gamma / g).abs() < 1e-9);
        }
    }

    #[test]
    fn optimal_output_has_zero_risk() {
        let mdp = combination_lock(2, &[1, 1]).unwrap();
        let mu = Occupancy::uniform(2, 2, 2);
        let out = vec![(1.0, optimal_policy(&mdp))];
        let r = cc_certificate(&mdp, &out, &mu, 10, &CcBound::factored(0.1, 1.0, 0.0, CcSource::Custom)).unwrap();
        assert_eq!(r.risk, 0.0);
        assert!(r.holds);
        let inf = CcBound::factored(0.1, 0.0, f64::INFINITY, CcSource::Custom);
        let out = vec![(1.0, Policy::uniform(2, 2, 2))];
        assert!(cc_certificate(&mdp, &out, &mu, 10, &inf).unwrap().holds);
    }
}
