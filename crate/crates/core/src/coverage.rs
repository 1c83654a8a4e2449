//! Exact occupancy measures and the coverage quantities built on them.
//!
//! Every ratio `d / mu` follows the extended conventions of [`crate::math::ratio`].

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::borrow::Borrow;

use crate::math::{clip, ln, ratio, sqrt};
use crate::mdp::{state_distributions, Policy, PolicyClass, TabularMdp};
use crate::{Error, Result};

/// Tolerance for an occupancy layer summing to one.
pub const LAYER_TOL: f64 = 1e-10;

/// What produced an [`Occupancy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccupancyTag {
    /// The state-action occupancy of a single policy.
    Policy,
    /// Uniform mixture of this many occupancies.
    Mixture(usize),
    /// Coverability distribution `mu*`.
    Coverability,
    /// Supplied directly (e.g. an offline data distribution).
    Explicit,
}

/// Per-layer distributions over `(x, a)`, stored layer-major as `S * A` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    mass: Vec<f64>,
    tag: OccupancyTag,
}

impl Occupancy {
    /// Validates nonnegativity and per-layer normalization.
    pub fn new(num_states: usize, num_actions: usize, horizon: usize, mass: Vec<f64>) -> Result<Self> {
        let cells = num_states * num_actions;
        if cells == 0 || horizon == 0 || mass.len() != cells * horizon {
            return Err(Error::ShapeMismatch("occupancy table"));
        }
        for (h, layer) in mass.chunks(cells).enumerate() {
            let mut total = 0.0;
            for &m in layer {
                if !(m >= 0.0) || !m.is_finite() {
                    return Err(Error::InvalidDistribution(format!("layer {h} has entry {m}")));
                }
                total += m;
            }
            if (total - 1.0).abs() > LAYER_TOL {
                return Err(Error::InvalidDistribution(format!("layer {h} sums to {total}")));
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            mass,
            tag: OccupancyTag::Explicit,
        })
    }

    /// Uniform over all `S * A` cells at every layer.
    pub fn uniform(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        let cells = num_states * num_actions;
        Self {
            num_states,
            num_actions,
            horizon,
            mass: vec![1.0 / cells as f64; cells * horizon],
            tag: OccupancyTag::Explicit,
        }
    }

    pub fn with_tag(mut self, tag: OccupancyTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn tag(&self) -> OccupancyTag {
        self.tag
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

    pub fn cells(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    #[inline]
    pub fn get(&self, h: usize, x: usize, a: usize) -> f64 {
        self.mass[(h * self.num_states + x) * self.num_actions + a]
    }

    /// Layer `h` as an `S * A` slice indexed `x * A + a`.
    pub fn layer(&self, h: usize) -> &[f64] {
        let n = self.cells();
        &self.mass[h * n..(h + 1) * n]
    }

    pub fn same_shape(&self, other: &Occupancy) -> bool {
        self.num_states == other.num_states && self.num_actions == other.num_actions && self.horizon == other.horizon
    }

    pub fn fits(&self, mdp: &TabularMdp) -> bool {
        self.num_states == mdp.num_states() && self.num_actions == mdp.num_actions() && self.horizon == mdp.horizon()
    }

    /// Largest deviation of a layer total from one.
    pub fn normalization_error(&self) -> f64 {
        self.mass
            .chunks(self.cells())
            .map(|l| (l.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Builds an occupancy from trusted arithmetic without re-validation.
    pub(crate) fn from_raw(num_states: usize, num_actions: usize, horizon: usize, mass: Vec<f64>, tag: OccupancyTag) -> Self {
        Self {
            num_states,
            num_actions,
            horizon,
            mass,
            tag,
        }
    }
}

/// `d^pi_h(x, a) = P^pi[x_h = x, a_h = a]` by forward recursion.
pub fn occupancy(mdp: &TabularMdp, pi: &Policy) -> Occupancy {
    let (s, a, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let states = state_distributions(mdp, pi);
    let mut mass = Vec::with_capacity(s * a * horizon);
    for h in 0..horizon {
        for x in 0..s {
            let px = states[h * s + x];
            for act in 0..a {
                mass.push(px * pi.prob(h, x, act));
            }
        }
    }
    Occupancy::from_raw(s, a, horizon, mass, OccupancyTag::Policy)
}

/// Uniform average of occupancies.
pub fn mixture_occupancy<O: Borrow<Occupancy>>(list: &[O]) -> Result<Occupancy> {
    let first = list.first().ok_or(Error::Empty("occupancy list"))?.borrow();
    let mut mass = vec![0.0; first.mass.len()];
    for d in list {
        let d = d.borrow();
        if !d.same_shape(first) {
            return Err(Error::ShapeMismatch("mixed occupancies differ in shape"));
        }
        for (m, v) in mass.iter_mut().zip(&d.mass) {
            *m += v;
        }
    }
    let n = list.len() as f64;
    for m in &mut mass {
        *m /= n;
    }
    Ok(Occupancy::from_raw(
        first.num_states,
        first.num_actions,
        first.horizon,
        mass,
        OccupancyTag::Mixture(list.len()),
    ))
}

/// `‖d_h / mu_h‖_inf` for one layer.
pub fn concentrability_layer(d: &Occupancy, mu: &Occupancy, h: usize) -> f64 {
    d.layer(h)
        .iter()
        .zip(mu.layer(h))
        .map(|(&p, &q)| ratio(p, q))
        .fold(0.0, f64::max)
}

/// `max_h ‖d_h / mu_h‖_inf`, `+inf` when `d` has mass outside `mu`'s support.
pub fn concentrability_inf(d: &Occupancy, mu: &Occupancy) -> Result<f64> {
    if !d.same_shape(mu) {
        return Err(Error::ShapeMismatch("concentrability operands"));
    }
    Ok((0..d.horizon).map(|h| concentrability_layer(d, mu, h)).fold(0.0, f64::max))
}

/// `E_{d_h}[clip(d_h / mu_h, gamma)]` for a given occupancy `d`.
pub fn clipped_concentrability_of(d: &Occupancy, mu: &Occupancy, gamma: f64, h: usize) -> f64 {
    d.layer(h)
        .iter()
        .zip(mu.layer(h))
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * clip(ratio(p, q), gamma))
        .sum()
}

/// Clipped concentrability `C_h(pi; mu; gamma)` of a policy.
pub fn clipped_concentrability(mdp: &TabularMdp, pi: &Policy, mu: &Occupancy, gamma: f64, h: usize) -> Result<f64> {
    if gamma <= 0.0 {
        return Err(Error::InvalidConfig(format!("clip scale {gamma} must be positive")));
    }
    mdp.check_layer(h)?;
    if !mu.fits(mdp) {
        return Err(Error::ShapeMismatch("data distribution does not fit the MDP"));
    }
    Ok(clipped_concentrability_of(&occupancy(mdp, pi), mu, gamma, h))
}

/// `P^pi[d_h / mu_h > gamma]`.
pub fn exceedance_prob(d: &Occupancy, mu: &Occupancy, gamma: f64, h: usize) -> f64 {
    d.layer(h)
        .iter()
        .zip(mu.layer(h))
        .filter(|(&p, &q)| p > 0.0 && ratio(p, q) > gamma)
        .map(|(&p, _)| p)
        .sum()
}

/// `‖clip(d_h / mu_h, gamma)‖^2_{2, mu_h}`.
pub fn clipped_sq_norm(d: &Occupancy, mu: &Occupancy, gamma: f64, h: usize) -> f64 {
    d.layer(h)
        .iter()
        .zip(mu.layer(h))
        .map(|(&p, &q)| {
            let c = clip(ratio(p, q), gamma);
            q * c * c
        })
        .sum()
}

/// Which weighted norm to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormOrder {
    L1,
    L2,
}

/// `E_rho[|u|]` or `sqrt(E_rho[u^2])`.
pub fn weighted_norm(u: &[f64], rho: &[f64], order: NormOrder) -> Result<f64> {
    if u.len() != rho.len() {
        return Err(Error::ShapeMismatch("weighted norm operands"));
    }
    let pairs = u.iter().zip(rho);
    Ok(match order {
        NormOrder::L1 => pairs.map(|(v, p)| p * v.abs()).sum(),
        NormOrder::L2 => sqrt(pairs.map(|(v, p)| p * v * v).sum()),
    })
}

/// Coverability of a finite policy class.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    /// `C_cov = max_h ‖m_h‖_1` with `m_h = max_pi d^pi_h` cellwise.
    pub c_cov: f64,
    /// `‖m_h‖_1` per layer; the best achievable sup-ratio at that layer.
    pub per_layer: Vec<f64>,
    /// `mu*_h = m_h / ‖m_h‖_1`.
    pub mu_star: Occupancy,
    /// `max_h ‖d^pi_h / mu*_h‖_inf` per policy, in class order.
    pub policy_ratios: Vec<f64>,
}

impl CoverageReport {
    /// `sup_pi ‖d^pi / mu*‖_inf`; equals `c_cov` up to rounding.
    pub fn certified_sup(&self) -> f64 {
        self.policy_ratios.iter().copied().fold(0.0, f64::max)
    }
}

/// Coverability of `pi_class` on `mdp` via the max-occupancy construction.
pub fn coverability(mdp: &TabularMdp, pi_class: &PolicyClass) -> Result<CoverageReport> {
    let occs: Vec<Occupancy> = pi_class.policies().iter().map(|p| occupancy(mdp, p)).collect();
    coverability_of(&occs)
}

/// Coverability of an explicit family of occupancies.
pub fn coverability_of<O: Borrow<Occupancy>>(occs: &[O]) -> Result<CoverageReport> {
    let first = occs.first().ok_or(Error::Empty("policy class"))?.borrow();
    let mut m = vec![0.0f64; first.mass.len()];
    for d in occs {
        let d = d.borrow();
        if !d.same_shape(first) {
            return Err(Error::ShapeMismatch("occupancies differ in shape"));
        }
        for (mv, &v) in m.iter_mut().zip(&d.mass) {
            *mv = mv.max(v);
        }
    }
    let cells = first.cells();
    let mut per_layer = Vec::with_capacity(first.horizon);
    for layer in m.chunks_mut(cells) {
        let total: f64 = layer.iter().sum();
        per_layer.push(total);
        for v in layer.iter_mut() {
            *v /= total;
        }
    }
    let mu_star = Occupancy::from_raw(
        first.num_states,
        first.num_actions,
        first.horizon,
        m,
        OccupancyTag::Coverability,
    );
    let policy_ratios = occs
        .iter()
        .map(|d| {
            let d = d.borrow();
            (0..d.horizon).map(|h| concentrability_layer(d, &mu_star, h)).fold(0.0, f64::max)
        })
        .collect();
    Ok(CoverageReport {
        c_cov: per_layer.iter().copied().fold(0.0, f64::max),
        per_layer,
        mu_star,
        policy_ratios,
    })
}

/// `sum_t E_{d^t}[d^t / dsum^{t+1}]` with `dsum^{t+1} = sum_{s <= t} d^s`, over one
/// layer's distributions.
pub fn coverability_potential<L: AsRef<[f64]>>(seq: &[L]) -> f64 {
    let Some(first) = seq.first() else { return 0.0 };
    let mut running = vec![0.0; first.as_ref().len()];
    let mut total = 0.0;
    for d in seq {
        for (r, &v) in running.iter_mut().zip(d.as_ref()) {
            *r += v;
        }
        total += d
            .as_ref()
            .iter()
            .zip(&running)
            .filter(|(&v, _)| v > 0.0)
            .map(|(&v, &r)| v * v / r)
            .sum::<f64>();
    }
    total
}

/// Per-cell sums `sum_t d^t(z) / (sum_{i<t} d^i(z) + C mu(z))`.
pub fn elliptical_sums<L: AsRef<[f64]>>(seq: &[L], mu: &[f64], c: f64) -> Vec<f64> {
    let mut running = vec![0.0; mu.len()];
    let mut sums = vec![0.0; mu.len()];
    for d in seq {
        for (z, &v) in d.as_ref().iter().enumerate() {
            if v > 0.0 {
                sums[z] += v / (running[z] + c * mu[z]);
            }
            running[z] += v;
        }
    }
    sums
}

/// The potential bound `5 C log T`.
pub fn coverability_potential_bound(c: f64, t: usize) -> f64 {
    5.0 * c * ln(t as f64)
}

/// The per-cell bound `2 log(1 + T)`.
pub fn elliptical_bound(t: usize) -> f64 {
    2.0 * ln(1.0 + t as f64)
}

/// Layer `h` of every occupancy, for the potential functions.
pub fn layer_sequence(seq: &[Occupancy], h: usize) -> Vec<Vec<f64>> {
    seq.iter().map(|d| d.layer(h).to_owned()).collect()
}
