//! Optimistic online learning with truncated density-ratio confidence sets.
//!
//! Round `t` keeps every `f` whose clipped, regularized weighted Bellman
//! residual stays below `beta_t` at every layer and for every weight, then plays
//! the greedy policy of the survivor with the largest estimated initial value.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::classes::{prospective_weights, ValueClass, WeightClass, WeightFunction, WeightMode};
use crate::coverage::{occupancy, Occupancy, OccupancyTag};
use crate::data::{Evidence, LayerSummary, LayeredDataset};
use crate::math::{argmax, ceil, ln, sqrt};
use crate::mdp::{greedy_policy, j_value, optimal_policy, sample_trajectory, TabularMdp};
use crate::record::{IterationRecord, RunRecord};
use crate::{Error, Result};

/// Where a configuration came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Preset {
    /// Strong realizability: single trajectory per round.
    Thm1,
    /// Weak (mixture) realizability: large batches.
    Thm2,
    Manual,
}

/// Parameters of an online run.
#[derive(Debug, Clone, PartialEq)]
pub struct GlowConfig {
    /// Number of rounds `T`.
    pub iterations: usize,
    /// Trajectories per round `K`.
    pub batch: usize,
    /// Clip base; round `t` clips at `gamma * t`.
    pub gamma: f64,
    pub delta: f64,
    /// `log |F|` and `log |W|` used by the threshold.
    pub log_f: f64,
    pub log_w: f64,
    pub horizon: usize,
    /// Replace empirical means with exact expectations under the history mixture.
    pub exact: bool,
    pub preset: Preset,
    pub epsilon: Option<f64>,
}

/// Per-round schedule values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub gamma_t: f64,
    pub alpha_t: f64,
    /// Undefined in round 1, where no data exists.
    pub beta_t: Option<f64>,
}

impl GlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch == 0 || self.horizon == 0 {
            return Err(Error::InvalidConfig("iterations, batch and horizon must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(alloc::format!("gamma {} not in (0, 1]", self.gamma)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!("delta {} not in (0, 1)", self.delta)));
        }
        if !(self.log_f >= 0.0 && self.log_w >= 0.0) {
            return Err(Error::InvalidConfig("class log-sizes must be nonnegative".into()));
        }
        Ok(())
    }

    /// `ln(6 |F| |W| T H / delta)`.
    pub fn log_term(&self) -> f64 {
        ln(6.0) + self.log_f + self.log_w + ln(self.iterations as f64) + ln(self.horizon as f64) - ln(self.delta)
    }
}

/// `gamma_t = gamma t`, `alpha_t = 8 / gamma_t`,
/// `beta_t = 36 gamma_t / (K (t - 1)) * ln(6 |F| |W| T H / delta)`.
pub fn schedule(cfg: &GlowConfig, t: usize) -> Result<Schedule> {
    if t == 0 || t > cfg.iterations {
        return Err(Error::IterationOutOfRange {
            t,
            total: cfg.iterations,
        });
    }
    let gamma_t = cfg.gamma * t as f64;
    let beta_t = (t > 1).then(|| 36.0 * gamma_t / (cfg.batch * (t - 1)) as f64 * cfg.log_term());
    Ok(Schedule {
        gamma_t,
        alpha_t: 8.0 / gamma_t,
        beta_t,
    })
}

/// `Ê_{D_h}[Δf w~ - alpha w~^2]` with `w~` the weight evaluated at `gamma_t`.
pub fn residual_statistic(
    evidence: &Evidence<'_>,
    f: &crate::mdp::ValueFunction,
    w: &WeightFunction,
    h: usize,
    gamma_t: f64,
    alpha_t: f64,
) -> Result<f64> {
    let s = evidence.summary(h)?;
    let e = s.residual_moments(f.layer(h), &s.next_values(f));
    Ok(s.residual_statistic(&e, &w.eval_layer(h, gamma_t), alpha_t))
}

/// `max_h max_w` residual statistic of every member, from precomputed summaries.
pub fn max_statistics(
    class: &ValueClass,
    weights: &[WeightFunction],
    summaries: &[LayerSummary],
    gamma_t: f64,
    alpha_t: f64,
) -> Vec<f64> {
    let evaluated: Vec<Vec<Vec<f64>>> = summaries
        .iter()
        .map(|s| weights.iter().map(|w| w.eval_layer(s.layer(), gamma_t)).collect())
        .collect();
    class
        .members()
        .iter()
        .map(|f| {
            let mut worst = f64::NEG_INFINITY;
            for (s, layer_weights) in summaries.iter().zip(&evaluated) {
                let e = s.residual_moments(f.layer(s.layer()), &s.next_values(f));
                for w in layer_weights {
                    worst = worst.max(s.residual_statistic(&e, w, alpha_t));
                }
            }
            worst
        })
        .collect()
}

/// Indices of `F^(t)`; every index in round 1.
pub fn confidence_set(
    class: &ValueClass,
    weights: &[WeightFunction],
    evidence: &Evidence<'_>,
    cfg: &GlowConfig,
    t: usize,
) -> Result<Vec<usize>> {
    let sched = schedule(cfg, t)?;
    let Some(beta) = sched.beta_t else {
        return Ok((0..class.len()).collect());
    };
    if weights.is_empty() {
        return Ok((0..class.len()).collect());
    }
    let summaries = (0..evidence.horizon())
        .map(|h| evidence.summary(h))
        .collect::<Result<Vec<_>>>()?;
    let stats = max_statistics(class, weights, &summaries, sched.gamma_t, sched.alpha_t);
    Ok((0..class.len()).filter(|&i| stats[i] <= beta).collect())
}

/// The candidate maximizing the estimated initial value `Ê_{D_1}[max_a f_1(x_1, a)]`;
/// the lowest candidate index without data.
pub fn optimistic_select(candidates: &[usize], initial: Option<&LayerSummary>, class: &ValueClass) -> Result<usize> {
    let first = *candidates.first().ok_or(Error::Empty("candidate set"))?;
    let Some(d1) = initial else {
        return Ok(candidates.iter().copied().min().unwrap_or(first));
    };
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    let values: Vec<f64> = sorted.iter().map(|&i| d1.state_value_mean(&class.members()[i])).collect();
    Ok(sorted[argmax(&values).expect("nonempty")])
}

/// Runs the online loop for `cfg.iterations` rounds.
///
/// Oracle weight classes are materialized each round against the prospective
/// history mixture, so the analysis weight `d^{pi_t} / dbar^{t+1}` is always
/// in the enumerated set.
pub fn glow_run<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    class: &ValueClass,
    weights: &WeightClass,
    cfg: &GlowConfig,
    rng: &mut R,
) -> Result<RunRecord> {
    cfg.validate()?;
    if cfg.horizon != mdp.horizon() {
        return Err(Error::InvalidConfig("config horizon differs from the MDP".into()));
    }
    if !class.members()[0].fits(mdp) {
        return Err(Error::ShapeMismatch("value class does not fit the MDP"));
    }
    let j_star = j_value(mdp, &optimal_policy(mdp));
    let mut record = RunRecord::new(j_star);
    let mut data = LayeredDataset::for_mdp(mdp);
    let cells = mdp.cells() * mdp.horizon();
    let mut played_sum = vec![0.0; cells];

    for t in 1..=cfg.iterations {
        let (candidates, initial) = if t == 1 {
            ((0..class.len()).collect::<Vec<_>>(), None)
        } else {
            let members: Vec<WeightFunction> = match weights.mode() {
                WeightMode::Static(m) => m.clone(),
                WeightMode::Oracle { occupancies, .. } => prospective_weights(occupancies, &played_sum, t),
            };
            let mixture;
            let evidence = if cfg.exact {
                let inv = 1.0 / (t - 1) as f64;
                mixture = Occupancy::new(
                    mdp.num_states(),
                    mdp.num_actions(),
                    mdp.horizon(),
                    played_sum.iter().map(|v| v * inv).collect(),
                )?
                .with_tag(OccupancyTag::Mixture(t - 1));
                Evidence::Exact {
                    mdp,
                    distribution: &mixture,
                    nominal_size: cfg.batch * (t - 1),
                }
            } else {
                Evidence::Sampled(&data)
            };
            let set = confidence_set(class, &members, &evidence, cfg, t)?;
            (set, Some(evidence.summary(0)?))
        };
        if candidates.is_empty() {
            return Err(Error::EmptyConfidenceSet { t });
        }
        let chosen = optimistic_select(&candidates, initial.as_ref(), class)?;
        let policy = greedy_policy(&class.members()[chosen]);
        let mut rec = IterationRecord::new(t, chosen, policy.clone(), j_value(mdp, &policy));
        rec.confset_size = Some(candidates.len());
        if let Some(q) = class.qstar_index() {
            let inside = candidates.contains(&q);
            rec.qstar_in_set = Some(inside);
            if let (true, Some(d1)) = (inside, initial.as_ref()) {
                let chosen_value = d1.state_value_mean(&class.members()[chosen]);
                rec.optimism_ok = Some(chosen_value >= d1.state_value_mean(&class.members()[q]));
            }
        }
        record.push_round(rec);

        let occ = occupancy(mdp, &policy);
        for (s, v) in played_sum.iter_mut().zip(occ.mass()) {
            *s += v;
        }
        if !cfg.exact {
            for k in 1..=cfg.batch {
                let traj = sample_trajectory(mdp, &policy, rng);
                data.push_trajectory(&traj.steps, t, k)?;
            }
        }
    }
    Ok(record)
}

/// Strong-realizability preset: `T = c H^2 C_cov L / eps^2`, `K = 1`,
/// `gamma = sqrt(C_cov / (T L))` with `L = log|F| + log|W| + ln(1/delta)`.
pub fn preset_thm1(epsilon: f64, c_cov: f64, log_f: f64, log_w: f64, delta: f64, horizon: usize, leading: f64) -> Result<GlowConfig> {
    check_preset_inputs(epsilon, c_cov, delta, horizon, leading)?;
    let l = log_f + log_w - ln(delta);
    let h2 = (horizon * horizon) as f64;
    let iterations = ceil(leading * h2 * c_cov * l / (epsilon * epsilon)).max(1.0) as usize;
    Ok(GlowConfig {
        iterations,
        batch: 1,
        gamma: clamp_gamma(sqrt(c_cov / (iterations as f64 * l))),
        delta,
        log_f,
        log_w,
        horizon,
        exact: false,
        preset: Preset::Thm1,
        epsilon: Some(epsilon),
    })
}

/// Weak-realizability preset: `T = c H^2 C_cov / eps^2`, `K = c T L`,
/// `gamma = sqrt(C_cov / T)`.
pub fn preset_thm2(epsilon: f64, c_cov: f64, log_f: f64, log_w: f64, delta: f64, horizon: usize, leading: f64) -> Result<GlowConfig> {
    check_preset_inputs(epsilon, c_cov, delta, horizon, leading)?;
    let l = log_f + log_w - ln(delta);
    let h2 = (horizon * horizon) as f64;
    let iterations = ceil(leading * h2 * c_cov / (epsilon * epsilon)).max(1.0) as usize;
    let batch = ceil(leading * iterations as f64 * l).max(1.0) as usize;
    Ok(GlowConfig {
        iterations,
        batch,
        gamma: clamp_gamma(sqrt(c_cov / iterations as f64)),
        delta,
        log_f,
        log_w,
        horizon,
        exact: false,
        preset: Preset::Thm2,
        epsilon: Some(epsilon),
    })
}

/// [`preset_thm1`] for an oracle weight class, whose `log |W| = ln(|Pi| T)`
/// depends on the `T` being chosen; iterates to the fixed point.
pub fn preset_thm1_oracle(
    epsilon: f64,
    c_cov: f64,
    log_f: f64,
    policies: usize,
    delta: f64,
    horizon: usize,
    leading: f64,
) -> Result<GlowConfig> {
    let log_pi = ln(policies.max(1) as f64);
    let mut cfg = preset_thm1(epsilon, c_cov, log_f, log_pi, delta, horizon, leading)?;
    for _ in 0..64 {
        let log_w = log_pi + ln(cfg.iterations as f64);
        let next = preset_thm1(epsilon, c_cov, log_f, log_w, delta, horizon, leading)?;
        if next.iterations == cfg.iterations {
            return Ok(next);
        }
        cfg = next;
    }
    Ok(cfg)
}

pub(crate) fn check_preset_inputs(epsilon: f64, c_cov: f64, delta: f64, horizon: usize, leading: f64) -> Result<()> {
    if !(epsilon > 0.0 && c_cov > 0.0 && leading > 0.0 && horizon > 0) {
        return Err(Error::InvalidConfig("preset inputs must be positive".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig("delta must lie in (0, 1)".into()));
    }
    Ok(())
}

/// Clamps a clip base into `(0, 1]`.
pub fn clamp_gamma(g: f64) -> f64 {
    if g > 1.0 {
        1.0
    } else {
        g.max(f64::MIN_POSITIVE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(gamma: f64) -> GlowConfig {
        GlowConfig {
            iterations: 4,
            batch: 1,
            gamma,
            delta: 0.1,
            log_f: ln(2.0),
            log_w: ln(2.0),
            horizon: 2,
            exact: false,
            preset: Preset::Manual,
            epsilon: None,
        }
    }

    #[test]
    fn schedule_values() {
        let mut c = cfg(0.1);
        c.iterations = 5;
        let s = schedule(&c, 3).unwrap();
        assert!((s.gamma_t - 0.3).abs() < 1e-15);
        assert!((s.alpha_t - 80.0 / 3.0).abs() < 1e-12);
        assert_eq!(schedule(&c, 1).unwrap().beta_t, None);
        assert!(schedule(&c, 6).is_err());
        assert!(schedule(&c, 0).is_err());
    }

    #[test]
    fn thm1_preset_has_unit_batch() {
        let a = preset_thm1(0.1, 4.0, 1.0, 1.0, 0.05, 3, 1.0).unwrap();
        let b = preset_thm1(0.2, 4.0, 1.0, 1.0, 0.05, 3, 1.0).unwrap();
        assert_eq!((a.batch, b.batch), (1, 1));
        assert!(a.gamma > 0.0 && a.gamma <= 1.0);
    }
}
