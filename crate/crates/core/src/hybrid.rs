//! Hybrid-to-offline reduction: each round re-solves an offline problem on
//! the offline prefix plus all online data, then plays the returned policy.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::classes::{ValueClass, WeightClass};
use crate::coverage::{occupancy, Occupancy, OccupancyTag};
use crate::data::{Evidence, LayeredDataset};
use crate::glow::{check_preset_inputs, clamp_gamma};
use crate::math::{ceil, ln, sqrt};
use crate::mdp::{greedy_policy, j_value, optimal_policy, sample_trajectory, Policy, TabularMdp};
use crate::offline::{fqi, mabo_cr_scaled, mle_model, ModelClass};
use crate::record::{IterationRecord, RunRecord};
use crate::{Error, Result};

/// What a learner returns for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerStep {
    pub index: usize,
    pub policy: Policy,
    pub objective: Option<f64>,
}

/// An offline solver usable inside the reduction.
pub trait OfflineLearner {
    /// Policy for round 1, before any data exists.
    fn fallback(&self) -> LearnerStep;

    /// Solves round `t` on `evidence`; `reference` is the exact hybrid data law
    /// `mu^(t)`, which oracle weight classes are built against.
    fn learn(&mut self, evidence: &Evidence<'_>, t: usize, reference: &Occupancy) -> Result<LearnerStep>;
}

/// MABO.CR with clip scale `gamma t` at round `t`.
#[derive(Debug, Clone)]
pub struct MaboLearner<'a> {
    pub class: &'a ValueClass,
    pub weights: &'a WeightClass,
    pub gamma: f64,
}

impl OfflineLearner for MaboLearner<'_> {
    fn fallback(&self) -> LearnerStep {
        LearnerStep {
            index: 0,
            policy: greedy_policy(&self.class.members()[0]),
            objective: None,
        }
    }

    fn learn(&mut self, evidence: &Evidence<'_>, t: usize, reference: &Occupancy) -> Result<LearnerStep> {
        let members = self.weights.materialize(reference);
        let sol = mabo_cr_scaled(evidence, self.class, &members, self.gamma * t as f64)?;
        Ok(LearnerStep {
            index: sol.index,
            policy: sol.policy,
            objective: Some(sol.objective),
        })
    }
}

/// Fitted Q-iteration.
#[derive(Debug, Clone)]
pub struct FqiLearner<'a> {
    pub class: &'a ValueClass,
}

impl OfflineLearner for FqiLearner<'_> {
    fn fallback(&self) -> LearnerStep {
        LearnerStep {
            index: 0,
            policy: greedy_policy(&self.class.members()[0]),
            objective: None,
        }
    }

    fn learn(&mut self, evidence: &Evidence<'_>, _t: usize, _reference: &Occupancy) -> Result<LearnerStep> {
        let sol = fqi(evidence, self.class)?;
        Ok(LearnerStep {
            index: sol.index,
            policy: sol.policy,
            objective: Some(sol.objective),
        })
    }
}

/// Model-based maximum likelihood.
#[derive(Debug, Clone)]
pub struct MleLearner<'a> {
    pub models: &'a ModelClass,
}

impl OfflineLearner for MleLearner<'_> {
    fn fallback(&self) -> LearnerStep {
        LearnerStep {
            index: 0,
            policy: optimal_policy(&self.models.members()[0]),
            objective: None,
        }
    }

    fn learn(&mut self, evidence: &Evidence<'_>, _t: usize, _reference: &Occupancy) -> Result<LearnerStep> {
        let (_, sol) = mle_model(evidence, self.models)?;
        Ok(LearnerStep {
            index: sol.index,
            policy: sol.policy,
            objective: Some(sol.objective),
        })
    }
}

/// Offline data and the distribution `nu` it was drawn from.
#[derive(Debug, Clone, Copy)]
pub struct OfflineSource<'a> {
    pub data: &'a LayeredDataset,
    pub distribution: &'a Occupancy,
}

/// Runs the reduction for `iterations` rounds with one trajectory per round.
///
/// Round `t` hands the learner the first `t - 1` offline tuples of every layer
/// (generation order) together with the `t - 1` online trajectories. With
/// `exact`, the learner instead sees exact expectations under
/// `mu^(t) = (nu + dbar^(t)) / 2` with nominal size `2 (t - 1)`.
pub fn h2o_run<L: OfflineLearner + ?Sized, R: Rng + ?Sized>(
    mdp: &TabularMdp,
    learner: &mut L,
    offline: Option<OfflineSource<'_>>,
    iterations: usize,
    exact: bool,
    rng: &mut R,
) -> Result<RunRecord> {
    if iterations == 0 {
        return Err(Error::InvalidConfig("iterations must be positive".into()));
    }
    if let Some(src) = offline {
        if src.data.horizon() != mdp.horizon() || !src.distribution.fits(mdp) {
            return Err(Error::ShapeMismatch("offline source does not fit the MDP"));
        }
        for h in 0..mdp.horizon() {
            let have = src.data.layer_len(h);
            if have < iterations {
                return Err(Error::UndersizedOffline {
                    layer: h,
                    have,
                    need: iterations,
                });
            }
        }
    }
    let j_star = j_value(mdp, &optimal_policy(mdp));
    let mut record = RunRecord::new(j_star);
    let mut hybrid = LayeredDataset::for_mdp(mdp);
    let mut played_sum = vec![0.0; mdp.cells() * mdp.horizon()];

    for t in 1..=iterations {
        let offline_size = if offline.is_some() { t - 1 } else { 0 };
        let step = if t == 1 {
            learner.fallback()
        } else {
            let inv = 1.0 / (t - 1) as f64;
            let mass: Vec<f64> = match offline {
                Some(src) => played_sum
                    .iter()
                    .zip(src.distribution.mass())
                    .map(|(s, nu)| 0.5 * (nu + s * inv))
                    .collect(),
                None => played_sum.iter().map(|s| s * inv).collect(),
            };
            let reference = Occupancy::new(mdp.num_states(), mdp.num_actions(), mdp.horizon(), mass)?
                .with_tag(OccupancyTag::Mixture(t - 1 + offline_size));
            let evidence = if exact {
                Evidence::Exact {
                    mdp,
                    distribution: &reference,
                    nominal_size: (t - 1) + offline_size,
                }
            } else {
                Evidence::Sampled(&hybrid)
            };
            learner.learn(&evidence, t, &reference)?
        };
        let mut rec = IterationRecord::new(t, step.index, step.policy.clone(), j_value(mdp, &step.policy));
        rec.offline_size = Some(offline_size);
        rec.hybrid_size = Some(if exact { (t - 1) + offline_size } else { hybrid.min_layer_len() });
        rec.solver_objective = step.objective;
        record.push_round(rec);

        let occ = occupancy(mdp, &step.policy);
        for (s, v) in played_sum.iter_mut().zip(occ.mass()) {
            *s += v;
        }
        if !exact {
            let traj = sample_trajectory(mdp, &step.policy, rng);
            hybrid.push_trajectory(&traj.steps, t, 1)?;
            if let Some(src) = offline {
                for h in 0..mdp.horizon() {
                    let s = src.data.layer(h)[t - 1];
                    hybrid.push(h, s.transition, s.provenance)?;
                }
            }
        }
    }
    Ok(record)
}

/// Parameters of a HyGlow run.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridConfig {
    pub iterations: usize,
    /// Clip base; round `t` uses `gamma t` and `alpha = 8 / (gamma t)`.
    pub gamma: f64,
    pub delta: f64,
    pub exact: bool,
    pub epsilon: Option<f64>,
}

/// The reduction instantiated with MABO.CR.
pub fn hyglow_run<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    class: &ValueClass,
    weights: &WeightClass,
    offline: Option<OfflineSource<'_>>,
    cfg: &HybridConfig,
    rng: &mut R,
) -> Result<RunRecord> {
    if !(cfg.gamma > 0.0) {
        return Err(Error::InvalidConfig("gamma must be positive".into()));
    }
    let mut learner = MaboLearner {
        class,
        weights,
        gamma: cfg.gamma,
    };
    h2o_run(mdp, &mut learner, offline, cfg.iterations, cfg.exact, rng)
}

/// `gamma = sqrt((C* + C_cov) / (T H^2 L))`, clamped into `(0, 1]`.
pub fn hyglow_gamma(iterations: usize, c_cov: f64, c_star: f64, horizon: usize, log_term: f64) -> f64 {
    let h2 = (horizon * horizon) as f64;
    clamp_gamma(sqrt((c_star + c_cov) / (iterations as f64 * h2 * log_term)))
}

/// `T = c H^4 (C_cov + C*) L / eps^2` with `L = log|F| + log|W| + ln(1/delta)`.
#[allow(clippy::too_many_arguments)]
pub fn preset_hyglow(
    epsilon: f64,
    c_cov: f64,
    c_star: f64,
    horizon: usize,
    log_f: f64,
    log_w: f64,
    delta: f64,
    leading: f64,
) -> Result<HybridConfig> {
    check_preset_inputs(epsilon, c_cov + c_star, delta, horizon, leading)?;
    let l = log_f + log_w - ln(delta);
    let h = horizon as f64;
    let h4 = h * h * h * h;
    let iterations = ceil(leading * h4 * (c_cov + c_star) * l / (epsilon * epsilon)).max(1.0) as usize;
    Ok(HybridConfig {
        iterations,
        gamma: hyglow_gamma(iterations, c_cov, c_star, horizon, l),
        delta,
        exact: false,
        epsilon: Some(epsilon),
    })
}
