//! Per-iteration traces of online and hybrid runs.

use alloc::vec::Vec;

use crate::mdp::Policy;

/// One round of an online or hybrid run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based round index.
    pub t: usize,
    /// Index of the selected value function (or model, for MLE).
    pub f_index: usize,
    pub policy: Policy,
    pub j_pi: f64,
    pub inst_regret: f64,
    pub cum_regret: f64,
    /// `|F^(t)|` for confidence-set learners.
    pub confset_size: Option<usize>,
    /// Whether the optimism inequality was checked and held; `None` when `Q*`
    /// is unknown or outside the confidence set.
    pub optimism_ok: Option<bool>,
    /// Whether `Q*` survived in the confidence set, when its index is known.
    pub qstar_in_set: Option<bool>,
    /// Offline tuples per layer handed to the solver.
    pub offline_size: Option<usize>,
    /// Total tuples per layer handed to the solver.
    pub hybrid_size: Option<usize>,
    pub solver_objective: Option<f64>,
}

/// Full trace of a run; the output policy is the uniform mixture of the
/// per-round policies.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub j_star: f64,
    pub iterations: Vec<IterationRecord>,
}

impl RunRecord {
    pub fn new(j_star: f64) -> Self {
        Self {
            j_star,
            iterations: Vec::new(),
        }
    }

    /// Appends round `t` with exact `J(pi_t)`, keeping the regret running sum.
    pub fn push_round(&mut self, mut rec: IterationRecord) {
        let prev = self.cumulative_regret();
        rec.inst_regret = self.j_star - rec.j_pi;
        rec.cum_regret = prev + rec.inst_regret;
        self.iterations.push(rec);
    }

    pub fn rounds(&self) -> usize {
        self.iterations.len()
    }

    pub fn cumulative_regret(&self) -> f64 {
        self.iterations.last().map_or(0.0, |r| r.cum_regret)
    }

    /// `J(pi*) - J(Unif(pi_1..pi_T)) = (1/T) sum_t (J(pi*) - J(pi_t))`.
    pub fn risk(&self) -> f64 {
        if self.iterations.is_empty() {
            return 0.0;
        }
        let total: f64 = self.iterations.iter().map(|r| r.inst_regret).sum();
        total / self.iterations.len() as f64
    }

    /// Cumulative regret after each round.
    pub fn regret_curve(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.cum_regret).collect()
    }

    /// The policies whose uniform mixture is the output.
    pub fn policies(&self) -> impl Iterator<Item = &Policy> {
        self.iterations.iter().map(|r| &r.policy)
    }
}

impl IterationRecord {
    pub fn new(t: usize, f_index: usize, policy: Policy, j_pi: f64) -> Self {
        Self {
            t,
            f_index,
            policy,
            j_pi,
            inst_regret: 0.0,
            cum_regret: 0.0,
            confset_size: None,
            optimism_ok: None,
            qstar_in_set: None,
            offline_size: None,
            hybrid_size: None,
            solver_objective: None,
        }
    }
}
