//! Experiment configuration and its resolution into a concrete plan.
//!
//! Everything that can be wrong with a config is caught in [`resolve`],
//! before any cell runs.

use std::path::{Path, PathBuf};

use glow_core::classes::{
    complete_value_class, mabo_augment, tabular_value_class, truncated_value_class, ValueClass, WeightClass,
    WeightFunction,
};
use glow_core::coverage::{concentrability_inf, coverability, occupancy, CoverageReport, Occupancy};
use glow_core::env::{make_env, EnvSpec};
use glow_core::glow::{clamp_gamma, preset_thm1, preset_thm1_oracle, preset_thm2};
use glow_core::hybrid::{hyglow_gamma, preset_hyglow};
use glow_core::mdp::{optimal_policy, Policy};
use glow_core::offline::{uniform_over_reachable, ModelClass};
use glow_core::TabularMdp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::formats::{read_json, ClassFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "glow")]
    Glow,
    #[serde(rename = "h2o+fqi")]
    H2oFqi,
    #[serde(rename = "h2o+mle")]
    H2oMle,
    #[serde(rename = "hyglow")]
    Hyglow,
    #[serde(rename = "offline-only")]
    OfflineOnly,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Glow => "glow",
            Self::H2oFqi => "h2o+fqi",
            Self::H2oMle => "h2o+mle",
            Self::Hyglow => "hyglow",
            Self::OfflineOnly => "offline-only",
        }
    }

    /// Whether run traces carry the offline/hybrid columns.
    pub fn hybrid_columns(self) -> bool {
        self != Self::Glow
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetKind {
    Thm1,
    Thm2,
    Hyglow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Parameters {
    /// One setting derived from a target suboptimality.
    Preset {
        preset: PresetKind,
        epsilon: f64,
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_leading")]
        leading: f64,
    },
    /// One setting per entry of `iterations`. Without `gamma`, each setting
    /// uses the preset formula for `gamma` at its own `T`.
    Manual {
        iterations: Vec<usize>,
        #[serde(default = "default_batch")]
        batch: usize,
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default = "default_delta")]
        delta: f64,
    },
}

fn default_delta() -> f64 {
    0.05
}

fn default_leading() -> f64 {
    1.0
}

fn default_batch() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassSpec {
    /// `Q*` plus randomly perturbed copies.
    Tabular {
        extras: usize,
        #[serde(default = "default_true")]
        shuffle: bool,
    },
    /// Closed under the Bellman operator.
    Complete { extras: usize },
    /// `Q*` plus optimal values of reward-truncated copies of the MDP.
    Truncated {
        #[serde(default = "default_true")]
        shuffle: bool,
    },
    File { path: PathBuf },
}

impl Default for ClassSpec {
    fn default() -> Self {
        Self::Tabular {
            extras: 4,
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    /// Exact density ratios of the induced policy class.
    Oracle,
    /// One constant weight function per value.
    Constant { values: Vec<f64> },
    File { path: PathBuf },
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self::Oracle
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfflineDistribution {
    /// Occupancy of the optimal policy.
    Optimal,
    /// Occupancy of the uniformly random policy.
    UniformPolicy,
    /// Uniform over every reachable cell.
    UniformReachable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineSpec {
    pub distribution: OfflineDistribution,
    /// Tuples per layer; defaults to the setting's iteration count.
    #[serde(default)]
    pub size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    MaboCr,
    Fqi,
    Mle,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Self::MaboCr => "mabo_cr",
            Self::Fqi => "fqi",
            Self::Mle => "mle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub environment: EnvSpec,
    /// Seeds the instance and the function classes; shared by every cell.
    #[serde(default)]
    pub env_seed: u64,
    pub algorithm: Algorithm,
    pub parameters: Parameters,
    #[serde(default)]
    pub class: ClassSpec,
    #[serde(default)]
    pub weights: WeightSpec,
    /// Wrong models added next to the true one for `h2o+mle` and MLE.
    #[serde(default = "default_model_extras")]
    pub model_extras: usize,
    #[serde(default)]
    pub offline: Option<OfflineSpec>,
    /// Required for `offline-only`.
    #[serde(default)]
    pub solver: Option<Solver>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub exact: bool,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_model_extras() -> usize {
    3
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        // Class and weight files are resolved next to the config.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            match &mut cfg.class {
                ClassSpec::File { path } => Some(path),
                _ => None,
            },
            match &mut cfg.weights {
                WeightSpec::File { path } => Some(path),
                _ => None,
            },
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// External files the plan reads, in a fixed order.
    pub fn input_files(&self) -> Vec<&Path> {
        let mut out = Vec::new();
        if let ClassSpec::File { path } = &self.class {
            out.push(path.as_path());
        }
        if let WeightSpec::File { path } = &self.weights {
            out.push(path.as_path());
        }
        out
    }
}

/// One column of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub iterations: usize,
    pub batch: usize,
    pub gamma: f64,
    pub delta: f64,
    pub log_f: f64,
    /// For oracle classes `ln(|Pi| T)`, so it depends on the setting.
    pub log_w: f64,
    /// Offline tuples per layer (0 when there is no offline source).
    pub offline_size: usize,
}

/// A config with every derived object built.
#[derive(Debug, Clone)]
pub struct Plan {
    pub config: ExperimentConfig,
    pub mdp: TabularMdp,
    pub class: ValueClass,
    /// As used by the algorithm (already augmented for MABO.CR).
    pub weights: WeightClass,
    pub models: Option<ModelClass>,
    pub offline: Option<Occupancy>,
    pub coverage: CoverageReport,
    /// `max_h ‖d^{pi*}_h / nu_h‖_inf`; `None` without offline data.
    pub c_star: Option<f64>,
    pub settings: Vec<Setting>,
}

fn bad(msg: impl Into<String>) -> BenchError {
    BenchError::Config(msg.into())
}

pub fn resolve(config: ExperimentConfig) -> Result<Plan> {
    let cfg = &config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.env_seed);
    let (mdp, _) = make_env(&cfg.environment, &mut rng).map_err(|e| bad(format!("environment: {e}")))?;
    let class = build_class(cfg, &mdp, &mut rng)?;
    let coverage = coverability(&mdp, &class.policy_class()).map_err(|e| bad(e.to_string()))?;

    if cfg.algorithm == Algorithm::OfflineOnly && cfg.offline.is_none() {
        return Err(bad("offline-only needs an `offline` source"));
    }
    if cfg.algorithm == Algorithm::Glow && cfg.offline.is_some() {
        return Err(bad("glow does not use offline data"));
    }
    let offline = cfg.offline.as_ref().map(|spec| match spec.distribution {
        OfflineDistribution::Optimal => occupancy(&mdp, &optimal_policy(&mdp)),
        OfflineDistribution::UniformPolicy => {
            occupancy(&mdp, &Policy::uniform(mdp.num_states(), mdp.num_actions(), mdp.horizon()))
        }
        OfflineDistribution::UniformReachable => uniform_over_reachable(&mdp),
    });
    let c_star = match &offline {
        Some(nu) => Some(concentrability_inf(&occupancy(&mdp, &optimal_policy(&mdp)), nu)?),
        None => None,
    };

    let solver = match cfg.algorithm {
        Algorithm::OfflineOnly => Some(cfg.solver.ok_or_else(|| bad("offline-only needs `solver`"))?),
        Algorithm::Hyglow => Some(Solver::MaboCr),
        Algorithm::H2oFqi => Some(Solver::Fqi),
        Algorithm::H2oMle => Some(Solver::Mle),
        Algorithm::Glow => None,
    };
    if cfg.solver.is_some() && cfg.algorithm != Algorithm::OfflineOnly {
        return Err(bad("`solver` only applies to offline-only"));
    }

    let base_weights = build_weights(cfg, &mdp, &class)?;
    let models = if solver == Some(Solver::Mle) {
        Some(model_class(&mdp, cfg.model_extras, &mut rng)?)
    } else {
        None
    };

    let settings = build_settings(cfg, &mdp, &class, &base_weights, &coverage, c_star)?;
    let weights = match solver {
        Some(Solver::MaboCr) => mabo_augment(&base_weights).map_err(|e| bad(e.to_string()))?,
        _ => base_weights,
    };
    Ok(Plan {
        config,
        mdp,
        class,
        weights,
        models,
        offline,
        coverage,
        c_star,
        settings,
    })
}

fn build_class(cfg: &ExperimentConfig, mdp: &TabularMdp, rng: &mut ChaCha8Rng) -> Result<ValueClass> {
    let class = match &cfg.class {
        ClassSpec::Tabular { extras, shuffle } => tabular_value_class(mdp, *extras, *shuffle, rng),
        ClassSpec::Complete { extras } => complete_value_class(mdp, *extras, rng),
        ClassSpec::Truncated { shuffle } => truncated_value_class(mdp, *shuffle, rng),
        ClassSpec::File { path } => {
            let file: ClassFile = read_json(path).map_err(|e| bad(e.to_string()))?;
            file.into_values().map_err(|e| bad(format!("{}: {e}", path.display())))?
        }
    };
    if !class.members()[0].fits(mdp) {
        return Err(bad("value class does not match the environment's sizes"));
    }
    Ok(class)
}

fn build_weights(cfg: &ExperimentConfig, mdp: &TabularMdp, class: &ValueClass) -> Result<WeightClass> {
    let (s, a, h) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    Ok(match &cfg.weights {
        WeightSpec::Oracle => WeightClass::oracle(mdp, &class.policy_class(), 1),
        WeightSpec::Constant { values } => {
            if values.iter().any(|v| !(*v >= 0.0)) {
                return Err(bad("constant weights must be nonnegative"));
            }
            WeightClass::from_static(values.iter().map(|&v| WeightFunction::constant(s, a, h, v)).collect())
                .map_err(|e| bad(e.to_string()))?
        }
        WeightSpec::File { path } => {
            let file: ClassFile = read_json(path).map_err(|e| bad(e.to_string()))?;
            if file.shape() != (s, a, h) {
                return Err(bad(format!("{}: weight class does not match the environment", path.display())));
            }
            file.into_weights().map_err(|e| bad(format!("{}: {e}", path.display())))?
        }
    })
}

/// The truth plus `extras` copies, each with one transition row replaced by a
/// random one. All share the initial distribution.
pub fn model_class<R: Rng + ?Sized>(truth: &TabularMdp, extras: usize, rng: &mut R) -> Result<ModelClass> {
    let (s, a, h) = (truth.num_states(), truth.num_actions(), truth.horizon());
    // Last-layer rows only lead to the terminal state, so changing them would
    // give a model indistinguishable from the truth.
    if extras > 0 && h < 2 {
        return Err(BenchError::Config("wrong models need a horizon of at least 2".into()));
    }
    let mut others = Vec::with_capacity(extras);
    for _ in 0..extras {
        let mut t = truth.transitions().to_vec();
        let cell = rng.gen_range(0..(h - 1) * s * a);
        let mut row: Vec<f64> = (0..s).map(|_| 0.05 + rng.gen::<f64>()).collect();
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
        let drift = 1.0 - row.iter().sum::<f64>();
        row[0] += drift;
        t[cell * s..(cell + 1) * s].copy_from_slice(&row);
        others.push(TabularMdp::new(s, a, h, t, truth.rewards().to_vec(), truth.initial_dist().to_vec())?);
    }
    let position = rng.gen_range(0..=extras);
    Ok(ModelClass::with_truth(truth.clone(), others, position)?)
}

fn build_settings(
    cfg: &ExperimentConfig,
    mdp: &TabularMdp,
    class: &ValueClass,
    weights: &WeightClass,
    coverage: &CoverageReport,
    c_star: Option<f64>,
) -> Result<Vec<Setting>> {
    let h = mdp.horizon();
    let c_cov = coverage.c_cov;
    let log_f = class.nominal_log_size();
    let policies = class.policy_class().len();
    let log_w_at = |t: usize| {
        if weights.is_oracle() {
            ((policies * t) as f64).ln()
        } else {
            weights.nominal_log_size()
        }
    };
    let offline_size = |t: usize| match &cfg.offline {
        Some(spec) => spec.size.unwrap_or(t),
        None => 0,
    };
    // Without offline data the hybrid bounds lose their C* term.
    let c_star_finite = || -> Result<f64> {
        match c_star {
            Some(c) if c.is_finite() => Ok(c),
            Some(_) => Err(bad("offline distribution does not cover the optimal policy (C* is infinite)")),
            None => Ok(0.0),
        }
    };
    let setting = |iterations: usize, batch: usize, gamma: f64, delta: f64| Setting {
        iterations,
        batch,
        gamma,
        delta,
        log_f,
        log_w: log_w_at(iterations),
        offline_size: offline_size(iterations),
    };
    let settings = match &cfg.parameters {
        Parameters::Preset {
            preset,
            epsilon,
            delta,
            leading,
        } => {
            let (iterations, batch, gamma) = match (cfg.algorithm, preset) {
                (Algorithm::Glow, PresetKind::Thm1) => {
                    let c = if weights.is_oracle() {
                        preset_thm1_oracle(*epsilon, c_cov, log_f, policies, *delta, h, *leading)?
                    } else {
                        preset_thm1(*epsilon, c_cov, log_f, weights.nominal_log_size(), *delta, h, *leading)?
                    };
                    (c.iterations, c.batch, c.gamma)
                }
                (Algorithm::Glow, PresetKind::Thm2) => {
                    let c = preset_thm2(*epsilon, c_cov, log_f, log_w_at(1), *delta, h, *leading)?;
                    (c.iterations, c.batch, c.gamma)
                }
                (Algorithm::Hyglow | Algorithm::H2oFqi | Algorithm::H2oMle, PresetKind::Hyglow) => {
                    let c_star = c_star_finite()?;
                    let mut c = preset_hyglow(*epsilon, c_cov, c_star, h, log_f, log_w_at(1), *delta, *leading)?;
                    // Oracle log |W| grows with T; settle on a fixed point.
                    for _ in 0..64 {
                        let next = preset_hyglow(*epsilon, c_cov, c_star, h, log_f, log_w_at(c.iterations), *delta, *leading)?;
                        if next.iterations == c.iterations {
                            break;
                        }
                        c = next;
                    }
                    (c.iterations, 1, c.gamma)
                }
                (alg, p) => return Err(bad(format!("preset {p:?} does not apply to {}", alg.name()))),
            };
            vec![setting(iterations, batch, gamma, *delta)]
        }
        Parameters::Manual {
            iterations,
            batch,
            gamma,
            delta,
        } => {
            if iterations.is_empty() || iterations.contains(&0) {
                return Err(bad("manual parameters need positive iteration counts"));
            }
            if *batch == 0 {
                return Err(bad("batch must be positive"));
            }
            if *batch != 1 && cfg.algorithm != Algorithm::Glow {
                return Err(bad("only glow collects batches"));
            }
            if let Some(g) = gamma {
                if !(*g > 0.0 && *g <= 1.0) {
                    return Err(bad("gamma must lie in (0, 1]"));
                }
            }
            if !(*delta > 0.0 && *delta < 1.0) {
                return Err(bad("delta must lie in (0, 1)"));
            }
            iterations
                .iter()
                .map(|&t| {
                    let log_term = log_f + log_w_at(t) - delta.ln();
                    let gamma = match (gamma, cfg.algorithm) {
                        (Some(g), _) => *g,
                        (None, Algorithm::Glow) => clamp_gamma((c_cov / (t as f64 * log_term)).sqrt()),
                        (None, Algorithm::OfflineOnly) => clamp_gamma(1.0 / (t as f64).sqrt()),
                        (None, _) => hyglow_gamma(t, c_cov, c_star_finite()?, h, log_term),
                    };
                    Ok(setting(t, *batch, gamma, *delta))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    for s in &settings {
        let hybrid = matches!(cfg.algorithm, Algorithm::Hyglow | Algorithm::H2oFqi | Algorithm::H2oMle);
        if hybrid && cfg.offline.is_some() && s.offline_size < s.iterations {
            return Err(bad(format!(
                "offline size {} is below the {} rounds it must feed",
                s.offline_size, s.iterations
            )));
        }
        if cfg.algorithm == Algorithm::OfflineOnly && s.offline_size == 0 {
            return Err(bad("offline-only needs a positive sample size"));
        }
    }
    Ok(settings)
}
