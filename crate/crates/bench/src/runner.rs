//! Seed-by-setting sweeps with per-cell outputs and a hashed manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use glow_core::data::Evidence;
use glow_core::glow::{glow_run, GlowConfig, Preset};
use glow_core::hybrid::{h2o_run, hyglow_run, FqiLearner, HybridConfig, MleLearner, OfflineSource};
use glow_core::mdp::{j_value, optimal_policy};
use glow_core::offline::{cc_certificate, fqi, mabo_cr, mle_model, sample_offline, CcBound};
use glow_core::record::{IterationRecord, RunRecord};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{resolve, Algorithm, ExperimentConfig, Parameters, Plan, PresetKind, Setting, Solver};
use crate::error::{BenchError, Result};
use crate::formats::{
    inf_float, mdp_to_json, run_to_csv, to_json_bytes, write_atomic, CertificateFile, CoverageFile, Num, SolverReport,
};

/// Environment variable that sets the worker count when `--workers` is absent.
pub const WORKERS_ENV: &str = "GLOW_BENCH_WORKERS";

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub run_id: String,
    pub seed: u64,
    /// Index into [`Manifest::settings`].
    pub setting: usize,
    pub iterations: usize,
    pub status: CellStatus,
    #[serde(default)]
    pub error: Option<String>,
    pub wall_time_ms: f64,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentEntry {
    pub c_cov: f64,
    pub per_layer: Vec<f64>,
    pub c_star: Option<Num>,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config: ExperimentConfig,
    /// `sha256:` digest over the config and every file it references.
    pub input_hash: String,
    pub environment: EnvironmentEntry,
    pub settings: Vec<Setting>,
    pub cells: Vec<CellEntry>,
    pub wall_time_ms: f64,
}

impl Manifest {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.status == CellStatus::Failed).count()
    }
}

/// Per-run JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub setting: Setting,
    pub j_star: f64,
    pub risk: f64,
    pub cumulative_regret: f64,
    pub rounds: usize,
    pub final_confset_size: Option<usize>,
    /// Whether `Q*` survived every confidence set (online runs with a known `Q*`).
    pub qstar_always_in_set: Option<bool>,
    /// Per-round failure probability and its union over all rounds.
    pub delta: f64,
    #[serde(with = "inf_float")]
    pub delta_total: f64,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` lets rayon pick.
    pub workers: Option<usize>,
}

/// `sha256:` over git-style blob framing (`blob <len>\0<bytes>`) of each
/// named input, combined like a tree listing.
pub fn input_hash(inputs: &[(String, Vec<u8>)]) -> String {
    let mut tree = Sha256::new();
    for (name, bytes) in inputs {
        let mut blob = Sha256::new();
        blob.update(format!("blob {}\0", bytes.len()).as_bytes());
        blob.update(bytes);
        tree.update(format!("{} {}\n", hex::encode(blob.finalize()), name).as_bytes());
    }
    format!("sha256:{}", hex::encode(tree.finalize()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn run_id(algorithm: Algorithm, iterations: usize, seed: u64) -> String {
    format!("{}-T{iterations}-s{seed}", algorithm.name().replace('+', "-"))
}

/// Runs every `(setting, seed)` cell and writes the manifest.
///
/// Configuration problems surface before anything is written. A failing cell
/// does not stop the others; the manifest records it and the call returns
/// [`BenchError::CellsFailed`] after writing everything else.
pub fn run_experiment(config: ExperimentConfig, opts: RunOptions) -> Result<Manifest> {
    let start = Instant::now();
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = config.seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(BenchError::Config(format!("seed {dup} is listed twice")));
    }
    if opts.workers == Some(0) {
        return Err(BenchError::Config("worker count must be positive".into()));
    }
    let inputs = hashed_inputs(&config)?;
    let plan = resolve(config)?;
    let out = plan.config.output_dir.clone();
    let runs = out.join("runs");
    std::fs::create_dir_all(&runs).map_err(|e| BenchError::io(&runs, e))?;

    let mut env_files = Vec::new();
    for (name, bytes) in [
        ("mdp.json", {
            let mut b = mdp_to_json(&plan.mdp).into_bytes();
            b.push(b'\n');
            b
        }),
        ("coverage.json", to_json_bytes(&CoverageFile::from(&plan.coverage))),
    ] {
        write_atomic(&out.join(name), &bytes)?;
        env_files.push(FileEntry {
            path: name.into(),
            sha256: sha256_hex(&bytes),
        });
    }

    let cells: Vec<(usize, u64)> = (0..plan.settings.len())
        .flat_map(|s| plan.config.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    info!("{}: {} cells", plan.config.name, cells.len());
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.workers {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| BenchError::Config(format!("worker pool: {e}")))?;
    let entries: Vec<CellEntry> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(s, seed)| execute_cell(&plan, s, seed, &out))
            .collect()
    });

    let manifest = Manifest {
        name: plan.config.name.clone(),
        input_hash: input_hash(&inputs),
        environment: EnvironmentEntry {
            c_cov: plan.coverage.c_cov,
            per_layer: plan.coverage.per_layer.clone(),
            c_star: plan.c_star.map(Num::from),
            files: env_files,
        },
        settings: plan.settings.clone(),
        cells: entries,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        config: plan.config,
    };
    write_atomic(&out.join(MANIFEST_NAME), &to_json_bytes(&manifest))?;
    let failed = manifest.failed();
    if failed > 0 {
        return Err(BenchError::CellsFailed {
            failed,
            total: manifest.cells.len(),
        });
    }
    Ok(manifest)
}

/// The config (minus where outputs go) and the bytes of every file it reads.
fn hashed_inputs(config: &ExperimentConfig) -> Result<Vec<(String, Vec<u8>)>> {
    let mut echo = config.clone();
    echo.output_dir = PathBuf::new();
    let mut inputs = vec![("config".to_string(), serde_json::to_vec(&echo).expect("plain data serializes"))];
    for path in config.input_files() {
        let bytes = std::fs::read(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        // Named by file name so the hash does not depend on where the tree lives.
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        inputs.push((name, bytes));
    }
    Ok(inputs)
}

fn execute_cell(plan: &Plan, s: usize, seed: u64, out: &Path) -> CellEntry {
    let setting = plan.settings[s];
    let id = run_id(plan.config.algorithm, setting.iterations, seed);
    let start = Instant::now();
    let result = run_cell(plan, s, seed).and_then(|outputs| {
        outputs
            .into_iter()
            .map(|(suffix, bytes)| {
                let rel = format!("runs/{id}{suffix}");
                write_atomic(&out.join(&rel), &bytes)?;
                Ok(FileEntry {
                    path: rel,
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<Result<Vec<_>>>()
    });
    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    let (status, error, files) = match result {
        Ok(files) => (CellStatus::Ok, None, files),
        Err(e) => {
            warn!("{id} failed: {e}");
            (CellStatus::Failed, Some(e.to_string()), Vec::new())
        }
    };
    CellEntry {
        run_id: id,
        seed,
        setting: s,
        iterations: setting.iterations,
        status,
        error,
        wall_time_ms,
        files,
    }
}

/// Runs one cell and renders its files as `(suffix, bytes)`.
///
/// The stream is keyed by `(seed, setting)`, so a cell's output does not
/// depend on which other seeds or settings share the sweep.
pub fn run_cell(plan: &Plan, s: usize, seed: u64) -> Result<Vec<(String, Vec<u8>)>> {
    let setting = plan.settings[s];
    let cfg = &plan.config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    let id = run_id(cfg.algorithm, setting.iterations, seed);
    let mut extra = Vec::new();

    let offline_data = match &plan.offline {
        Some(nu) if setting.offline_size > 0 => Some(sample_offline(&plan.mdp, nu, setting.offline_size, 0, &mut rng)?),
        _ => None,
    };
    let source = match (&offline_data, &plan.offline) {
        (Some(data), Some(nu)) => Some(OfflineSource { data, distribution: nu }),
        _ => None,
    };
    let hybrid = HybridConfig {
        iterations: setting.iterations,
        gamma: setting.gamma,
        delta: setting.delta,
        exact: cfg.exact,
        epsilon: epsilon(&cfg.parameters),
    };

    let record = match cfg.algorithm {
        Algorithm::Glow => {
            let glow_cfg = GlowConfig {
                iterations: setting.iterations,
                batch: setting.batch,
                gamma: setting.gamma,
                delta: setting.delta,
                log_f: setting.log_f,
                log_w: setting.log_w,
                horizon: plan.mdp.horizon(),
                exact: cfg.exact,
                preset: match &cfg.parameters {
                    Parameters::Preset {
                        preset: PresetKind::Thm1, ..
                    } => Preset::Thm1,
                    Parameters::Preset {
                        preset: PresetKind::Thm2, ..
                    } => Preset::Thm2,
                    _ => Preset::Manual,
                },
                epsilon: epsilon(&cfg.parameters),
            };
            glow_run(&plan.mdp, &plan.class, &plan.weights, &glow_cfg, &mut rng)?
        }
        Algorithm::Hyglow => hyglow_run(&plan.mdp, &plan.class, &plan.weights, source, &hybrid, &mut rng)?,
        Algorithm::H2oFqi => {
            let mut learner = FqiLearner { class: &plan.class };
            h2o_run(&plan.mdp, &mut learner, source, setting.iterations, cfg.exact, &mut rng)?
        }
        Algorithm::H2oMle => {
            let models = plan.models.as_ref().expect("resolved with a model class");
            let mut learner = MleLearner { models };
            h2o_run(&plan.mdp, &mut learner, source, setting.iterations, cfg.exact, &mut rng)?
        }
        Algorithm::OfflineOnly => {
            let (record, report, cert) = run_offline(plan, &setting, offline_data.as_ref().expect("offline-only has data"))?;
            extra.push((".solver.json".to_string(), to_json_bytes(&report)));
            extra.push((".certificate.json".to_string(), to_json_bytes(&cert)));
            record
        }
    };

    let qstar_always_in_set = record
        .iterations
        .iter()
        .filter_map(|r| r.qstar_in_set)
        .fold(None, |acc: Option<bool>, v| Some(acc.unwrap_or(true) && v));
    let summary = RunSummary {
        run_id: id.clone(),
        algorithm: cfg.algorithm,
        seed,
        setting,
        j_star: record.j_star,
        risk: record.risk(),
        cumulative_regret: record.cumulative_regret(),
        rounds: record.rounds(),
        final_confset_size: record.iterations.last().and_then(|r| r.confset_size),
        qstar_always_in_set,
        delta: setting.delta,
        delta_total: setting.delta * record.rounds() as f64,
        config: cfg.clone(),
    };
    let mut files = vec![
        (".csv".to_string(), run_to_csv(&id, &record, cfg.algorithm.hybrid_columns())),
        (".json".to_string(), to_json_bytes(&summary)),
    ];
    files.extend(extra);
    Ok(files)
}

fn epsilon(p: &Parameters) -> Option<f64> {
    match p {
        Parameters::Preset { epsilon, .. } => Some(*epsilon),
        Parameters::Manual { .. } => None,
    }
}

/// One offline solve; the record holds a single round for the output policy.
fn run_offline(
    plan: &Plan,
    setting: &Setting,
    data: &glow_core::data::LayeredDataset,
) -> Result<(RunRecord, SolverReport, CertificateFile)> {
    let cfg = &plan.config;
    let mdp = &plan.mdp;
    let nu = plan.offline.as_ref().expect("offline-only has a source");
    let n = setting.offline_size;
    let evidence = if cfg.exact {
        Evidence::Exact {
            mdp,
            distribution: nu,
            nominal_size: n,
        }
    } else {
        Evidence::Sampled(data)
    };
    let solver = cfg.solver.expect("resolved with a solver");
    let h = mdp.horizon();
    let (sol, bound) = match solver {
        Solver::MaboCr => {
            let members = plan.weights.materialize(nu);
            let sol = mabo_cr(&evidence, &plan.class, &members, setting.gamma)?;
            let log_w = (members.len() as f64).ln();
            (sol, CcBound::mabo_cr(setting.gamma, h, setting.log_f, log_w, setting.delta))
        }
        Solver::Fqi => (fqi(&evidence, &plan.class)?, CcBound::fqi(setting.gamma, h, setting.log_f)),
        Solver::Mle => {
            let models = plan.models.as_ref().expect("resolved with a model class");
            let (_, sol) = mle_model(&evidence, models)?;
            (sol, CcBound::mle(setting.gamma, h, models.log_size(), setting.delta))
        }
    };
    let cert = cc_certificate(mdp, &[(1.0, sol.policy.clone())], nu, n, &bound)?;
    let mut record = RunRecord::new(j_value(mdp, &optimal_policy(mdp)));
    let mut round = IterationRecord::new(1, sol.index, sol.policy.clone(), j_value(mdp, &sol.policy));
    round.offline_size = Some(n);
    round.hybrid_size = Some(n);
    round.solver_objective = Some(sol.objective);
    record.push_round(round);
    Ok((
        record,
        SolverReport::new(solver.name(), &sol),
        CertificateFile::new(&bound, n, &cert),
    ))
}
