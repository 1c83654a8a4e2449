//! On-disk formats: MDP, class and occupancy files, run traces, solver and
//! certificate reports.
//!
//! Tables are nested arrays in `[layer][state][action]` order. Weight tables
//! may hold unbounded ratios, written as the strings `"inf"`/`"-inf"`.
//! Floats are written in shortest round-trip form, so a file read back
//! yields bit-identical values.

use std::io::Write;
use std::path::Path;

use glow_core::classes::{ValueClass, WeightClass, WeightFunction, WeightMode};
use glow_core::coverage::{CoverageReport, Occupancy};
use glow_core::mdp::{PolicyClass, RewardAtom, RewardDist};
use glow_core::offline::{CcBound, CcSource, CertificateReport, OfflineSolution};
use glow_core::record::RunRecord;
use glow_core::{Policy, TabularMdp, ValueFunction};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// `[layer][state][action]`.
pub type Table<T> = Vec<Vec<Vec<T>>>;

/// A float that may be infinite; JSON has no literal for that.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Num {
    Finite(f64),
    Text(NonFinite),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NonFinite {
    #[serde(rename = "inf")]
    Inf,
    #[serde(rename = "-inf")]
    NegInf,
}

impl From<f64> for Num {
    fn from(v: f64) -> Self {
        if v == f64::INFINITY {
            Num::Text(NonFinite::Inf)
        } else if v == f64::NEG_INFINITY {
            Num::Text(NonFinite::NegInf)
        } else {
            Num::Finite(v)
        }
    }
}

impl From<Num> for f64 {
    fn from(n: Num) -> f64 {
        match n {
            Num::Finite(v) => v,
            Num::Text(NonFinite::Inf) => f64::INFINITY,
            Num::Text(NonFinite::NegInf) => f64::NEG_INFINITY,
        }
    }
}

/// `#[serde(with = "inf_float")]` for single `f64` fields that may be infinite.
pub mod inf_float {
    use super::Num;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        Num::from(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Num::deserialize(d).map(f64::from)
    }
}

fn nest<T: Clone>(flat: &[T], s: usize, a: usize) -> Table<T> {
    flat.chunks(s * a)
        .map(|layer| layer.chunks(a).map(<[T]>::to_vec).collect())
        .collect()
}

fn flatten<T>(table: Table<T>, s: usize, a: usize, h: usize, what: &str) -> Result<Vec<T>> {
    if table.len() != h || table.iter().any(|l| l.len() != s || l.iter().any(|r| r.len() != a)) {
        return Err(BenchError::Format(format!("{what}: expected a {h} x {s} x {a} table")));
    }
    Ok(table.into_iter().flatten().flatten().collect())
}

/// Serialized [`TabularMdp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub initial_dist: Vec<f64>,
    /// `[h][x][a][x']`.
    pub transitions: Table<Vec<f64>>,
    /// `[h][x][a]` atoms.
    pub rewards: Table<Vec<RewardAtom>>,
}

impl From<&TabularMdp> for MdpFile {
    fn from(mdp: &TabularMdp) -> Self {
        let (s, a) = (mdp.num_states(), mdp.num_actions());
        let rows: Vec<Vec<f64>> = mdp.transitions().chunks(s).map(<[f64]>::to_vec).collect();
        let atoms: Vec<Vec<RewardAtom>> = mdp.rewards().iter().map(|r| r.atoms().to_vec()).collect();
        Self {
            num_states: s,
            num_actions: a,
            horizon: mdp.horizon(),
            initial_dist: mdp.initial_dist().to_vec(),
            transitions: nest(&rows, s, a),
            rewards: nest(&atoms, s, a),
        }
    }
}

impl TryFrom<MdpFile> for TabularMdp {
    type Error = BenchError;

    fn try_from(f: MdpFile) -> Result<Self> {
        let (s, a, h) = (f.num_states, f.num_actions, f.horizon);
        let rows = flatten(f.transitions, s, a, h, "transitions")?;
        if rows.iter().any(|r| r.len() != s) {
            return Err(BenchError::Format(format!("transitions: every row needs {s} entries")));
        }
        let rewards = flatten(f.rewards, s, a, h, "rewards")?
            .into_iter()
            .map(RewardDist::new)
            .collect();
        Ok(TabularMdp::new(s, a, h, rows.concat(), rewards, f.initial_dist)?)
    }
}

pub fn mdp_to_json(mdp: &TabularMdp) -> String {
    serde_json::to_string_pretty(&MdpFile::from(mdp)).expect("plain data serializes")
}

pub fn mdp_from_json(text: &str) -> Result<TabularMdp> {
    let file: MdpFile = serde_json::from_str(text).map_err(|e| BenchError::json("<mdp>", e))?;
    file.try_into()
}

pub fn read_mdp(path: &Path) -> Result<TabularMdp> {
    let file: MdpFile = read_json(path)?;
    file.try_into()
}

/// One member of a weight class file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightEntry {
    pub base: Table<Num>,
    #[serde(default)]
    pub negative: bool,
    /// Only this layer is active when set.
    #[serde(default)]
    pub layer: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyEntry {
    /// `[h][x]` action.
    Deterministic { actions: Vec<Vec<usize>> },
    /// `[h][x][a]` probability.
    Randomized { probs: Table<f64> },
}

/// A value, weight or policy class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassFile {
    Values {
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        #[serde(default)]
        qstar_index: Option<usize>,
        members: Vec<Table<f64>>,
    },
    Weights {
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        members: Vec<WeightEntry>,
    },
    Policies {
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        policies: Vec<PolicyEntry>,
    },
}

impl ClassFile {
    pub fn from_values(class: &ValueClass) -> Self {
        let first = &class.members()[0];
        let (s, a) = (first.num_states(), first.num_actions());
        Self::Values {
            num_states: s,
            num_actions: a,
            horizon: first.horizon(),
            qstar_index: class.qstar_index(),
            members: class.members().iter().map(|f| nest(f.values(), s, a)).collect(),
        }
    }

    /// Static classes only; oracle classes have no finite listing.
    pub fn from_weights(class: &WeightClass) -> Result<Self> {
        let WeightMode::Static(members) = class.mode() else {
            return Err(BenchError::Format("oracle weight classes cannot be written out".into()));
        };
        let first = &members[0];
        let (s, a) = (first.num_states(), first.num_actions());
        Ok(Self::Weights {
            num_states: s,
            num_actions: a,
            horizon: first.horizon(),
            members: members
                .iter()
                .map(|w| {
                    let base: Vec<Num> = w.base().iter().map(|&v| Num::from(v)).collect();
                    WeightEntry {
                        base: nest(&base, s, a),
                        negative: w.is_negative(),
                        layer: w.mask(),
                    }
                })
                .collect(),
        })
    }

    pub fn from_policies(class: &PolicyClass, num_states: usize, num_actions: usize, horizon: usize) -> Self {
        let policies = class
            .policies()
            .iter()
            .map(|p| match p {
                Policy::Deterministic { actions, .. } => PolicyEntry::Deterministic {
                    actions: actions.chunks(num_states).map(<[usize]>::to_vec).collect(),
                },
                Policy::Randomized { probs, .. } => PolicyEntry::Randomized {
                    probs: nest(probs, num_states, num_actions),
                },
            })
            .collect();
        Self::Policies {
            num_states,
            num_actions,
            horizon,
            policies,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        match *self {
            Self::Values {
                num_states,
                num_actions,
                horizon,
                ..
            }
            | Self::Weights {
                num_states,
                num_actions,
                horizon,
                ..
            }
            | Self::Policies {
                num_states,
                num_actions,
                horizon,
                ..
            } => (num_states, num_actions, horizon),
        }
    }

    pub fn into_values(self) -> Result<ValueClass> {
        let Self::Values {
            num_states: s,
            num_actions: a,
            horizon: h,
            qstar_index,
            members,
        } = self
        else {
            return Err(BenchError::Format("expected a value class file".into()));
        };
        let members = members
            .into_iter()
            .map(|t| Ok(ValueFunction::from_values(s, a, h, flatten(t, s, a, h, "value table")?)?))
            .collect::<Result<Vec<_>>>()?;
        if qstar_index.is_some_and(|q| q >= members.len()) {
            return Err(BenchError::Format("qstar_index is past the end of the class".into()));
        }
        Ok(ValueClass::new(members)?.with_qstar_index(qstar_index))
    }

    pub fn into_weights(self) -> Result<WeightClass> {
        let Self::Weights {
            num_states: s,
            num_actions: a,
            horizon: h,
            members,
        } = self
        else {
            return Err(BenchError::Format("expected a weight class file".into()));
        };
        let members = members
            .into_iter()
            .map(|e| {
                if e.layer.is_some_and(|l| l >= h) {
                    return Err(BenchError::Format("weight layer mask is out of range".into()));
                }
                let base = flatten(e.base, s, a, h, "weight table")?.into_iter().map(f64::from).collect();
                Ok(WeightFunction::new(s, a, h, base)?.with_sign(e.negative).with_mask(e.layer))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WeightClass::from_static(members)?)
    }

    /// The policy class a coverability query ranges over: explicit policies,
    /// or the greedy policies of a value class.
    pub fn into_policy_class(self) -> Result<PolicyClass> {
        match self {
            Self::Values { .. } => Ok(self.into_values()?.policy_class()),
            Self::Policies {
                num_states: s,
                num_actions: a,
                horizon: h,
                policies,
            } => {
                let list = policies
                    .into_iter()
                    .map(|p| match p {
                        PolicyEntry::Deterministic { actions } => {
                            if actions.len() != h || actions.iter().any(|r| r.len() != s) {
                                return Err(BenchError::Format(format!("policy actions: expected {h} x {s}")));
                            }
                            Ok(Policy::deterministic(s, a, actions.concat())?)
                        }
                        PolicyEntry::Randomized { probs } => {
                            Ok(Policy::randomized(s, a, flatten(probs, s, a, h, "policy")?)?)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PolicyClass::explicit(list)?)
            }
            Self::Weights { .. } => Err(BenchError::Format("a weight class does not define policies".into())),
        }
    }
}

/// Serialized [`Occupancy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupancyFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub mass: Table<f64>,
}

impl From<&Occupancy> for OccupancyFile {
    fn from(d: &Occupancy) -> Self {
        let (s, a) = (d.num_states(), d.num_actions());
        Self {
            num_states: s,
            num_actions: a,
            horizon: d.horizon(),
            mass: nest(d.mass(), s, a),
        }
    }
}

impl TryFrom<OccupancyFile> for Occupancy {
    type Error = BenchError;

    fn try_from(f: OccupancyFile) -> Result<Self> {
        let (s, a, h) = (f.num_states, f.num_actions, f.horizon);
        Ok(Occupancy::new(s, a, h, flatten(f.mass, s, a, h, "occupancy")?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRow {
    pub layer: usize,
    pub state: usize,
    pub action: usize,
    pub mass: f64,
}

/// `layer,state,action,mass`, one row per cell.
pub fn occupancy_to_csv(d: &Occupancy) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for h in 0..d.horizon() {
        for x in 0..d.num_states() {
            for a in 0..d.num_actions() {
                w.serialize(OccupancyRow {
                    layer: h,
                    state: x,
                    action: a,
                    mass: d.get(h, x, a),
                })
                .expect("in-memory write");
            }
        }
    }
    w.into_inner().expect("in-memory flush")
}

/// Reads [`occupancy_to_csv`] output; every cell must be present exactly once.
pub fn occupancy_from_csv(bytes: &[u8], num_states: usize, num_actions: usize, horizon: usize) -> Result<Occupancy> {
    let mut mass = vec![f64::NAN; num_states * num_actions * horizon];
    let mut r = csv::Reader::from_reader(bytes);
    for row in r.deserialize::<OccupancyRow>() {
        let row = row.map_err(|e| BenchError::Csv {
            path: "<occupancy>".into(),
            source: e,
        })?;
        if row.layer >= horizon || row.state >= num_states || row.action >= num_actions {
            return Err(BenchError::Format(format!("occupancy cell {row:?} is out of range")));
        }
        let slot = &mut mass[(row.layer * num_states + row.state) * num_actions + row.action];
        if !slot.is_nan() {
            return Err(BenchError::Format(format!("occupancy cell {row:?} is repeated")));
        }
        *slot = row.mass;
    }
    if mass.iter().any(|v| v.is_nan()) {
        return Err(BenchError::Format("occupancy table is missing cells".into()));
    }
    Ok(Occupancy::new(num_states, num_actions, horizon, mass)?)
}

/// One round of a run as written to CSV. Online runs leave the last three
/// columns out entirely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: String,
    pub t: usize,
    pub f_index: usize,
    pub j_pi_t: f64,
    pub inst_regret: f64,
    pub cum_regret: f64,
    pub confset_size: Option<usize>,
    pub optimism_ok: Option<bool>,
    #[serde(default)]
    pub offline_size: Option<usize>,
    #[serde(default)]
    pub hybrid_size: Option<usize>,
    #[serde(default)]
    pub solver_objective: Option<f64>,
}

#[derive(Serialize)]
struct OnlineRow<'a> {
    run_id: &'a str,
    t: usize,
    f_index: usize,
    j_pi_t: f64,
    inst_regret: f64,
    cum_regret: f64,
    confset_size: Option<usize>,
    optimism_ok: Option<bool>,
}

/// CSV trace of a run; `hybrid` adds `offline_size`, `hybrid_size`, `solver_objective`.
pub fn run_to_csv(run_id: &str, record: &RunRecord, hybrid: bool) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for it in &record.iterations {
        let res = if hybrid {
            w.serialize(RunRow {
                run_id: run_id.to_string(),
                t: it.t,
                f_index: it.f_index,
                j_pi_t: it.j_pi,
                inst_regret: it.inst_regret,
                cum_regret: it.cum_regret,
                confset_size: it.confset_size,
                optimism_ok: it.optimism_ok,
                offline_size: it.offline_size,
                hybrid_size: it.hybrid_size,
                solver_objective: it.solver_objective,
            })
        } else {
            w.serialize(OnlineRow {
                run_id,
                t: it.t,
                f_index: it.f_index,
                j_pi_t: it.j_pi,
                inst_regret: it.inst_regret,
                cum_regret: it.cum_regret,
                confset_size: it.confset_size,
                optimism_ok: it.optimism_ok,
            })
        };
        res.expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn read_run_csv(path: &Path) -> Result<Vec<RunRow>> {
    let wrap = |e| BenchError::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    r.deserialize().collect::<std::result::Result<Vec<RunRow>, _>>().map_err(wrap)
}

/// Serialized [`OfflineSolution`] without the value table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub solver: String,
    pub index: usize,
    pub layer_indices: Vec<usize>,
    #[serde(with = "inf_float")]
    pub objective: f64,
    pub layer_objectives: Vec<Num>,
}

impl SolverReport {
    pub fn new(solver: &str, sol: &OfflineSolution) -> Self {
        Self {
            solver: solver.to_string(),
            index: sol.index,
            layer_indices: sol.layer_indices.clone(),
            objective: sol.objective,
            layer_objectives: sol.layer_objectives.iter().map(|&v| Num::from(v)).collect(),
        }
    }
}

/// Both sides of the certificate plus the bound that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub source: CcSource,
    pub gamma: f64,
    pub n: usize,
    #[serde(with = "inf_float")]
    pub a_gamma: f64,
    #[serde(with = "inf_float")]
    pub b_gamma: f64,
    pub risk: f64,
    #[serde(with = "inf_float")]
    pub coverage_term: f64,
    #[serde(with = "inf_float")]
    pub additive_term: f64,
    #[serde(with = "inf_float")]
    pub bound: f64,
    pub holds: bool,
    #[serde(with = "inf_float")]
    pub slack: f64,
    pub cc_star: Vec<f64>,
    pub cc_output: Vec<f64>,
}

impl CertificateFile {
    pub fn new(bound: &CcBound, n: usize, r: &CertificateReport) -> Self {
        Self {
            source: bound.source,
            gamma: bound.gamma,
            n,
            a_gamma: bound.a_gamma,
            b_gamma: bound.b_gamma,
            risk: r.risk,
            coverage_term: r.coverage_term,
            additive_term: r.additive_term,
            bound: r.bound,
            holds: r.holds,
            slack: r.slack,
            cc_star: r.cc_star.clone(),
            cc_output: r.cc_output.clone(),
        }
    }
}

/// Coverability result as written by the CLI and the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageFile {
    pub c_cov: f64,
    pub per_layer: Vec<f64>,
    pub certified_sup: f64,
    pub policies: usize,
    pub mu_star: OccupancyFile,
}

impl From<&CoverageReport> for CoverageFile {
    fn from(r: &CoverageReport) -> Self {
        Self {
            c_cov: r.c_cov,
            per_layer: r.per_layer.clone(),
            certified_sup: r.certified_sup(),
            policies: r.policy_ratios.len(),
            mu_star: OccupancyFile::from(&r.mu_star),
        }
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| BenchError::json(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("plain data serializes");
    out.push(b'\n');
    out
}

/// Writes through a temporary file in the same directory, then renames, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| BenchError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| BenchError::io(path, e))?;
    tmp.persist(path).map_err(|e| BenchError::io(path, e.error))?;
    Ok(())
}
