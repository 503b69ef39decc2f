//! Experiment documents and their expansion into concrete run definitions.
//!
//! Factors address nodes of the base scenario by slash-delimited paths
//! (`market/band/v_min_pu`, `network/rules/0/enabled`). Full-factorial
//! designs vary the last factor fastest; random designs sample the product
//! uniformly with replacement from a stream seeded by `base_seed`.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_yaml::{Mapping, Value};
use thiserror::Error;

pub const EXPERIMENT_SCHEMA_VERSION: u32 = 1;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One SplitMix64 output for state `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(base ^ (index + 1) * 0x9E3779B97F4A7C15)`, wrapping.
pub fn derive_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(base_seed ^ index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA))
}

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("experiment schema error: {0}")]
    Schema(String),
    #[error("factor {factor:?}: path {path:?} does not exist in the base scenario")]
    DanglingPath { factor: String, path: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Factor {
    pub name: String,
    pub path: String,
    pub levels: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    #[default]
    FullFactorial,
    Random {
        n: usize,
    },
}

/// The experiment document as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentDocument {
    pub schema_version: u32,
    pub name: String,
    /// Path of the base scenario, relative to the experiment file.
    pub base_scenario: String,
    #[serde(default)]
    pub factors: Vec<Factor>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub base_seed: u64,
}

impl ExperimentDocument {
    pub fn parse(text: &str) -> Result<Self, DesignError> {
        let doc: Self = serde_yaml::from_str(text).map_err(|e| DesignError::Schema(e.to_string()))?;
        if doc.schema_version != EXPERIMENT_SCHEMA_VERSION {
            return Err(DesignError::Schema(format!(
                "schema_version: expected {EXPERIMENT_SCHEMA_VERSION}, got {}",
                doc.schema_version
            )));
        }
        Ok(doc)
    }
}

/// A validated experiment bound to its base scenario document.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub name: String,
    pub factors: Vec<Factor>,
    pub strategy: Strategy,
    pub base_seed: u64,
    pub base: Value,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

pub fn parse_experiment(doc: ExperimentDocument, base: Value) -> Result<Experiment, DesignError> {
    if !valid_name(&doc.name) {
        return Err(DesignError::Invalid(format!(
            "name: {:?} must be non-empty and use only letters, digits, '_' or '-'",
            doc.name
        )));
    }
    let mut names = BTreeSet::new();
    for (i, f) in doc.factors.iter().enumerate() {
        if f.name.is_empty() {
            return Err(DesignError::Invalid(format!("factors/{i}/name: must not be empty")));
        }
        if !names.insert(f.name.as_str()) {
            return Err(DesignError::Invalid(format!("factors/{i}/name: duplicate factor name {:?}", f.name)));
        }
        if f.levels.is_empty() {
            return Err(DesignError::Invalid(format!("factors/{i}/levels: factor {:?} needs at least one level", f.name)));
        }
        if lookup(&base, &f.path).is_none() {
            return Err(DesignError::DanglingPath {
                factor: f.name.clone(),
                path: f.path.clone(),
            });
        }
    }
    if let Strategy::Random { n } = doc.strategy {
        if n == 0 {
            return Err(DesignError::Invalid("strategy/n: must be at least 1".into()));
        }
    }
    Ok(Experiment {
        name: doc.name,
        factors: doc.factors,
        strategy: doc.strategy,
        base_seed: doc.base_seed,
        base,
    })
}

fn segments(path: &str) -> impl Iterator<Item = &str> {
    path.split('/').filter(|s| !s.is_empty())
}

fn child<'a>(node: &'a Value, seg: &str) -> Option<&'a Value> {
    match node {
        Value::Mapping(m) => m.get(seg),
        Value::Sequence(s) => s.get(seg.parse::<usize>().ok()?),
        _ => None,
    }
}

fn child_mut<'a>(node: &'a mut Value, seg: &str) -> Option<&'a mut Value> {
    match node {
        Value::Mapping(m) => m.get_mut(seg),
        Value::Sequence(s) => s.get_mut(seg.parse::<usize>().ok()?),
        _ => None,
    }
}

/// Node at a slash-delimited path; sequence elements are addressed by index.
pub fn lookup<'a>(doc: &'a Value, path: &str) -> Option<&'a Value> {
    if segments(path).next().is_none() {
        return None;
    }
    segments(path).try_fold(doc, child)
}

/// Replaces the node at `path`, which must exist.
pub fn substitute(doc: &mut Value, path: &str, value: Value) -> bool {
    let mut node = doc;
    let mut any = false;
    for seg in segments(path) {
        match child_mut(node, seg) {
            Some(n) => node = n,
            None => return false,
        }
        any = true;
    }
    if any {
        *node = value;
    }
    any
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunDefinition {
    pub run_id: String,
    pub index: usize,
    pub seed: u64,
    /// Position in the full factorial product.
    pub combination: usize,
    /// Earlier run with the same combination (random designs only).
    pub duplicate_of: Option<String>,
    pub assignment: Vec<(String, Value)>,
    /// Scenario with factor values substituted and `run`/`seed` filled in.
    pub document: Value,
}

impl RunDefinition {
    pub fn assignment_mapping(&self) -> Mapping {
        self.assignment
            .iter()
            .map(|(k, v)| (Value::String(k.clone()), v.clone()))
            .collect()
    }
}

impl Experiment {
    pub fn combinations(&self) -> usize {
        self.factors.iter().map(|f| f.levels.len()).product()
    }

    /// Level index of every factor for product position `combination`.
    fn decode(&self, mut combination: usize) -> Vec<usize> {
        let mut idx = vec![0; self.factors.len()];
        for (i, f) in self.factors.iter().enumerate().rev() {
            idx[i] = combination % f.levels.len();
            combination /= f.levels.len();
        }
        idx
    }
}

pub fn expand_runs(experiment: &Experiment) -> Vec<RunDefinition> {
    let total = experiment.combinations();
    let combos: Vec<usize> = match experiment.strategy {
        Strategy::FullFactorial => (0..total).collect(),
        Strategy::Random { n } => {
            let mut rng = ChaCha8Rng::seed_from_u64(experiment.base_seed);
            (0..n).map(|_| rng.gen_range(0..total)).collect()
        }
    };
    let width = combos.len().saturating_sub(1).to_string().len().max(3);
    let mut first_seen: BTreeMap<usize, String> = BTreeMap::new();
    combos
        .into_iter()
        .enumerate()
        .map(|(index, combination)| {
            let run_id = format!("{}_{:0width$}", experiment.name, index);
            let seed = derive_seed(experiment.base_seed, index as u64);
            let levels = experiment.decode(combination);
            let mut document = experiment.base.clone();
            let mut assignment = Vec::new();
            for (f, &li) in experiment.factors.iter().zip(&levels) {
                let v = f.levels[li].clone();
                let ok = substitute(&mut document, &f.path, v.clone());
                debug_assert!(ok, "paths are checked at parse time");
                assignment.push((f.name.clone(), v));
            }
            let duplicate_of = match first_seen.get(&combination) {
                Some(id) => Some(id.clone()),
                None => {
                    first_seen.insert(combination, run_id.clone());
                    None
                }
            };
            let mut run = Mapping::new();
            run.insert("run_id".into(), Value::String(run_id.clone()));
            run.insert("experiment".into(), Value::String(experiment.name.clone()));
            run.insert("index".into(), Value::Number((index as u64).into()));
            let factors: Mapping = assignment
                .iter()
                .map(|(k, v)| (Value::String(k.clone()), v.clone()))
                .collect();
            run.insert("factors".into(), Value::Mapping(factors));
            if let Value::Mapping(m) = &mut document {
                m.insert("seed".into(), Value::Number(seed.into()));
                m.insert("run".into(), Value::Mapping(run));
            }
            RunDefinition {
                run_id,
                index,
                seed,
                combination,
                duplicate_of,
                assignment,
                document,
            }
        })
        .collect()
}

/// Index document listing every run with its factor assignment.
pub fn index_document(experiment: &Experiment, runs: &[RunDefinition]) -> Value {
    let mut doc = Mapping::new();
    doc.insert("schema_version".into(), Value::Number(EXPERIMENT_SCHEMA_VERSION.into()));
    doc.insert("experiment".into(), Value::String(experiment.name.clone()));
    let entries = runs
        .iter()
        .map(|r| {
            let mut e = Mapping::new();
            e.insert("run_id".into(), Value::String(r.run_id.clone()));
            e.insert("file".into(), Value::String(format!("{}.yaml", r.run_id)));
            e.insert("seed".into(), Value::Number(r.seed.into()));
            e.insert("factors".into(), Value::Mapping(r.assignment_mapping()));
            if let Some(d) = &r.duplicate_of {
                e.insert("duplicate_of".into(), Value::String(d.clone()));
            }
            Value::Mapping(e)
        })
        .collect();
    doc.insert("runs".into(), Value::Sequence(entries));
    Value::Mapping(doc)
}
