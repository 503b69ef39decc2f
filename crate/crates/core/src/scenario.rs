//! Scenario and run documents.
//!
//! A run file is a scenario document, optionally carrying a `run` section
//! written by experiment expansion. Load-profile and weather data may be given
//! inline or as CSV paths relative to the document; [`load_document_value`]
//! inlines CSV references so expanded run files are self-contained.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_yaml::Value;
use thiserror::Error;

use crate::grid::{
    read_load_csv, read_weather_csv, Bus, BusId, GridModel, Line, Load, LoadProfile, PvUnit, Sgen, WeatherSample,
    WeatherSeries,
};
use crate::market::{BidStrategy, VoltageBand};
use crate::net::{AttackRule, Link, Node, NetworkTopology};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// Slash-delimited document path, e.g. `agent/sensors/0/id`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{} validation error(s):\n{}", .0.len(), .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
}

impl ScenarioError {
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        match self {
            ScenarioError::Invalid(d) => d.clone(),
            other => vec![Diagnostic {
                path: String::new(),
                message: other.to_string(),
            }],
        }
    }
}

fn default_interval() -> u64 {
    900
}

fn default_gate_closure() -> u64 {
    600
}

fn default_temp_coeff() -> f64 {
    0.004
}

fn default_population() -> usize {
    8
}

fn default_init_std() -> f64 {
    0.5
}

fn default_episode_length() -> u64 {
    96
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub run_id: String,
    #[serde(default)]
    pub experiment: Option<String>,
    #[serde(default)]
    pub index: u64,
    #[serde(default)]
    pub factors: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadDoc {
    pub id: String,
    pub bus: BusId,
    pub p_mw: f64,
    pub q_mvar: f64,
    /// Name of a profile in `data/profiles`; constant load when absent.
    #[serde(default)]
    pub profile: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvDoc {
    pub id: String,
    pub bus: BusId,
    pub p_peak_mw: f64,
    #[serde(default = "default_temp_coeff")]
    pub temp_coeff: f64,
    pub q_min_mvar: f64,
    pub q_max_mvar: f64,
}

impl PvDoc {
    pub fn unit(&self) -> PvUnit {
        PvUnit {
            bus: self.bus,
            p_peak_mw: self.p_peak_mw,
            temp_coeff: self.temp_coeff,
            q_min_mvar: self.q_min_mvar,
            q_max_mvar: self.q_max_mvar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    #[serde(default)]
    pub loads: Vec<LoadDoc>,
    #[serde(default)]
    pub pv_units: Vec<PvDoc>,
}

impl GridSection {
    /// Model at nominal load with every PV unit at zero output.
    pub fn base_model(&self) -> GridModel {
        GridModel {
            base_mva: self.base_mva,
            buses: self.buses.clone(),
            lines: self.lines.clone(),
            loads: self
                .loads
                .iter()
                .map(|l| Load {
                    bus: l.bus,
                    p_mw: l.p_mw,
                    q_mvar: l.q_mvar,
                })
                .collect(),
            sgens: self
                .pv_units
                .iter()
                .map(|p| Sgen {
                    bus: p.bus,
                    p_mw: 0.0,
                    q_mvar: 0.0,
                    q_min_mvar: p.q_min_mvar,
                    q_max_mvar: p.q_max_mvar,
                })
                .collect(),
        }
    }
}

/// A load profile, inline or as a CSV reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ProfileSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution_s: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

/// Weather series, inline as `[t_s, ghi_w_m2, t_air_c]` rows or as a CSV
/// reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct WeatherSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub profiles: BTreeMap<String, ProfileSource>,
    /// Without weather every PV unit produces no active power.
    #[serde(default)]
    pub weather: Option<WeatherSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidderDoc {
    pub agent_id: String,
    /// PV unit whose reactive headroom is offered.
    pub asset: String,
    /// Network node the bidder sends from.
    pub node: String,
    pub strategy: BidStrategy,
    pub p0: f64,
    /// Also offer downward headroom (absorption) as a second offer.
    #[serde(default)]
    pub offer_down: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    #[serde(default = "default_interval")]
    pub interval_s: u64,
    /// Offers arriving later than this after interval start are excluded.
    #[serde(default = "default_gate_closure")]
    pub gate_closure_s: u64,
    #[serde(default)]
    pub band: VoltageBand,
    pub operator_node: String,
    #[serde(default)]
    pub bidders: Vec<BidderDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    #[serde(default)]
    pub rules: Vec<AttackRule>,
}

impl NetworkSection {
    pub fn topology(&self) -> NetworkTopology {
        NetworkTopology {
            nodes: self.nodes.clone(),
            links: self.links.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    /// Cross-entropy method over a linear policy.
    Cem,
    /// Uniform setpoints from the agent's seeded stream.
    Random,
    /// Setpoints read from a fixed list, cycling.
    Replay,
    /// No agent in the loop; actuated inputs keep their declared defaults.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerDoc {
    pub kind: LearnerKind,
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    /// Replay setpoints, one row per step.
    #[serde(default)]
    pub setpoints: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorDoc {
    pub id: String,
    #[serde(default)]
    pub range: Option<[f64; 2]>,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    /// Reading reported before the first step; defaults to the range midpoint
    /// or the first enumerated value.
    #[serde(default)]
    pub initial: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorDoc {
    pub id: String,
    #[serde(default)]
    pub range: Option<[f64; 2]>,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    pub default: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Damage,
    Profit,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveDoc {
    pub kind: ObjectiveKind,
    /// Market agents whose profit is rewarded (profit objective).
    #[serde(default)]
    pub agents: Vec<String>,
    #[serde(default)]
    pub cost_per_mvar: f64,
    /// Aggregate name → weight (custom objective).
    #[serde(default)]
    pub weights: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDoc {
    pub id: String,
    pub learner: LearnerDoc,
    #[serde(default)]
    pub sensors: Vec<SensorDoc>,
    #[serde(default)]
    pub actuators: Vec<ActuatorDoc>,
    pub objective: ObjectiveDoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseMode {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseDoc {
    pub name: String,
    pub mode: PhaseMode,
    /// Test: episodes to run. Train with the CEM learner: generations.
    pub episodes: u64,
    #[serde(default = "default_episode_length")]
    pub episode_length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunMeta>,
    pub grid: GridSection,
    #[serde(default)]
    pub data: DataSection,
    pub market: MarketSection,
    pub network: NetworkSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentDoc>,
    pub schedule: Vec<PhaseDoc>,
}

impl ScenarioDocument {
    pub fn run_id(&self) -> String {
        self.run.as_ref().map(|r| r.run_id.clone()).unwrap_or_else(|| self.name.clone())
    }

    pub fn pv(&self, id: &str) -> Option<&PvDoc> {
        self.grid.pv_units.iter().find(|p| p.id == id)
    }

    /// Learner in effect; `None` when there is no agent section.
    pub fn learner_kind(&self) -> LearnerKind {
        self.agent.as_ref().map_or(LearnerKind::None, |a| a.learner.kind)
    }
}

/// A validated scenario with its data series resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub doc: ScenarioDocument,
    /// One entry per load, aligned with `doc.grid.loads`.
    pub load_profiles: Vec<Option<LoadProfile>>,
    pub weather: Option<WeatherSeries>,
}

impl Scenario {
    pub fn base_model(&self) -> GridModel {
        self.doc.grid.base_model()
    }

    pub fn interval(&self) -> u64 {
        self.doc.market.interval_s
    }

    pub fn weather_at(&self, t: u64) -> WeatherSample {
        match &self.weather {
            Some(w) => w.at(t),
            None => WeatherSample {
                t,
                ghi_w_m2: 0.0,
                t_air_c: 25.0,
            },
        }
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> ScenarioError {
    ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Reads a YAML document and inlines every CSV reference under `data`.
pub fn load_document_value(path: &Path) -> Result<Value, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut value: Value = serde_yaml::from_str(&text).map_err(|e| ScenarioError::Schema(e.to_string()))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    inline_data(&mut value, &dir)?;
    Ok(value)
}

fn csv_entry(node: &mut Value) -> Option<String> {
    let m = node.as_mapping_mut()?;
    let csv = m.get("csv")?.as_str()?.to_string();
    m.remove("csv");
    Some(csv)
}

pub fn inline_data(doc: &mut Value, base_dir: &Path) -> Result<(), ScenarioError> {
    let Some(data) = doc.get_mut("data") else {
        return Ok(());
    };
    if let Some(profiles) = data.get_mut("profiles").and_then(Value::as_mapping_mut) {
        for (name, src) in profiles.iter_mut() {
            if let Some(rel) = csv_entry(src) {
                let path = base_dir.join(&rel);
                let file = fs::File::open(&path).map_err(|e| io_err(&path, e))?;
                let (res, values) = read_load_csv(file).map_err(|e| ScenarioError::Invalid(vec![Diagnostic {
                    path: format!("data/profiles/{}/csv", name.as_str().unwrap_or("?")),
                    message: format!("{}: {e}", path.display()),
                }]))?;
                let m = src.as_mapping_mut().expect("csv entry is a mapping");
                m.insert("resolution_s".into(), Value::Number(res.into()));
                m.insert(
                    "values".into(),
                    Value::Sequence(values.into_iter().map(|v| Value::Number(v.into())).collect()),
                );
            }
        }
    }
    if let Some(weather) = data.get_mut("weather") {
        if let Some(rel) = csv_entry(weather) {
            let path = base_dir.join(&rel);
            let file = fs::File::open(&path).map_err(|e| io_err(&path, e))?;
            let series = read_weather_csv(file).map_err(|e| ScenarioError::Invalid(vec![Diagnostic {
                path: "data/weather/csv".into(),
                message: format!("{}: {e}", path.display()),
            }]))?;
            let rows = series
                .samples
                .iter()
                .map(|s| {
                    Value::Sequence(vec![
                        Value::Number(s.t.into()),
                        Value::Number(s.ghi_w_m2.into()),
                        Value::Number(s.t_air_c.into()),
                    ])
                })
                .collect();
            weather
                .as_mapping_mut()
                .expect("csv entry is a mapping")
                .insert("samples".into(), Value::Sequence(rows));
        }
    }
    Ok(())
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    from_value(load_document_value(path)?)
}

/// Parses YAML text; CSV references are resolved against `base_dir`.
pub fn from_yaml_str(text: &str, base_dir: &Path) -> Result<Scenario, ScenarioError> {
    let mut value: Value = serde_yaml::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))?;
    inline_data(&mut value, base_dir)?;
    from_value(value)
}

pub fn from_value(value: Value) -> Result<Scenario, ScenarioError> {
    if value.is_null() {
        return Err(ScenarioError::Schema("document is empty".into()));
    }
    let doc: ScenarioDocument = serde_yaml::from_value(value).map_err(|e| ScenarioError::Schema(e.to_string()))?;
    validate(doc)
}

struct Diags(Vec<Diagnostic>);

impl Diags {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(Diagnostic {
            path: path.into(),
            message: message.into(),
        });
    }
}

fn check_space(d: &mut Diags, path: &str, range: Option<[f64; 2]>, values: &Option<Vec<f64>>) {
    match (range, values) {
        (Some([lo, hi]), None) => {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                d.push(format!("{path}/range"), format!("need finite lo < hi, got [{lo}, {hi}]"));
            }
        }
        (None, Some(v)) => {
            if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                d.push(format!("{path}/values"), "need a non-empty list of finite values");
            }
        }
        _ => d.push(path, "exactly one of range or values is required"),
    }
}

/// Checks every cross-reference and builds the resolved scenario.
/// Narrows a grid model error such as "line 2 ..." to `grid/lines/2`.
fn grid_error_path(message: &str) -> String {
    let body = message.strip_prefix("invalid grid model: ").unwrap_or(message);
    let mut words = body.split_whitespace();
    let section = match words.next() {
        Some("line") => "lines",
        Some("load") => "loads",
        Some("sgen") => "pv_units",
        _ => return "grid".into(),
    };
    match words.next().map(|w| w.trim_end_matches(':')).and_then(|w| w.parse::<usize>().ok()) {
        Some(i) => format!("grid/{section}/{i}"),
        None => "grid".into(),
    }
}

pub fn validate(doc: ScenarioDocument) -> Result<Scenario, ScenarioError> {
    let mut d = Diags(Vec::new());
    if doc.schema_version != SCENARIO_SCHEMA_VERSION {
        d.push(
            "schema_version",
            format!("expected {SCENARIO_SCHEMA_VERSION}, got {}", doc.schema_version),
        );
    }
    if doc.name.is_empty() {
        d.push("name", "must not be empty");
    }
    if let Some(run) = &doc.run {
        if run.run_id.is_empty() || run.run_id.contains(['/', '\\']) {
            d.push("run/run_id", "must be non-empty and contain no path separators");
        }
    }

    // grid
    let model = doc.grid.base_model();
    if let Err(e) = model.validate() {
        d.push(grid_error_path(&e.to_string()), e.to_string());
    }
    let bus_ids: BTreeSet<BusId> = doc.grid.buses.iter().map(|b| b.id).collect();
    let mut ids = BTreeSet::new();
    for (i, l) in doc.grid.loads.iter().enumerate() {
        if !ids.insert(l.id.as_str()) {
            d.push(format!("grid/loads/{i}/id"), format!("duplicate id {:?}", l.id));
        }
        if let Some(p) = &l.profile {
            if !doc.data.profiles.contains_key(p) {
                d.push(format!("grid/loads/{i}/profile"), format!("unknown profile {p:?}"));
            }
        }
    }
    for (i, p) in doc.grid.pv_units.iter().enumerate() {
        let path = format!("grid/pv_units/{i}");
        if p.id.is_empty() || p.id.contains('.') {
            d.push(format!("{path}/id"), format!("invalid id {:?}", p.id));
        }
        if !ids.insert(p.id.as_str()) {
            d.push(format!("{path}/id"), format!("duplicate id {:?}", p.id));
        }
        if !bus_ids.contains(&p.bus) {
            d.push(format!("{path}/bus"), format!("unknown bus {}", p.bus));
        }
        if let Err(e) = p.unit().validate() {
            d.push(path, e.to_string());
        }
    }

    // data
    let mut profiles = BTreeMap::new();
    for (name, src) in &doc.data.profiles {
        let path = format!("data/profiles/{name}");
        match (src.resolution_s, &src.values, &src.csv) {
            (_, _, Some(_)) => d.push(format!("{path}/csv"), "CSV reference was not inlined"),
            (Some(res), Some(values), None) => {
                let p = LoadProfile {
                    resolution_s: res,
                    values: values.clone(),
                    base_p_mw: 1.0,
                };
                match p.validate() {
                    Ok(()) => {
                        profiles.insert(name.clone(), p);
                    }
                    Err(e) => d.push(path, e.to_string()),
                }
            }
            _ => d.push(path, "needs resolution_s and values, or csv"),
        }
    }
    let weather = match &doc.data.weather {
        None => None,
        Some(WeatherSource { csv: Some(_), .. }) => {
            d.push("data/weather/csv", "CSV reference was not inlined");
            None
        }
        Some(WeatherSource { samples: Some(rows), .. }) => {
            if let Some(r) = rows.iter().find(|r| !(r[0] >= 0.0) || r[0].fract() != 0.0) {
                d.push("data/weather/samples", format!("time {} is not a whole number of seconds", r[0]));
            }
            let series = WeatherSeries {
                samples: rows
                    .iter()
                    .map(|r| WeatherSample {
                        t: r[0].max(0.0) as u64,
                        ghi_w_m2: r[1],
                        t_air_c: r[2],
                    })
                    .collect(),
            };
            match series.validate() {
                Ok(()) => Some(series),
                Err(e) => {
                    d.push("data/weather", e.to_string());
                    None
                }
            }
        }
        Some(_) => {
            d.push("data/weather", "needs samples or csv");
            None
        }
    };
    let load_profiles = doc
        .grid
        .loads
        .iter()
        .map(|l| {
            l.profile.as_ref().and_then(|p| profiles.get(p)).map(|p| LoadProfile {
                base_p_mw: l.p_mw,
                ..p.clone()
            })
        })
        .collect();

    // network
    let node_ids: BTreeSet<&str> = doc.network.nodes.iter().map(|n| n.id.as_str()).collect();
    if let Err(e) = doc.network.topology().validate() {
        d.push("network", e.to_string());
    }
    let mut rule_ids = BTreeSet::new();
    for (i, r) in doc.network.rules.iter().enumerate() {
        let path = format!("network/rules/{i}");
        if let Err(e) = r.validate() {
            d.push(path.clone(), e.to_string());
        }
        if !rule_ids.insert(r.rule_id.as_str()) {
            d.push(format!("{path}/rule_id"), format!("duplicate rule id {:?}", r.rule_id));
        }
        if node_ids.contains(format!("rule_{}", r.rule_id).as_str()) {
            d.push(format!("{path}/rule_id"), "clashes with a node id");
        }
        if !node_ids.contains(r.at_node.as_str()) {
            d.push(format!("{path}/at_node"), format!("unknown node {:?}", r.at_node));
        }
    }

    // market
    let m = &doc.market;
    if m.interval_s == 0 {
        d.push("market/interval_s", "must be positive");
    }
    if m.gate_closure_s > m.interval_s {
        d.push("market/gate_closure_s", "must not exceed interval_s");
    }
    if let Err(e) = m.band.validate() {
        d.push("market/band", e.to_string());
    }
    if !node_ids.contains(m.operator_node.as_str()) {
        d.push("market/operator_node", format!("unknown node {:?}", m.operator_node));
    }
    let mut agents = BTreeSet::new();
    let mut assets = BTreeSet::new();
    let mut nodes_used = BTreeSet::new();
    for (i, b) in m.bidders.iter().enumerate() {
        let path = format!("market/bidders/{i}");
        if b.agent_id.is_empty() || b.agent_id.contains('.') || b.agent_id == "operator" {
            d.push(format!("{path}/agent_id"), format!("invalid agent id {:?}", b.agent_id));
        }
        if !agents.insert(b.agent_id.as_str()) {
            d.push(format!("{path}/agent_id"), format!("duplicate agent id {:?}", b.agent_id));
        }
        if doc.pv(&b.asset).is_none() {
            d.push(format!("{path}/asset"), format!("unknown PV unit {:?}", b.asset));
        }
        if !assets.insert(b.asset.as_str()) {
            d.push(format!("{path}/asset"), format!("asset {:?} already has a bidder", b.asset));
        }
        if !node_ids.contains(b.node.as_str()) {
            d.push(format!("{path}/node"), format!("unknown node {:?}", b.node));
        } else if b.node == m.operator_node {
            d.push(format!("{path}/node"), "bidders cannot share the operator node");
        } else if !nodes_used.insert(b.node.as_str()) {
            d.push(format!("{path}/node"), format!("node {:?} already hosts a bidder", b.node));
        }
        if !(b.p0 >= 0.0) || !b.p0.is_finite() {
            d.push(format!("{path}/p0"), "must be finite and >= 0");
        }
    }

    // schedule
    if doc.schedule.is_empty() {
        d.push("schedule", "needs at least one phase");
    }
    for (i, p) in doc.schedule.iter().enumerate() {
        if p.episodes == 0 {
            d.push(format!("schedule/{i}/episodes"), "must be at least 1");
        }
        if p.episode_length == 0 {
            d.push(format!("schedule/{i}/episode_length"), "must be at least 1");
        }
    }

    // agent
    if let Some(a) = &doc.agent {
        if a.id.is_empty() {
            d.push("agent/id", "must not be empty");
        }
        let l = &a.learner;
        if l.kind == LearnerKind::Cem && l.population < 4 {
            d.push("agent/learner/population", "the cross-entropy learner needs at least 4 candidates");
        }
        if !(l.init_std > 0.0) || !l.init_std.is_finite() {
            d.push("agent/learner/init_std", "must be positive");
        }
        if l.kind == LearnerKind::Replay {
            if l.setpoints.is_empty() {
                d.push("agent/learner/setpoints", "replay needs at least one row");
            }
            for (i, row) in l.setpoints.iter().enumerate() {
                if row.len() != a.actuators.len() {
                    d.push(
                        format!("agent/learner/setpoints/{i}"),
                        format!("expected {} values, got {}", a.actuators.len(), row.len()),
                    );
                }
            }
        }
        for (i, s) in a.sensors.iter().enumerate() {
            check_space(&mut d, &format!("agent/sensors/{i}"), s.range, &s.values);
        }
        for (i, act) in a.actuators.iter().enumerate() {
            let path = format!("agent/actuators/{i}");
            check_space(&mut d, &path, act.range, &act.values);
            let space = crate::agent::Space::from_doc(act.range, act.values.as_deref());
            if let Some(space) = space {
                if !space.contains(act.default) {
                    d.push(format!("{path}/default"), format!("{} lies outside the value space", act.default));
                }
            }
        }
        let o = &a.objective;
        for (i, ag) in o.agents.iter().enumerate() {
            if !agents.contains(ag.as_str()) {
                d.push(format!("agent/objective/agents/{i}"), format!("unknown market agent {ag:?}"));
            }
        }
        if o.kind == ObjectiveKind::Profit && o.agents.is_empty() {
            d.push("agent/objective/agents", "profit needs at least one market agent");
        }
        if !o.cost_per_mvar.is_finite() {
            d.push("agent/objective/cost_per_mvar", "must be finite");
        }
        for (name, w) in &o.weights {
            if !w.is_finite() {
                d.push(format!("agent/objective/weights/{name}"), "weight must be finite");
            }
            if !crate::agent::is_aggregate_name(name, &doc) {
                d.push(format!("agent/objective/weights/{name}"), format!("unknown aggregate {name:?}"));
            }
        }
        if o.kind == ObjectiveKind::Custom && o.weights.is_empty() {
            d.push("agent/objective/weights", "custom objective needs at least one weight");
        }
    }

    if !d.0.is_empty() {
        return Err(ScenarioError::Invalid(d.0));
    }

    let scenario = Scenario {
        doc,
        load_profiles,
        weather,
    };
    // endpoint checks need the assembled kernel
    let mut d = Diags(Vec::new());
    match crate::world::World::build(&scenario, 0, &crate::telemetry::EventBuffer::new(), None) {
        Err(e) => d.push("", format!("cannot assemble simulators: {e}")),
        Ok(world) => {
            if let Some(a) = &scenario.doc.agent {
                for (i, s) in a.sensors.iter().enumerate() {
                    match crate::kernel::Endpoint::parse(&s.id) {
                        Some(ep) if world.kernel().is_output(&ep) => {}
                        _ => d.push(
                            format!("agent/sensors/{i}/id"),
                            format!("{} does not name a simulator output", s.id),
                        ),
                    }
                }
                let mut seen = BTreeSet::new();
                for (i, act) in a.actuators.iter().enumerate() {
                    match crate::kernel::Endpoint::parse(&act.id) {
                        Some(ep) if world.kernel().is_input(&ep) => {
                            if world.kernel().is_connected(&ep) {
                                d.push(
                                    format!("agent/actuators/{i}/id"),
                                    format!("{} is already driven by another simulator", act.id),
                                );
                            }
                            if !seen.insert(act.id.as_str()) {
                                d.push(format!("agent/actuators/{i}/id"), format!("{} is listed twice", act.id));
                            }
                        }
                        _ => d.push(
                            format!("agent/actuators/{i}/id"),
                            format!("{} does not name a simulator input", act.id),
                        ),
                    }
                }
            }
        }
    }
    if !d.0.is_empty() {
        return Err(ScenarioError::Invalid(d.0));
    }
    Ok(scenario)
}

/// The document re-encoded as YAML.
pub fn to_yaml(value: &Value) -> String {
    serde_yaml::to_string(value).expect("YAML values serialize")
}
