//! Balanced AC grid model: slack and PQ buses joined by π-model lines, with
//! constant-power loads and static generators (negative loads).

mod powerflow;
mod profile;
mod pv;

pub use powerflow::{
    branch_flows, solve_power_flow, voltage_sensitivity, BranchFlow, GridState, MAX_ITERATIONS, MISMATCH_TOLERANCE,
};
pub use profile::{load_profile_value, read_load_csv, read_weather_csv, LoadProfile, WeatherSeries, WeatherSample};
pub use pv::{pv_output, PvUnit};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pq,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    /// Voltage magnitude setpoint; only meaningful for the slack bus.
    #[serde(default = "one")]
    pub vm_setpoint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r_pu: f64,
    pub x_pu: f64,
    #[serde(default)]
    pub b_shunt_pu: f64,
    pub rating_mva: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub bus: BusId,
    pub p_mw: f64,
    pub q_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sgen {
    pub bus: BusId,
    pub p_mw: f64,
    pub q_mvar: f64,
    pub q_min_mvar: f64,
    pub q_max_mvar: f64,
}

impl Sgen {
    /// Pure reactive injection with limits spanning zero and `q`.
    pub fn reactive(bus: BusId, q_mvar: f64) -> Self {
        Self {
            bus,
            p_mw: 0.0,
            q_mvar,
            q_min_mvar: q_mvar.min(0.0),
            q_max_mvar: q_mvar.max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridModel {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    #[serde(default)]
    pub loads: Vec<Load>,
    #[serde(default)]
    pub sgens: Vec<Sgen>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid model: {0}")]
    Invalid(String),
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} pu)")]
    NotConverged { iterations: usize, mismatch: f64 },
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
    #[error("malformed data file: {0}")]
    Data(String),
}

impl GridModel {
    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |m: String| Err(GridError::Invalid(m));
        if !(self.base_mva > 0.0) {
            return bad(format!("base_mva must be positive, got {}", self.base_mva));
        }
        if self.buses.is_empty() {
            return bad("no buses".into());
        }
        let mut ids = BTreeSet::new();
        for b in &self.buses {
            if !ids.insert(b.id) {
                return bad(format!("duplicate bus id {}", b.id));
            }
        }
        let slacks = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slacks != 1 {
            return bad(format!("exactly one slack bus required, found {slacks}"));
        }
        let slack = &self.buses[self.slack_index()];
        if !(slack.vm_setpoint > 0.0) {
            return bad(format!("slack vm_setpoint must be positive, got {}", slack.vm_setpoint));
        }
        for (i, l) in self.lines.iter().enumerate() {
            for b in [l.from_bus, l.to_bus] {
                if !ids.contains(&b) {
                    return bad(format!("line {i} references unknown bus {b}"));
                }
            }
            if l.from_bus == l.to_bus {
                return bad(format!("line {i} connects bus {} to itself", l.from_bus));
            }
            if !(l.r_pu >= 0.0) {
                return bad(format!("line {i}: r_pu must be >= 0"));
            }
            if !(l.x_pu > 0.0) {
                return bad(format!("line {i}: x_pu must be > 0"));
            }
            if !(l.rating_mva > 0.0) {
                return bad(format!("line {i}: rating_mva must be > 0"));
            }
            if !l.b_shunt_pu.is_finite() {
                return bad(format!("line {i}: b_shunt_pu must be finite"));
            }
        }
        for (i, l) in self.loads.iter().enumerate() {
            if !ids.contains(&l.bus) {
                return bad(format!("load {i} references unknown bus {}", l.bus));
            }
            if !(l.p_mw.is_finite() && l.q_mvar.is_finite()) {
                return bad(format!("load {i} has non-finite power"));
            }
        }
        for (i, s) in self.sgens.iter().enumerate() {
            if !ids.contains(&s.bus) {
                return bad(format!("sgen {i} references unknown bus {}", s.bus));
            }
            if !(s.p_mw.is_finite() && s.q_mvar.is_finite()) {
                return bad(format!("sgen {i} has non-finite power"));
            }
            if !(s.q_min_mvar <= s.q_mvar && s.q_mvar <= s.q_max_mvar) {
                return bad(format!(
                    "sgen {i}: q_mvar {} outside [{}, {}]",
                    s.q_mvar, s.q_min_mvar, s.q_max_mvar
                ));
            }
        }
        if !self.is_connected() {
            return bad("line graph is not connected".into());
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let pos = self.positions();
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            let (a, b) = (pos[&l.from_bus], pos[&l.to_bus]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Bus id → position in `buses`.
    pub fn positions(&self) -> BTreeMap<BusId, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn bus_position(&self, id: BusId) -> Result<usize, GridError> {
        self.buses
            .iter()
            .position(|b| b.id == id)
            .ok_or(GridError::UnknownBus(id))
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated model has a slack bus")
    }

    /// Net scheduled injection per bus in MW / Mvar (generation minus load).
    pub fn net_injection_mw(&self) -> Vec<(f64, f64)> {
        let pos = self.positions();
        let mut inj = vec![(0.0, 0.0); self.buses.len()];
        for l in &self.loads {
            let i = pos[&l.bus];
            inj[i].0 -= l.p_mw;
            inj[i].1 -= l.q_mvar;
        }
        for s in &self.sgens {
            let i = pos[&s.bus];
            inj[i].0 += s.p_mw;
            inj[i].1 += s.q_mvar;
        }
        inj
    }

    /// The reference feeder: buses 1–2–3–4 in a radial chain, bus 1 slack at
    /// 1.0 pu, identical lines r=0.01, x=0.03 pu on a 10 MVA base rated 5 MVA,
    /// and 1.2 MW / 0.4 Mvar loads at buses 2, 3 and 4.
    pub fn reference_feeder() -> Self {
        let bus = |id, kind| Bus {
            id: BusId(id),
            kind,
            vm_setpoint: 1.0,
        };
        let line = |a, b| Line {
            from_bus: BusId(a),
            to_bus: BusId(b),
            r_pu: 0.01,
            x_pu: 0.03,
            b_shunt_pu: 0.0,
            rating_mva: 5.0,
        };
        let load = |b| Load {
            bus: BusId(b),
            p_mw: 1.2,
            q_mvar: 0.4,
        };
        GridModel {
            base_mva: 10.0,
            buses: vec![
                bus(1, BusKind::Slack),
                bus(2, BusKind::Pq),
                bus(3, BusKind::Pq),
                bus(4, BusKind::Pq),
            ],
            lines: vec![line(1, 2), line(2, 3), line(3, 4)],
            loads: vec![load(2), load(3), load(4)],
            sgens: Vec::new(),
        }
    }

    /// Copy with every load scaled by `factor`.
    pub fn with_load_scale(&self, factor: f64) -> Self {
        let mut m = self.clone();
        for l in &mut m.loads {
            l.p_mw *= factor;
            l.q_mvar *= factor;
        }
        m
    }
}
