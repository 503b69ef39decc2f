//! Deterministic co-simulation kernel.
//!
//! Simulators are registered with a fixed integer step size and expose models
//! with named input and output attributes. Connections wire an output of one
//! model to an input of another. At every time where at least one simulator
//! is due, the due simulators are stepped in topological order of the
//! same-time (non-shifted) connections, ties broken by registration order.
//!
//! Data semantics:
//! * a non-shifted connection delivers the source output produced at the
//!   largest source step time `<= t`;
//! * a time-shifted connection delivers the source output produced at the
//!   largest source step time `< t`, falling back to the connection default;
//! * an unconnected input reads its declared default on every step.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Attribute value exchanged between simulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(untagged)]
pub enum Value {
    #[default]
    Null,
    Bool(bool),
    Float(f64),
    Text(String),
    Json(serde_json::Value),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Float(x) => Some(*x),
            Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            Value::Json(v) => v.as_f64(),
            _ => None,
        }
    }

    pub fn as_json(&self) -> Option<&serde_json::Value> {
        match self {
            Value::Json(v) => Some(v),
            _ => None,
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Float(x)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<serde_json::Value> for Value {
    fn from(v: serde_json::Value) -> Self {
        Value::Json(v)
    }
}

/// Input attribute with the value read when nothing is connected.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub name: String,
    pub default: Value,
}

impl InputSpec {
    pub fn new(name: impl Into<String>, default: impl Into<Value>) -> Self {
        Self {
            name: name.into(),
            default: default.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelSpec {
    pub id: String,
    pub inputs: Vec<InputSpec>,
    pub outputs: Vec<String>,
}

impl ModelSpec {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            ..Default::default()
        }
    }

    pub fn input(mut self, name: impl Into<String>, default: impl Into<Value>) -> Self {
        self.inputs.push(InputSpec::new(name, default));
        self
    }

    pub fn output(mut self, name: impl Into<String>) -> Self {
        self.outputs.push(name.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatorDescriptor {
    pub id: String,
    /// Step interval in seconds.
    pub step_size: u64,
    pub models: Vec<ModelSpec>,
}

impl SimulatorDescriptor {
    pub fn new(id: impl Into<String>, step_size: u64) -> Self {
        Self {
            id: id.into(),
            step_size,
            models: Vec::new(),
        }
    }

    pub fn model(mut self, model: ModelSpec) -> Self {
        self.models.push(model);
        self
    }

    fn validate(&self) -> Result<(), KernelError> {
        let bad = |msg: String| Err(KernelError::InvalidDescriptor(self.id.clone(), msg));
        if self.id.is_empty() || self.id.contains('.') {
            return bad("simulator id must be non-empty and contain no '.'".into());
        }
        if self.step_size == 0 {
            return bad("step_size must be >= 1".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.models {
            if m.id.is_empty() || m.id.contains('.') {
                return bad(format!("invalid model id {:?}", m.id));
            }
            if !seen.insert(m.id.as_str()) {
                return bad(format!("duplicate model id {:?}", m.id));
            }
            let mut attrs = std::collections::BTreeSet::new();
            let names = m.inputs.iter().map(|i| i.name.as_str()).chain(m.outputs.iter().map(String::as_str));
            for a in names {
                if a.is_empty() || a.contains('.') {
                    return bad(format!("invalid attribute name {:?} on model {}", a, m.id));
                }
                if !attrs.insert(a) {
                    return bad(format!("duplicate attribute {:?} on model {}", a, m.id));
                }
            }
        }
        Ok(())
    }
}

/// Fully qualified `simulator.model.attribute` address.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub simulator: String,
    pub model: String,
    pub attribute: String,
}

impl Endpoint {
    pub fn new(simulator: impl Into<String>, model: impl Into<String>, attribute: impl Into<String>) -> Self {
        Self {
            simulator: simulator.into(),
            model: model.into(),
            attribute: attribute.into(),
        }
    }

    /// Parses a dotted path. Returns `None` unless there are exactly three
    /// non-empty segments.
    pub fn parse(path: &str) -> Option<Self> {
        let mut it = path.split('.');
        let (s, m, a) = (it.next()?, it.next()?, it.next()?);
        if it.next().is_some() || s.is_empty() || m.is_empty() || a.is_empty() {
            return None;
        }
        Some(Self::new(s, m, a))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.simulator, self.model, self.attribute)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub time_shifted: bool,
    /// Value delivered before the source has produced anything. Falls back
    /// to the destination input's default when `None`.
    pub default: Option<Value>,
}

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("simulator {0:?} is already registered")]
    DuplicateSimulator(String),
    #[error("kernel is running; registration and wiring are closed")]
    AlreadyStarted,
    #[error("invalid descriptor for simulator {0:?}: {1}")]
    InvalidDescriptor(String, String),
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(Endpoint),
    #[error("endpoint {0} is not an output")]
    NotAnOutput(Endpoint),
    #[error("endpoint {0} is not an input")]
    NotAnInput(Endpoint),
    #[error("input {0} is already connected")]
    DestinationOccupied(Endpoint),
    #[error("connection {src} -> {dst} closes a cycle of non-shifted connections")]
    Cycle { src: Endpoint, dst: Endpoint },
    #[error("end time must be greater than the current time ({now}), got {end}")]
    InvalidEndTime { now: u64, end: u64 },
    #[error("simulator {simulator:?} failed at t={time}: {message}")]
    StepFailed { simulator: String, time: u64, message: String },
}

/// Inputs handed to a stepper, keyed by (model, attribute).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Inputs {
    values: BTreeMap<(String, String), Value>,
}

static NULL: Value = Value::Null;

impl Inputs {
    pub fn get(&self, model: &str, attribute: &str) -> &Value {
        self.values
            .get(&(model.to_string(), attribute.to_string()))
            .unwrap_or(&NULL)
    }

    pub fn f64(&self, model: &str, attribute: &str) -> Option<f64> {
        self.get(model, attribute).as_f64()
    }

    pub fn insert(&mut self, model: impl Into<String>, attribute: impl Into<String>, value: Value) {
        self.values.insert((model.into(), attribute.into()), value);
    }
}

/// Outputs produced by one step. Outputs not set keep their previous value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outputs {
    values: BTreeMap<(String, String), Value>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, model: impl Into<String>, attribute: impl Into<String>, value: impl Into<Value>) {
        self.values.insert((model.into(), attribute.into()), value.into());
    }

    pub fn get(&self, model: &str, attribute: &str) -> Option<&Value> {
        self.values.get(&(model.to_string(), attribute.to_string()))
    }
}

/// Per-simulator step behaviour.
pub trait Stepper {
    fn step(&mut self, time: u64, inputs: &Inputs) -> Result<Outputs, String>;
}

impl<F> Stepper for F
where
    F: FnMut(u64, &Inputs) -> Result<Outputs, String>,
{
    fn step(&mut self, time: u64, inputs: &Inputs) -> Result<Outputs, String> {
        self(time, inputs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SimHandle(usize);

impl SimHandle {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelClock {
    pub now: u64,
    pub end: u64,
    pub next_due: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KernelStats {
    /// Step counts in registration order.
    pub steps: Vec<(String, u64)>,
    /// Every (simulator, time) step in execution order.
    pub trace: Vec<(String, u64)>,
}

impl KernelStats {
    pub fn steps_of(&self, id: &str) -> u64 {
        self.steps
            .iter()
            .find(|(s, _)| s == id)
            .map(|(_, n)| *n)
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Default)]
struct OutputSlot {
    latest: Option<(u64, Value)>,
    previous: Option<(u64, Value)>,
}

struct SimEntry {
    desc: SimulatorDescriptor,
    stepper: Box<dyn Stepper>,
    next_due: u64,
    steps: u64,
}

pub struct Kernel {
    sims: Vec<SimEntry>,
    index: HashMap<String, usize>,
    connections: Vec<Connection>,
    by_dst: HashMap<Endpoint, usize>,
    store: HashMap<Endpoint, OutputSlot>,
    order: Vec<usize>,
    started: bool,
    now: u64,
    end: u64,
    trace: Vec<(String, u64)>,
}

impl Default for Kernel {
    fn default() -> Self {
        Self::new()
    }
}

impl Kernel {
    pub fn new() -> Self {
        Self {
            sims: Vec::new(),
            index: HashMap::new(),
            connections: Vec::new(),
            by_dst: HashMap::new(),
            store: HashMap::new(),
            order: Vec::new(),
            started: false,
            now: 0,
            end: 0,
            trace: Vec::new(),
        }
    }

    pub fn register_simulator(
        &mut self,
        descriptor: SimulatorDescriptor,
        stepper: impl Stepper + 'static,
    ) -> Result<SimHandle, KernelError> {
        if self.started {
            return Err(KernelError::AlreadyStarted);
        }
        if self.index.contains_key(&descriptor.id) {
            return Err(KernelError::DuplicateSimulator(descriptor.id));
        }
        descriptor.validate()?;
        let idx = self.sims.len();
        self.index.insert(descriptor.id.clone(), idx);
        self.sims.push(SimEntry {
            desc: descriptor,
            stepper: Box::new(stepper),
            next_due: 0,
            steps: 0,
        });
        self.order = self.topological_order().expect("new simulator has no edges");
        Ok(SimHandle(idx))
    }

    pub fn descriptor(&self, handle: SimHandle) -> &SimulatorDescriptor {
        &self.sims[handle.0].desc
    }

    pub fn simulator_ids(&self) -> impl Iterator<Item = &str> {
        self.sims.iter().map(|s| s.desc.id.as_str())
    }

    fn model(&self, ep: &Endpoint) -> Result<&ModelSpec, KernelError> {
        let sim = self
            .index
            .get(&ep.simulator)
            .ok_or_else(|| KernelError::UnknownEndpoint(ep.clone()))?;
        self.sims[*sim]
            .desc
            .models
            .iter()
            .find(|m| m.id == ep.model)
            .ok_or_else(|| KernelError::UnknownEndpoint(ep.clone()))
    }

    /// Whether `ep` names an output attribute of a registered model.
    pub fn is_output(&self, ep: &Endpoint) -> bool {
        self.model(ep).map(|m| m.outputs.contains(&ep.attribute)).unwrap_or(false)
    }

    /// Whether `ep` names an input attribute of a registered model.
    pub fn is_input(&self, ep: &Endpoint) -> bool {
        self.input_spec(ep).is_some()
    }

    pub fn input_spec(&self, ep: &Endpoint) -> Option<&InputSpec> {
        self.model(ep).ok()?.inputs.iter().find(|i| i.name == ep.attribute)
    }

    pub fn is_connected(&self, dst: &Endpoint) -> bool {
        self.by_dst.contains_key(dst)
    }

    pub fn connect(&mut self, src: Endpoint, dst: Endpoint, time_shifted: bool) -> Result<(), KernelError> {
        self.connect_with_default(src, dst, time_shifted, None)
    }

    pub fn connect_with_default(
        &mut self,
        src: Endpoint,
        dst: Endpoint,
        time_shifted: bool,
        default: Option<Value>,
    ) -> Result<(), KernelError> {
        if self.started {
            return Err(KernelError::AlreadyStarted);
        }
        let src_model = self.model(&src)?;
        if !src_model.outputs.contains(&src.attribute) {
            if src_model.inputs.iter().any(|i| i.name == src.attribute) {
                return Err(KernelError::NotAnOutput(src));
            }
            return Err(KernelError::UnknownEndpoint(src));
        }
        let dst_model = self.model(&dst)?;
        if !dst_model.inputs.iter().any(|i| i.name == dst.attribute) {
            if dst_model.outputs.contains(&dst.attribute) {
                return Err(KernelError::NotAnInput(dst));
            }
            return Err(KernelError::UnknownEndpoint(dst));
        }
        if self.by_dst.contains_key(&dst) {
            return Err(KernelError::DestinationOccupied(dst));
        }
        self.connections.push(Connection {
            src: src.clone(),
            dst: dst.clone(),
            time_shifted,
            default,
        });
        match self.topological_order() {
            Some(order) => {
                self.order = order;
                self.by_dst.insert(dst, self.connections.len() - 1);
                Ok(())
            }
            None => {
                self.connections.pop();
                Err(KernelError::Cycle { src, dst })
            }
        }
    }

    /// Kahn's algorithm over non-shifted edges; the ready simulator with the
    /// lowest registration index goes first. `None` on a cycle.
    fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.sims.len();
        let mut indeg = vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for c in self.connections.iter().filter(|c| !c.time_shifted) {
            let a = self.index[&c.src.simulator];
            let b = self.index[&c.dst.simulator];
            if a == b {
                return None;
            }
            if !succ[a].contains(&b) {
                succ[a].push(b);
                indeg[b] += 1;
            }
        }
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|i| indeg[*i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&i) = ready.iter().next() {
            ready.remove(&i);
            order.push(i);
            for &j in &succ[i] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.insert(j);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn clock(&self) -> KernelClock {
        KernelClock {
            now: self.now,
            end: self.end.max(self.now),
            next_due: self
                .sims
                .iter()
                .map(|s| (s.desc.id.clone(), s.next_due))
                .collect(),
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Latest value produced on an output endpoint.
    pub fn output(&self, ep: &Endpoint) -> Option<&Value> {
        self.store.get(ep).and_then(|s| s.latest.as_ref()).map(|(_, v)| v)
    }

    fn gather_inputs(&self, sim: usize, t: u64) -> Inputs {
        let mut inputs = Inputs::default();
        let desc = &self.sims[sim].desc;
        for m in &desc.models {
            for spec in &m.inputs {
                let dst = Endpoint::new(&desc.id, &m.id, &spec.name);
                let value = match self.by_dst.get(&dst) {
                    None => spec.default.clone(),
                    Some(&ci) => {
                        let conn = &self.connections[ci];
                        let fallback = || conn.default.clone().unwrap_or_else(|| spec.default.clone());
                        let slot = self.store.get(&conn.src);
                        let picked = slot.and_then(|s| {
                            if conn.time_shifted {
                                match &s.latest {
                                    Some((ts, v)) if *ts < t => Some(v),
                                    _ => s.previous.as_ref().map(|(_, v)| v),
                                }
                            } else {
                                s.latest.as_ref().map(|(_, v)| v)
                            }
                        });
                        picked.cloned().unwrap_or_else(fallback)
                    }
                };
                inputs.insert(m.id.clone(), spec.name.clone(), value);
            }
        }
        inputs
    }

    fn store_outputs(&mut self, sim: usize, t: u64, mut out: Outputs) {
        let desc = &self.sims[sim].desc;
        for m in &desc.models {
            for attr in &m.outputs {
                let ep = Endpoint::new(&desc.id, &m.id, attr);
                let slot = self.store.entry(ep).or_default();
                let value = match out.values.remove(&(m.id.clone(), attr.clone())) {
                    Some(v) => v,
                    None => match &slot.latest {
                        Some((_, v)) => v.clone(),
                        None => continue,
                    },
                };
                slot.previous = slot.latest.take();
                slot.latest = Some((t, value));
            }
        }
    }

    /// Steps every simulator due at a time strictly before `end`. Can be
    /// called repeatedly with increasing end times.
    pub fn advance(&mut self, end: u64) -> Result<(), KernelError> {
        if end <= self.now && !(end == 0 && self.now == 0) {
            return Err(KernelError::InvalidEndTime { now: self.now, end });
        }
        self.started = true;
        self.end = end;
        loop {
            let Some(t) = self.sims.iter().map(|s| s.next_due).min() else {
                break;
            };
            if t >= end {
                break;
            }
            self.now = t;
            for oi in 0..self.order.len() {
                let i = self.order[oi];
                if self.sims[i].next_due != t {
                    continue;
                }
                let inputs = self.gather_inputs(i, t);
                let entry = &mut self.sims[i];
                let out = entry.stepper.step(t, &inputs).map_err(|message| KernelError::StepFailed {
                    simulator: entry.desc.id.clone(),
                    time: t,
                    message,
                })?;
                entry.steps += 1;
                entry.next_due += entry.desc.step_size;
                self.trace.push((entry.desc.id.clone(), t));
                self.store_outputs(i, t, out);
            }
        }
        self.now = end;
        Ok(())
    }

    /// Runs from the current time to `end_time` and reports step counts.
    pub fn run_until(&mut self, end_time: u64) -> Result<KernelStats, KernelError> {
        if end_time == 0 {
            return Err(KernelError::InvalidEndTime { now: self.now, end: 0 });
        }
        self.advance(end_time)?;
        Ok(self.stats())
    }

    pub fn stats(&self) -> KernelStats {
        KernelStats {
            steps: self.sims.iter().map(|s| (s.desc.id.clone(), s.steps)).collect(),
            trace: self.trace.clone(),
        }
    }
}
