//! Assembles a scenario into a co-simulation kernel.
//!
//! Simulators, in registration order: `agent` (actuator source, only when an
//! agent drives actuators), `profiles` (load and PV feed-in), `bidders`
//! (scripted market participants), `net` (communication network), `market`
//! (reactive-power operator) and `grid` (power flow). All step once per
//! market interval. At interval start T:
//!
//! * bidders read notifications delivered during the previous net window and
//!   send offers stamped T;
//! * net applies rule toggles and restarts, injects frames and simulates the
//!   window [T, T + interval);
//! * market clears the offers that reached the operator by T + gate closure;
//! * grid solves with the accepted reactive dispatch.
//!
//! Operator notifications travel back over the network in the next window.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::design::derive_seed;
use crate::grid::{pv_output, solve_power_flow, BusId, GridError, GridModel, LoadProfile, PvUnit, WeatherSeries};
use crate::kernel::{Endpoint, Inputs, Kernel, KernelError, ModelSpec, Outputs, SimulatorDescriptor, Value};
use crate::market::{baseline_bid, clear_market, AssetState, BidStrategy, Offer, VoltageBand};
use crate::net::{micros_to_seconds, DropReason, NetError, NetEvent, NetworkSim, MICROS_PER_SECOND};
use crate::scenario::{BidderDoc, Scenario};
use crate::telemetry::EventBuffer;

/// `derive_seed` indices of the per-episode random streams.
pub const NET_STREAM: u64 = 0;
pub const MARKET_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("actuator {0:?} does not name a free simulator input")]
    Actuator(String),
}

pub struct World {
    kernel: Kernel,
    actuators: Option<Rc<RefCell<Vec<f64>>>>,
    interval: u64,
    band: VoltageBand,
    bus_ids: Vec<BusId>,
    agents: Vec<String>,
    node_ids: Vec<String>,
}

fn json_list(v: &Value) -> Vec<Json> {
    match v.as_json() {
        Some(Json::Array(items)) => items.clone(),
        _ => Vec::new(),
    }
}

fn canonical(v: &Json) -> String {
    crate::telemetry::to_canonical_string(v).unwrap_or_else(|_| v.to_string())
}

struct ProfilesSim {
    base: GridModel,
    loads: Vec<(String, Option<LoadProfile>, f64, f64)>,
    pv: Vec<(String, PvUnit)>,
    weather: Option<WeatherSeries>,
}

impl ProfilesSim {
    fn step(&mut self, t: u64) -> Result<Outputs, String> {
        let mut out = Outputs::new();
        let mut model = self.base.clone();
        for (i, (id, profile, p, q)) in self.loads.iter().enumerate() {
            let factor = profile.as_ref().map_or(1.0, |pr| pr.factor_at(t));
            model.loads[i].p_mw = p * factor;
            model.loads[i].q_mvar = q * factor;
            out.set(id.as_str(), "p_mw", model.loads[i].p_mw);
        }
        for (i, (id, unit)) in self.pv.iter().enumerate() {
            let p = match &self.weather {
                Some(w) => pv_output(unit, &w.at(t)),
                None => 0.0,
            };
            model.sgens[i].p_mw = p;
            out.set(id.as_str(), "p_mw", p);
        }
        let v = serde_json::to_value(&model).map_err(|e| e.to_string())?;
        out.set("feeder", "model", Value::Json(v));
        Ok(out)
    }
}

struct Bidder {
    doc: BidderDoc,
    bus: BusId,
    q_min: f64,
    q_max: f64,
    operator_node: String,
    last_notice: f64,
}

struct BiddersSim {
    bidders: Vec<Bidder>,
    rng: ChaCha8Rng,
    interval: u64,
}

impl BiddersSim {
    fn step(&mut self, t: u64, inputs: &Inputs) -> Result<Outputs, String> {
        let k = t / self.interval;
        let mut out = Outputs::new();
        for b in &mut self.bidders {
            let id = b.doc.agent_id.as_str();
            for d in json_list(inputs.get(id, "inbox")) {
                let notice = d
                    .get("payload")
                    .and_then(Json::as_str)
                    .and_then(|p| serde_json::from_str::<Json>(p).ok());
                match notice.as_ref().and_then(|n| n.get("kind")).and_then(Json::as_str) {
                    Some("accepted") => b.last_notice = 1.0,
                    Some("rejected") => b.last_notice = 0.0,
                    _ => {}
                }
            }
            let price_override = inputs.f64(id, "price").filter(|p| *p >= 0.0);
            let mut directions = vec![b.q_max];
            if b.doc.offer_down {
                directions.push(b.q_min);
            }
            let mut outbox = Vec::new();
            let (mut price_out, mut mvar) = (0.0, 0.0);
            for headroom in directions {
                let asset = AssetState {
                    agent_id: b.doc.agent_id.clone(),
                    bus: b.bus,
                    headroom_mvar: headroom,
                };
                let (strategy, p0) = match price_override {
                    Some(p) => (BidStrategy::Static, p),
                    None => (b.doc.strategy, b.doc.p0),
                };
                let Some(offer) = baseline_bid(&asset, strategy, p0, k, &mut self.rng) else {
                    continue;
                };
                if outbox.is_empty() {
                    price_out = offer.price_eur_per_mvar;
                }
                mvar += offer.q_mvar.abs();
                outbox.push(json!({"dst": b.operator_node, "payload": offer.to_wire()}));
            }
            out.set(id, "outbox", Value::Json(Json::Array(outbox)));
            out.set(id, "offer_price", price_out);
            out.set(id, "offer_mvar", mvar);
            out.set(id, "last_notice", b.last_notice);
        }
        Ok(out)
    }
}

struct NetSim {
    net: NetworkSim,
    nodes: Vec<String>,
    rules: Vec<String>,
    interval: u64,
    events: EventBuffer,
}

fn net_record(events: &EventBuffer, e: &NetEvent) {
    let (t, kind, payload) = match e {
        NetEvent::Send {
            time,
            frame_id,
            src,
            dst,
            size_bytes,
        } => (*time, "net.send", json!({"frame_id": frame_id, "src": src, "dst": dst, "size_bytes": size_bytes})),
        NetEvent::Deliver {
            time,
            frame_id,
            src,
            dst,
            size_bytes,
        } => (
            *time,
            "net.deliver",
            json!({"frame_id": frame_id, "src": src, "dst": dst, "size_bytes": size_bytes}),
        ),
        NetEvent::Drop {
            time,
            frame_id,
            src,
            node,
            size_bytes,
            reason,
        } => {
            let reason = match reason {
                DropReason::SourceOffline => "source_offline",
                DropReason::NodeOffline => "node_offline",
                DropReason::LinkLoss => "link_loss",
                DropReason::Rule => "rule",
            };
            (
                *time,
                "net.drop",
                json!({"frame_id": frame_id, "src": src, "node": node, "size_bytes": size_bytes, "reason": reason}),
            )
        }
        NetEvent::Rule {
            time,
            frame_id,
            src,
            node,
            rule_id,
        } => (*time, "net.rule", json!({"frame_id": frame_id, "src": src, "node": node, "rule_id": rule_id})),
        NetEvent::Restart { time, node, until } => {
            (*time, "net.restart", json!({"node": node, "until": micros_to_seconds(*until)}))
        }
        NetEvent::Hop { .. } => return,
    };
    events.push(micros_to_seconds(t), "net", kind, payload);
}

impl NetSim {
    fn step(&mut self, t: u64, inputs: &Inputs) -> Result<Outputs, String> {
        let now = t * MICROS_PER_SECOND;
        self.net.run_until(now);
        for r in &self.rules {
            let on = inputs.f64(&format!("rule_{r}"), "enabled").unwrap_or(0.0) > 0.5;
            self.net.set_rule_enabled(r, on).map_err(|e| e.to_string())?;
        }
        for n in &self.nodes {
            let downtime = inputs.f64(n, "restart").unwrap_or(0.0);
            if downtime > 0.0 {
                self.net.restart_node(n, downtime).map_err(|e| e.to_string())?;
            }
        }
        for n in &self.nodes {
            for msg in json_list(inputs.get(n, "outbox")) {
                let dst = msg.get("dst").and_then(Json::as_str).ok_or("outbox entry without dst")?;
                let payload = msg.get("payload").and_then(Json::as_str).ok_or("outbox entry without payload")?;
                let frame = self.net.frame(n, dst, now, payload.to_string());
                self.net.send(frame).map_err(|e| e.to_string())?;
            }
        }
        self.net.run_until(now + self.interval * MICROS_PER_SECOND);
        let mut events = self.net.take_events();
        events.sort_by_key(event_time);
        for e in &events {
            net_record(&self.events, e);
        }
        let mut out = Outputs::new();
        for n in &self.nodes {
            let inbox: Vec<Json> = self
                .net
                .take_inbox(n)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|d| {
                    json!({
                        "src": d.frame.src,
                        "frame_id": d.frame.frame_id,
                        "payload": d.frame.payload,
                        "delivered_at": micros_to_seconds(d.delivered_at),
                    })
                })
                .collect();
            let c = self.net.read_counters(n, self.interval as f64).map_err(|e| e.to_string())?;
            out.set(n.as_str(), "inbox", Value::Json(Json::Array(inbox)));
            out.set(n.as_str(), "utilization", c.utilization);
            out.set(n.as_str(), "bytes_in", c.bytes_in as f64);
            out.set(n.as_str(), "bytes_out", c.bytes_out as f64);
            out.set(n.as_str(), "frames_dropped", c.frames_dropped as f64);
        }
        Ok(out)
    }
}

fn event_time(e: &NetEvent) -> u64 {
    match e {
        NetEvent::Send { time, .. }
        | NetEvent::Hop { time, .. }
        | NetEvent::Rule { time, .. }
        | NetEvent::Deliver { time, .. }
        | NetEvent::Drop { time, .. }
        | NetEvent::Restart { time, .. } => *time,
    }
}

struct MarketAgent {
    agent_id: String,
    node: String,
    bus: BusId,
    q_min: f64,
    q_max: f64,
}

struct MarketSim {
    band: VoltageBand,
    interval: u64,
    gate_closure: u64,
    agents: Vec<MarketAgent>,
    events: EventBuffer,
}

impl MarketSim {
    fn step(&mut self, t: u64, inputs: &Inputs) -> Result<Outputs, String> {
        let k = t / self.interval;
        let model: GridModel = match inputs.get("operator", "model").as_json() {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| format!("grid model input: {e}"))?,
            None => return Err("no grid model on the operator input".into()),
        };
        let deadline = (t + self.gate_closure) as f64;
        let mut offers: Vec<Offer> = Vec::new();
        for d in json_list(inputs.get("operator", "inbox")) {
            let payload = d.get("payload").and_then(Json::as_str).unwrap_or_default();
            let arrived = d.get("delivered_at").and_then(Json::as_f64).unwrap_or(f64::INFINITY);
            let (status, offer) = match Offer::from_wire(payload) {
                Err(e) => (format!("malformed: {e}"), None),
                Ok(o) => {
                    let status = match self.agents.iter().find(|a| a.agent_id == o.agent_id) {
                        None => "unknown agent".to_string(),
                        Some(_) if o.interval != k => "stale".to_string(),
                        Some(_) if arrived > deadline => "late".to_string(),
                        Some(a) if a.bus != o.bus => "bus mismatch".to_string(),
                        Some(a) => match o.validate(a.q_min, a.q_max) {
                            Err(e) => format!("invalid: {e}"),
                            Ok(()) if offers.iter().any(|x| x.offer_id == o.offer_id) => "duplicate".to_string(),
                            Ok(()) => "admitted".to_string(),
                        },
                    };
                    (status, Some(o))
                }
            };
            let record = match &offer {
                Some(o) => json!({
                    "offer_id": o.offer_id, "agent_id": o.agent_id, "bus": o.bus.0, "q_mvar": o.q_mvar,
                    "price_eur_per_mvar": o.price_eur_per_mvar, "interval": o.interval,
                    "arrived_at": arrived, "status": status,
                }),
                None => json!({"arrived_at": arrived, "status": status}),
            };
            self.events.push(t as f64, "market", "market.offer", record);
            if status == "admitted" {
                offers.push(offer.expect("admitted offers parsed"));
            }
        }

        let result = clear_market(&offers, &model, &self.band, k);
        let accepted: Vec<Json> = result
            .accepted
            .iter()
            .map(|a| {
                json!({"offer_id": a.offer_id, "agent_id": a.agent_id, "bus": a.bus.0,
                       "q_mvar": a.q_mvar, "price_eur_per_mvar": a.price_eur_per_mvar})
            })
            .collect();
        // every registered bidder appears, including those shut out
        let mut payments: BTreeMap<String, f64> = self.agents.iter().map(|a| (a.agent_id.clone(), 0.0)).collect();
        payments.extend(result.payments.iter().map(|(k, v)| (k.clone(), *v)));
        self.events.push(
            t as f64,
            "market",
            "market.clearing",
            json!({
                "interval": k,
                "offers": offers.len(),
                "accepted": accepted,
                "payments": payments,
                "total_cost": result.total_cost(),
                "resolved": result.resolved,
                "aborted": result.aborted,
                "iterations": result.iterations,
            }),
        );

        let mut out = Outputs::new();
        let mut outbox = Vec::new();
        for o in &offers {
            let node = &self.agents.iter().find(|a| a.agent_id == o.agent_id).expect("admitted agent").node;
            let won = result.accepted.iter().find(|a| a.offer_id == o.offer_id);
            let notice = json!({
                "kind": if won.is_some() { "accepted" } else { "rejected" },
                "offer_id": o.offer_id,
                "interval": k,
                "q_mvar": won.map_or(0.0, |a| a.q_mvar),
            });
            outbox.push(json!({"dst": node, "payload": canonical(&notice)}));
        }
        let clearing_price = result
            .accepted
            .iter()
            .map(|a| a.price_eur_per_mvar)
            .fold(0.0, f64::max);
        out.set("operator", "outbox", Value::Json(Json::Array(outbox)));
        out.set("operator", "clearing_price", clearing_price);
        out.set(
            "operator",
            "accepted_mvar",
            result.accepted.iter().map(|a| a.q_mvar.abs()).sum::<f64>(),
        );
        out.set("operator", "total_cost", result.total_cost());
        out.set("operator", "resolved", if result.resolved { 1.0 } else { 0.0 });
        out.set("operator", "offers", offers.len() as f64);
        for a in &self.agents {
            let id = a.agent_id.as_str();
            let offered: f64 = offers.iter().filter(|o| o.agent_id == id).map(|o| o.q_mvar.abs()).sum();
            out.set(id, "payment", result.payments.get(id).copied().unwrap_or(0.0));
            out.set(id, "accepted_mvar", result.accepted_mvar(id).abs());
            out.set(id, "offered_mvar", offered);
            out.set(id, "dispatch_q", result.accepted_mvar(id));
        }
        Ok(out)
    }
}

struct GridSim {
    band: VoltageBand,
    /// PV model id and its sgen position in the feeder model.
    pv: Vec<(String, usize)>,
    events: EventBuffer,
}

impl GridSim {
    fn step(&mut self, t: u64, inputs: &Inputs) -> Result<Outputs, String> {
        let mut model: GridModel = match inputs.get("feeder", "model").as_json() {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| format!("grid model input: {e}"))?,
            None => return Err("no grid model on the feeder input".into()),
        };
        for (id, i) in &self.pv {
            let s = &mut model.sgens[*i];
            let q = inputs.f64(id, "q_setpoint").unwrap_or(0.0);
            s.q_mvar = q.clamp(s.q_min_mvar, s.q_max_mvar);
        }
        let mut out = Outputs::new();
        let state = match solve_power_flow(&model) {
            Ok(s) => Some(s),
            Err(GridError::SingularJacobian { .. }) => None,
            Err(e) => return Err(e.to_string()),
        };
        let Some(state) = state else {
            out.set("pf", "converged", 0.0);
            self.events.push(
                t as f64,
                "grid",
                "grid.state",
                json!({"vm": {}, "v_min": self.band.v_min_pu, "v_max": self.band.v_max_pu,
                       "converged": false, "singular": true}),
            );
            return Ok(out);
        };
        let mut vm = serde_json::Map::new();
        let mut excursion = 0.0;
        let mut violations = 0.0;
        for (i, id) in state.bus_ids.iter().enumerate() {
            let m = format!("bus_{id}");
            out.set(m.as_str(), "vm", state.vm[i]);
            out.set(m.as_str(), "va", state.va[i]);
            vm.insert(id.to_string(), json!(state.vm[i]));
            let e = self.band.excursion(state.vm[i]);
            excursion += e;
            if e > 0.0 {
                violations += 1.0;
            }
        }
        for (i, l) in state.line_loading.iter().enumerate() {
            out.set(format!("line_{i}"), "loading", *l);
        }
        for (id, i) in &self.pv {
            out.set(id.as_str(), "p_mw", model.sgens[*i].p_mw);
            out.set(id.as_str(), "q_mvar", model.sgens[*i].q_mvar);
        }
        out.set("pf", "converged", if state.converged { 1.0 } else { 0.0 });
        out.set("pf", "slack_p_mw", state.slack_p_mw);
        out.set("pf", "slack_q_mvar", state.slack_q_mvar);
        out.set("pf", "iterations", state.iterations as f64);
        out.set("pf", "excursion", excursion);
        out.set("pf", "violations", violations);
        let max_loading = state.line_loading.iter().copied().fold(0.0, f64::max);
        self.events.push(
            t as f64,
            "grid",
            "grid.state",
            json!({
                "vm": vm,
                "v_min": self.band.v_min_pu,
                "v_max": self.band.v_max_pu,
                "converged": state.converged,
                "iterations": state.iterations,
                "slack_p_mw": state.slack_p_mw,
                "max_loading": max_loading,
            }),
        );
        Ok(out)
    }
}

/// An actuator wired to a kernel input: `id` is the endpoint path.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorBinding {
    pub id: String,
    pub default: f64,
}

impl World {
    /// Builds every simulator for one episode. Random streams derive from
    /// `episode_seed`.
    pub fn build(
        scenario: &Scenario,
        episode_seed: u64,
        events: &EventBuffer,
        actuators: Option<&[ActuatorBinding]>,
    ) -> Result<World, WorldError> {
        let doc = &scenario.doc;
        let interval = doc.market.interval_s;
        let mut kernel = Kernel::new();
        let base = scenario.base_model();

        let shared = actuators.map(|a| Rc::new(RefCell::new(a.iter().map(|b| b.default).collect::<Vec<f64>>())));
        if let (Some(bindings), Some(values)) = (actuators, &shared) {
            let mut model = ModelSpec::new("muscle");
            for i in 0..bindings.len() {
                model = model.output(format!("a{i}"));
            }
            let values = Rc::clone(values);
            kernel.register_simulator(
                SimulatorDescriptor::new("agent", interval).model(model),
                move |_t: u64, _in: &Inputs| -> Result<Outputs, String> {
                    let mut out = Outputs::new();
                    for (i, v) in values.borrow().iter().enumerate() {
                        out.set("muscle", format!("a{i}"), *v);
                    }
                    Ok(out)
                },
            )?;
        }

        // profiles
        let mut desc = SimulatorDescriptor::new("profiles", interval).model(ModelSpec::new("feeder").output("model"));
        for l in &doc.grid.loads {
            desc = desc.model(ModelSpec::new(l.id.as_str()).output("p_mw"));
        }
        for p in &doc.grid.pv_units {
            desc = desc.model(ModelSpec::new(p.id.as_str()).output("p_mw"));
        }
        let mut profiles = ProfilesSim {
            base: base.clone(),
            loads: doc
                .grid
                .loads
                .iter()
                .zip(&scenario.load_profiles)
                .map(|(l, p)| (l.id.clone(), p.clone(), l.p_mw, l.q_mvar))
                .collect(),
            pv: doc.grid.pv_units.iter().map(|p| (p.id.clone(), p.unit())).collect(),
            weather: scenario.weather.clone(),
        };
        kernel.register_simulator(desc, move |t: u64, _in: &Inputs| profiles.step(t))?;

        // bidders
        let mut desc = SimulatorDescriptor::new("bidders", interval);
        let mut bidders = Vec::new();
        for b in &doc.market.bidders {
            desc = desc.model(
                ModelSpec::new(b.agent_id.as_str())
                    .input("price", -1.0)
                    .input("inbox", Value::Json(json!([])))
                    .output("outbox")
                    .output("offer_price")
                    .output("offer_mvar")
                    .output("last_notice"),
            );
            let pv = doc.pv(&b.asset).expect("validated asset");
            bidders.push(Bidder {
                doc: b.clone(),
                bus: pv.bus,
                q_min: pv.q_min_mvar,
                q_max: pv.q_max_mvar,
                operator_node: doc.market.operator_node.clone(),
                last_notice: -1.0,
            });
        }
        if !bidders.is_empty() {
            let mut sim = BiddersSim {
                bidders,
                rng: ChaCha8Rng::seed_from_u64(derive_seed(episode_seed, MARKET_STREAM)),
                interval,
            };
            kernel.register_simulator(desc, move |t: u64, i: &Inputs| sim.step(t, i))?;
        }

        // net
        let mut net = NetworkSim::new(doc.network.topology(), derive_seed(episode_seed, NET_STREAM))?;
        let mut desc = SimulatorDescriptor::new("net", interval);
        for n in &doc.network.nodes {
            desc = desc.model(
                ModelSpec::new(n.id.as_str())
                    .input("outbox", Value::Json(json!([])))
                    .input("restart", 0.0)
                    .output("inbox")
                    .output("utilization")
                    .output("bytes_in")
                    .output("bytes_out")
                    .output("frames_dropped"),
            );
        }
        for r in &doc.network.rules {
            desc = desc.model(ModelSpec::new(format!("rule_{}", r.rule_id)).input("enabled", r.enabled));
            net.install_rule(r.clone())?;
        }
        let mut net_sim = NetSim {
            net,
            nodes: doc.network.nodes.iter().map(|n| n.id.clone()).collect(),
            rules: doc.network.rules.iter().map(|r| r.rule_id.clone()).collect(),
            interval,
            events: events.clone(),
        };
        kernel.register_simulator(desc, move |t: u64, i: &Inputs| net_sim.step(t, i))?;

        // market
        let mut desc = SimulatorDescriptor::new("market", interval).model(
            ModelSpec::new("operator")
                .input("inbox", Value::Json(json!([])))
                .input("model", Value::Null)
                .output("outbox")
                .output("clearing_price")
                .output("accepted_mvar")
                .output("total_cost")
                .output("resolved")
                .output("offers"),
        );
        let mut agents = Vec::new();
        for b in &doc.market.bidders {
            desc = desc.model(
                ModelSpec::new(b.agent_id.as_str())
                    .output("payment")
                    .output("accepted_mvar")
                    .output("offered_mvar")
                    .output("dispatch_q"),
            );
            let pv = doc.pv(&b.asset).expect("validated asset");
            agents.push(MarketAgent {
                agent_id: b.agent_id.clone(),
                node: b.node.clone(),
                bus: pv.bus,
                q_min: pv.q_min_mvar,
                q_max: pv.q_max_mvar,
            });
        }
        let mut market = MarketSim {
            band: doc.market.band,
            interval,
            gate_closure: doc.market.gate_closure_s,
            agents,
            events: events.clone(),
        };
        kernel.register_simulator(desc, move |t: u64, i: &Inputs| market.step(t, i))?;

        // grid
        let mut desc = SimulatorDescriptor::new("grid", interval)
            .model(ModelSpec::new("feeder").input("model", Value::Null))
            .model(
                ModelSpec::new("pf")
                    .output("converged")
                    .output("slack_p_mw")
                    .output("slack_q_mvar")
                    .output("iterations")
                    .output("excursion")
                    .output("violations"),
            );
        for b in &doc.grid.buses {
            desc = desc.model(ModelSpec::new(format!("bus_{}", b.id)).output("vm").output("va"));
        }
        for i in 0..doc.grid.lines.len() {
            desc = desc.model(ModelSpec::new(format!("line_{i}")).output("loading"));
        }
        for p in &doc.grid.pv_units {
            desc = desc.model(
                ModelSpec::new(p.id.as_str())
                    .input("q_setpoint", 0.0)
                    .output("p_mw")
                    .output("q_mvar"),
            );
        }
        let mut grid = GridSim {
            band: doc.market.band,
            pv: doc.grid.pv_units.iter().enumerate().map(|(i, p)| (p.id.clone(), i)).collect(),
            events: events.clone(),
        };
        kernel.register_simulator(desc, move |t: u64, i: &Inputs| grid.step(t, i))?;

        // wiring
        let ep = |s: &str, m: &str, a: &str| Endpoint::new(s, m, a);
        kernel.connect(ep("profiles", "feeder", "model"), ep("grid", "feeder", "model"), false)?;
        kernel.connect(ep("profiles", "feeder", "model"), ep("market", "operator", "model"), false)?;
        for b in &doc.market.bidders {
            let id = b.agent_id.as_str();
            kernel.connect(ep("bidders", id, "outbox"), ep("net", &b.node, "outbox"), false)?;
            kernel.connect_with_default(
                ep("net", &b.node, "inbox"),
                ep("bidders", id, "inbox"),
                true,
                Some(Value::Json(json!([]))),
            )?;
            kernel.connect(ep("market", id, "dispatch_q"), ep("grid", &b.asset, "q_setpoint"), false)?;
        }
        let op = doc.market.operator_node.as_str();
        kernel.connect(ep("net", op, "inbox"), ep("market", "operator", "inbox"), false)?;
        kernel.connect_with_default(
            ep("market", "operator", "outbox"),
            ep("net", op, "outbox"),
            true,
            Some(Value::Json(json!([]))),
        )?;
        if let Some(bindings) = actuators {
            for (i, b) in bindings.iter().enumerate() {
                let dst = Endpoint::parse(&b.id).ok_or_else(|| WorldError::Actuator(b.id.clone()))?;
                if !kernel.is_input(&dst) || kernel.is_connected(&dst) {
                    return Err(WorldError::Actuator(b.id.clone()));
                }
                kernel.connect(ep("agent", "muscle", &format!("a{i}")), dst, false)?;
            }
        }

        Ok(World {
            kernel,
            actuators: shared,
            interval,
            band: doc.market.band,
            bus_ids: doc.grid.buses.iter().map(|b| b.id).collect(),
            agents: doc.market.bidders.iter().map(|b| b.agent_id.clone()).collect(),
            node_ids: doc.network.nodes.iter().map(|n| n.id.clone()).collect(),
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn interval(&self) -> u64 {
        self.interval
    }

    /// Values the actuator source emits from the next step on.
    pub fn set_actuators(&self, values: &[f64]) {
        if let Some(a) = &self.actuators {
            let mut a = a.borrow_mut();
            assert_eq!(a.len(), values.len(), "one value per actuator");
            a.copy_from_slice(values);
        }
    }

    /// Runs one market interval.
    pub fn step_interval(&mut self) -> Result<(), KernelError> {
        let end = self.kernel.now() + self.interval;
        let end = end - end % self.interval;
        self.kernel.advance(end)
    }

    pub fn read(&self, path: &str) -> Option<f64> {
        let ep = Endpoint::parse(path)?;
        self.kernel.output(&ep).and_then(Value::as_f64)
    }

    /// Named per-interval aggregates of the latest step, used by objectives.
    pub fn aggregates(&self) -> BTreeMap<String, f64> {
        let mut a = BTreeMap::new();
        let get = |p: String| self.read(&p).unwrap_or(0.0);
        let mut excursion = 0.0;
        let mut violations = 0.0;
        for b in &self.bus_ids {
            if let Some(vm) = self.read(&format!("grid.bus_{b}.vm")) {
                let e = self.band.excursion(vm);
                excursion += e;
                if e > 0.0 {
                    violations += 1.0;
                }
            }
        }
        let converged = self.read("grid.pf.converged").unwrap_or(0.0);
        a.insert("excursion".into(), excursion);
        a.insert("violations".into(), violations);
        a.insert("diverged".into(), 1.0 - converged);
        a.insert("total_cost".into(), get("market.operator.total_cost".into()));
        a.insert("clearing_price".into(), get("market.operator.clearing_price".into()));
        a.insert("unresolved".into(), 1.0 - self.read("market.operator.resolved").unwrap_or(1.0));
        for ag in &self.agents {
            for attr in ["payment", "offered_mvar", "accepted_mvar"] {
                a.insert(format!("{attr}.{ag}"), get(format!("market.{ag}.{attr}")));
            }
        }
        a.insert(
            "frames_dropped".into(),
            self.node_ids
                .iter()
                .map(|n| get(format!("net.{n}.frames_dropped")))
                .sum(),
        );
        a
    }
}

/// Aggregate names an objective may weight, besides `<attr>.<agent>` forms.
pub const AGGREGATES: &[&str] = &[
    "excursion",
    "violations",
    "diverged",
    "total_cost",
    "clearing_price",
    "unresolved",
    "frames_dropped",
];
