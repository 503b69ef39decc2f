//! Discrete-event communication network.
//!
//! Frames travel hop by hop along the unique shortest path (hop count, ties
//! to the lexicographically smallest next node). Each hop costs link latency
//! plus transmission time, may lose the frame with the link's loss
//! probability, and passes through the attack rules installed at the node the
//! frame is at. Event times are integer microseconds; queue order is
//! (time, insertion sequence).

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in microseconds.
pub type Micros = u64;

pub const MICROS_PER_SECOND: u64 = 1_000_000;

pub fn seconds_to_micros(s: f64) -> Micros {
    (s * MICROS_PER_SECOND as f64).round().max(0.0) as Micros
}

pub fn micros_to_seconds(t: Micros) -> f64 {
    t as f64 / MICROS_PER_SECOND as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Host,
    Switch,
    Router,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub a: String,
    pub b: String,
    pub latency_ms: f64,
    /// `None` means unlimited bandwidth (zero transmission time).
    #[serde(default)]
    pub bandwidth_kbps: Option<f64>,
    #[serde(default)]
    pub loss_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NetworkTopology {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
}

impl NetworkTopology {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::InvalidTopology(m));
        if self.nodes.is_empty() {
            return bad("no nodes".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for n in &self.nodes {
            if n.id.is_empty() || n.id.contains('.') {
                return bad(format!("invalid node id {:?}", n.id));
            }
            if !ids.insert(n.id.as_str()) {
                return bad(format!("duplicate node id {:?}", n.id));
            }
        }
        let mut pairs = std::collections::BTreeSet::new();
        for (i, l) in self.links.iter().enumerate() {
            for end in [&l.a, &l.b] {
                if !ids.contains(end.as_str()) {
                    return bad(format!("link {i} references unknown node {end:?}"));
                }
            }
            if l.a == l.b {
                return bad(format!("link {i} is a self-loop"));
            }
            let key = if l.a < l.b { (&l.a, &l.b) } else { (&l.b, &l.a) };
            if !pairs.insert(key) {
                return bad(format!("link {i} duplicates an existing link between {} and {}", l.a, l.b));
            }
            if !(l.latency_ms >= 0.0) || !l.latency_ms.is_finite() {
                return bad(format!("link {i}: latency_ms must be finite and >= 0"));
            }
            if let Some(bw) = l.bandwidth_kbps {
                if !(bw > 0.0) || !bw.is_finite() {
                    return bad(format!("link {i}: bandwidth_kbps must be positive"));
                }
            }
            if !(0.0..=1.0).contains(&l.loss_prob) {
                return bad(format!("link {i}: loss_prob must be in [0, 1]"));
            }
        }
        // connectivity
        let index: BTreeMap<&str, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for l in &self.links {
            adj[index[l.a.as_str()]].push(index[l.b.as_str()]);
            adj[index[l.b.as_str()]].push(index[l.a.as_str()]);
        }
        let mut seen = vec![false; self.nodes.len()];
        seen[0] = true;
        let mut q = VecDeque::from([0]);
        while let Some(i) = q.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    q.push_back(j);
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return bad(format!("node {:?} is not connected to {:?}", self.nodes[i].id, self.nodes[0].id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: u64,
    pub src: String,
    pub dst: String,
    pub sent_at: Micros,
    pub size_bytes: u64,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleMatch {
    #[serde(default)]
    pub src: Option<String>,
    #[serde(default)]
    pub dst: Option<String>,
    #[serde(default)]
    pub payload_contains: Option<String>,
}

impl RuleMatch {
    fn matches(&self, frame: &Frame) -> bool {
        self.src.as_ref().map_or(true, |s| *s == frame.src)
            && self.dst.as_ref().map_or(true, |d| *d == frame.dst)
            && self.payload_contains.as_ref().map_or(true, |p| frame.payload.contains(p.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleAction {
    Drop,
    /// Replaces the whole payload, or, with `set_fields`, rewrites top-level
    /// fields of a JSON object payload and re-encodes it canonically.
    Tamper {
        #[serde(default)]
        payload: Option<String>,
        #[serde(default)]
        set_fields: Option<serde_json::Map<String, serde_json::Value>>,
    },
    Delay {
        extra_ms: f64,
    },
}

fn enabled_default() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackRule {
    pub rule_id: String,
    pub at_node: String,
    #[serde(default, rename = "match")]
    pub matcher: RuleMatch,
    pub action: RuleAction,
    /// Seconds.
    #[serde(default)]
    pub active_from: f64,
    /// Seconds, exclusive. `None` keeps the rule active indefinitely.
    #[serde(default)]
    pub active_until: Option<f64>,
    /// Actuator-controlled switch on top of the time window.
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

impl AttackRule {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.rule_id.is_empty() || self.rule_id.contains('.') {
            return Err(NetError::InvalidRule(format!("invalid rule id {:?}", self.rule_id)));
        }
        if !(self.active_from >= 0.0) {
            return Err(NetError::InvalidRule(format!("{}: active_from must be >= 0", self.rule_id)));
        }
        if let Some(until) = self.active_until {
            if !(until >= self.active_from) {
                return Err(NetError::InvalidRule(format!(
                    "{}: active_until must be >= active_from",
                    self.rule_id
                )));
            }
        }
        match &self.action {
            RuleAction::Delay { extra_ms } if !(*extra_ms >= 0.0) || !extra_ms.is_finite() => Err(
                NetError::InvalidRule(format!("{}: extra_ms must be finite and >= 0", self.rule_id)),
            ),
            RuleAction::Tamper { payload, set_fields } if payload.is_some() == set_fields.is_some() => Err(
                NetError::InvalidRule(format!("{}: tamper needs exactly one of payload or set_fields", self.rule_id)),
            ),
            _ => Ok(()),
        }
    }

    fn active_at(&self, t: Micros) -> bool {
        let from = seconds_to_micros(self.active_from);
        let until = self.active_until.map(seconds_to_micros);
        self.enabled && t >= from && until.map_or(true, |u| t < u)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("rule {0:?} is already installed")]
    DuplicateRule(String),
    #[error("unknown rule {0:?}")]
    UnknownRule(String),
    #[error("frame sent at {sent_at} before current time {now}")]
    SendInPast { sent_at: Micros, now: Micros },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Source node was offline at send time; nothing was transmitted.
    SourceOffline,
    NodeOffline,
    LinkLoss,
    Rule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum NetEvent {
    Send {
        time: Micros,
        frame_id: u64,
        src: String,
        dst: String,
        size_bytes: u64,
    },
    Hop {
        time: Micros,
        frame_id: u64,
        src: String,
        from: String,
        to: String,
        latency_us: Micros,
        transmission_us: Micros,
        delay_us: Micros,
    },
    Rule {
        time: Micros,
        frame_id: u64,
        src: String,
        node: String,
        rule_id: String,
    },
    Deliver {
        time: Micros,
        frame_id: u64,
        src: String,
        dst: String,
        size_bytes: u64,
    },
    Drop {
        time: Micros,
        frame_id: u64,
        src: String,
        node: String,
        size_bytes: u64,
        reason: DropReason,
    },
    Restart {
        time: Micros,
        node: String,
        until: Micros,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub frame: Frame,
    pub delivered_at: Micros,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InterfaceCounters {
    pub node_id: String,
    /// Bytes of frames delivered to this node as final destination.
    pub bytes_in: u64,
    /// Bytes of frames originated by this node.
    pub bytes_out: u64,
    /// Bytes this node put on a link, originated or forwarded.
    pub bytes_transmitted: u64,
    pub frames_dropped: u64,
    pub bytes_dropped: u64,
    /// Transmitted bits in the trailing window over aggregate link capacity,
    /// clamped to [0, 1]; zero when any attached link is unlimited.
    pub utilization: f64,
}

#[derive(Debug, Clone)]
enum Pending {
    Arrive { frame: Frame, node: usize, delay_us: Micros },
    Deliver { frame: Frame },
}

#[derive(Debug, Default, Clone)]
struct NodeState {
    counters: InterfaceCounters,
    offline: Vec<(Micros, Micros)>,
    /// (time, bytes) of every transmission by this node.
    tx_log: Vec<(Micros, u64)>,
    inbox: Vec<Delivery>,
}

impl NodeState {
    fn offline_at(&self, t: Micros) -> bool {
        self.offline.iter().any(|&(a, b)| t >= a && t < b)
    }
}

pub struct NetworkSim {
    topology: NetworkTopology,
    index: BTreeMap<String, usize>,
    /// next_hop[at][dst]
    next_hop: Vec<Vec<Option<usize>>>,
    /// link index between two node positions
    link_between: BTreeMap<(usize, usize), usize>,
    rules: BTreeMap<String, AttackRule>,
    nodes: Vec<NodeState>,
    queue: BinaryHeap<Reverse<(Micros, u64)>>,
    pending: BTreeMap<u64, Pending>,
    seq: u64,
    now: Micros,
    rng: ChaCha8Rng,
    next_frame_id: BTreeMap<String, u64>,
    events: Vec<NetEvent>,
}

impl NetworkSim {
    pub fn new(topology: NetworkTopology, seed: u64) -> Result<Self, NetError> {
        topology.validate()?;
        let index: BTreeMap<String, usize> = topology
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        let n = topology.nodes.len();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut link_between = BTreeMap::new();
        for (li, l) in topology.links.iter().enumerate() {
            let (a, b) = (index[&l.a], index[&l.b]);
            adj[a].push(b);
            adj[b].push(a);
            link_between.insert((a, b), li);
            link_between.insert((b, a), li);
        }
        // BFS from every destination; the next hop from `at` is the
        // neighbour one step closer, smallest id first.
        let mut next_hop = vec![vec![None; n]; n];
        for dst in 0..n {
            let mut dist = vec![usize::MAX; n];
            dist[dst] = 0;
            let mut q = VecDeque::from([dst]);
            while let Some(i) = q.pop_front() {
                for &j in &adj[i] {
                    if dist[j] == usize::MAX {
                        dist[j] = dist[i] + 1;
                        q.push_back(j);
                    }
                }
            }
            for at in 0..n {
                if at == dst {
                    continue;
                }
                next_hop[at][dst] = adj[at]
                    .iter()
                    .copied()
                    .filter(|&j| dist[j] + 1 == dist[at])
                    .min_by(|&x, &y| topology.nodes[x].id.cmp(&topology.nodes[y].id));
            }
        }
        let nodes = topology
            .nodes
            .iter()
            .map(|nd| NodeState {
                counters: InterfaceCounters {
                    node_id: nd.id.clone(),
                    ..Default::default()
                },
                ..Default::default()
            })
            .collect();
        Ok(Self {
            topology,
            index,
            next_hop,
            link_between,
            rules: BTreeMap::new(),
            nodes,
            queue: BinaryHeap::new(),
            pending: BTreeMap::new(),
            seq: 0,
            now: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_frame_id: BTreeMap::new(),
            events: Vec::new(),
        })
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    fn node(&self, id: &str) -> Result<usize, NetError> {
        self.index.get(id).copied().ok_or_else(|| NetError::UnknownNode(id.to_string()))
    }

    /// Node path a frame from `src` to `dst` follows.
    pub fn route(&self, src: &str, dst: &str) -> Result<Vec<String>, NetError> {
        let (mut at, d) = (self.node(src)?, self.node(dst)?);
        let mut path = vec![self.topology.nodes[at].id.clone()];
        while at != d {
            at = self.next_hop[at][d].expect("topology is connected");
            path.push(self.topology.nodes[at].id.clone());
        }
        Ok(path)
    }

    /// Builds a frame with the next per-sender frame id.
    pub fn frame(&mut self, src: &str, dst: &str, sent_at: Micros, payload: String) -> Frame {
        let id = self.next_frame_id.entry(src.to_string()).or_insert(0);
        let frame_id = *id;
        *id += 1;
        Frame {
            frame_id,
            src: src.to_string(),
            dst: dst.to_string(),
            sent_at,
            size_bytes: payload.len() as u64,
            payload,
        }
    }

    fn push(&mut self, time: Micros, p: Pending) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse((time, seq)));
        self.pending.insert(seq, p);
    }

    /// Hands a frame to its source node. An offline source drops it silently
    /// (recorded as a `SourceOffline` drop, no bytes counted).
    pub fn send(&mut self, mut frame: Frame) -> Result<(), NetError> {
        let src = self.node(&frame.src)?;
        self.node(&frame.dst)?;
        if frame.sent_at < self.now {
            return Err(NetError::SendInPast {
                sent_at: frame.sent_at,
                now: self.now,
            });
        }
        frame.size_bytes = frame.size_bytes.max(frame.payload.len() as u64);
        if self.nodes[src].offline_at(frame.sent_at) {
            self.nodes[src].counters.frames_dropped += 1;
            self.events.push(NetEvent::Drop {
                time: frame.sent_at,
                frame_id: frame.frame_id,
                src: frame.src.clone(),
                node: frame.src.clone(),
                size_bytes: frame.size_bytes,
                reason: DropReason::SourceOffline,
            });
            return Ok(());
        }
        self.nodes[src].counters.bytes_out += frame.size_bytes;
        self.events.push(NetEvent::Send {
            time: frame.sent_at,
            frame_id: frame.frame_id,
            src: frame.src.clone(),
            dst: frame.dst.clone(),
            size_bytes: frame.size_bytes,
        });
        let t = frame.sent_at;
        self.push(t, Pending::Arrive { frame, node: src, delay_us: 0 });
        Ok(())
    }

    pub fn restart_node(&mut self, node_id: &str, downtime_s: f64) -> Result<(), NetError> {
        let n = self.node(node_id)?;
        let until = self.now + seconds_to_micros(downtime_s.max(0.0));
        if until > self.now {
            self.nodes[n].offline.push((self.now, until));
        }
        self.events.push(NetEvent::Restart {
            time: self.now,
            node: node_id.to_string(),
            until,
        });
        Ok(())
    }

    pub fn is_online(&self, node_id: &str) -> Result<bool, NetError> {
        Ok(!self.nodes[self.node(node_id)?].offline_at(self.now))
    }

    pub fn install_rule(&mut self, rule: AttackRule) -> Result<(), NetError> {
        rule.validate()?;
        self.node(&rule.at_node)?;
        if self.rules.contains_key(&rule.rule_id) {
            return Err(NetError::DuplicateRule(rule.rule_id));
        }
        self.rules.insert(rule.rule_id.clone(), rule);
        Ok(())
    }

    /// Idempotent; returns whether a rule was removed.
    pub fn remove_rule(&mut self, rule_id: &str) -> bool {
        self.rules.remove(rule_id).is_some()
    }

    pub fn set_rule_enabled(&mut self, rule_id: &str, enabled: bool) -> Result<(), NetError> {
        let r = self
            .rules
            .get_mut(rule_id)
            .ok_or_else(|| NetError::UnknownRule(rule_id.to_string()))?;
        r.enabled = enabled;
        Ok(())
    }

    pub fn rules(&self) -> impl Iterator<Item = &AttackRule> {
        self.rules.values()
    }

    fn drop_frame(&mut self, node: usize, time: Micros, frame: &Frame, reason: DropReason) {
        let st = &mut self.nodes[node];
        st.counters.frames_dropped += 1;
        st.counters.bytes_dropped += frame.size_bytes;
        self.events.push(NetEvent::Drop {
            time,
            frame_id: frame.frame_id,
            src: frame.src.clone(),
            node: self.topology.nodes[node].id.clone(),
            size_bytes: frame.size_bytes,
            reason,
        });
    }

    /// Processes every queued event strictly before `until`, then sets the
    /// clock to `until`.
    pub fn run_until(&mut self, until: Micros) {
        while let Some(&Reverse((t, seq))) = self.queue.peek() {
            if t >= until {
                break;
            }
            self.queue.pop();
            self.now = t;
            let p = self.pending.remove(&seq).expect("queued event is pending");
            self.process(t, p);
        }
        self.now = self.now.max(until);
    }

    fn process(&mut self, t: Micros, p: Pending) {
        match p {
            Pending::Deliver { frame } => {
                let dst = self.index[&frame.dst];
                if self.nodes[dst].offline_at(t) {
                    self.drop_frame(dst, t, &frame, DropReason::NodeOffline);
                    return;
                }
                let st = &mut self.nodes[dst];
                st.counters.bytes_in += frame.size_bytes;
                self.events.push(NetEvent::Deliver {
                    time: t,
                    frame_id: frame.frame_id,
                    src: frame.src.clone(),
                    dst: frame.dst.clone(),
                    size_bytes: frame.size_bytes,
                });
                st.inbox.push(Delivery { frame, delivered_at: t });
            }
            Pending::Arrive {
                mut frame,
                node,
                mut delay_us,
            } => {
                if self.nodes[node].offline_at(t) {
                    self.drop_frame(node, t, &frame, DropReason::NodeOffline);
                    return;
                }
                let node_id = self.topology.nodes[node].id.clone();
                let active: Vec<AttackRule> = self
                    .rules
                    .values()
                    .filter(|r| r.at_node == node_id && r.active_at(t) && r.matcher.matches(&frame))
                    .cloned()
                    .collect();
                for rule in active {
                    self.events.push(NetEvent::Rule {
                        time: t,
                        frame_id: frame.frame_id,
                        src: frame.src.clone(),
                        node: node_id.clone(),
                        rule_id: rule.rule_id.clone(),
                    });
                    match &rule.action {
                        RuleAction::Drop => {
                            self.drop_frame(node, t, &frame, DropReason::Rule);
                            return;
                        }
                        RuleAction::Tamper { payload, set_fields } => {
                            if let Some(p) = payload {
                                frame.payload = p.clone();
                            } else if let Some(fields) = set_fields {
                                frame.payload = rewrite_fields(&frame.payload, fields);
                            }
                        }
                        RuleAction::Delay { extra_ms } => {
                            delay_us += (extra_ms * 1000.0).round() as Micros;
                        }
                    }
                }
                let dst = self.index[&frame.dst];
                if node == dst {
                    if delay_us > 0 {
                        self.push(t + delay_us, Pending::Deliver { frame });
                    } else {
                        self.process(t, Pending::Deliver { frame });
                    }
                    return;
                }
                let next = self.next_hop[node][dst].expect("topology is connected");
                let link = &self.topology.links[self.link_between[&(node, next)]];
                let latency_us = (link.latency_ms * 1000.0).round() as Micros;
                let transmission_us = link
                    .bandwidth_kbps
                    .map(|kbps| ((frame.size_bytes * 8) as f64 * 1000.0 / kbps).ceil() as Micros)
                    .unwrap_or(0);
                let loss = link.loss_prob;
                let departs = t + delay_us;
                let st = &mut self.nodes[node];
                st.counters.bytes_transmitted += frame.size_bytes;
                st.tx_log.push((departs, frame.size_bytes));
                // one draw per hop, whatever the loss probability
                let draw: f64 = self.rng.gen();
                self.events.push(NetEvent::Hop {
                    time: t,
                    frame_id: frame.frame_id,
                    src: frame.src.clone(),
                    from: node_id,
                    to: self.topology.nodes[next].id.clone(),
                    latency_us,
                    transmission_us,
                    delay_us,
                });
                if draw < loss {
                    self.drop_frame(node, t, &frame, DropReason::LinkLoss);
                    return;
                }
                let arrival = departs + latency_us + transmission_us;
                self.push(
                    arrival,
                    Pending::Arrive {
                        frame,
                        node: next,
                        delay_us: 0,
                    },
                );
            }
        }
    }

    /// Deliveries to `node_id` since the last call.
    pub fn take_inbox(&mut self, node_id: &str) -> Result<Vec<Delivery>, NetError> {
        let n = self.node(node_id)?;
        Ok(std::mem::take(&mut self.nodes[n].inbox))
    }

    pub fn read_counters(&self, node_id: &str, window_s: f64) -> Result<InterfaceCounters, NetError> {
        let n = self.node(node_id)?;
        let mut c = self.nodes[n].counters.clone();
        let window = seconds_to_micros(window_s);
        let capacity: Option<f64> = self
            .topology
            .links
            .iter()
            .filter(|l| l.a == node_id || l.b == node_id)
            .map(|l| l.bandwidth_kbps)
            .sum();
        c.utilization = match capacity {
            Some(kbps) if window > 0 && kbps > 0.0 => {
                let from = self.now.saturating_sub(window);
                let bytes: u64 = self.nodes[n]
                    .tx_log
                    .iter()
                    .filter(|(t, _)| *t >= from && *t < self.now)
                    .map(|(_, b)| b)
                    .sum();
                let bits = (bytes * 8) as f64;
                (bits / (kbps * 1000.0 * window_s)).clamp(0.0, 1.0)
            }
            _ => 0.0,
        };
        Ok(c)
    }

    pub fn events(&self) -> &[NetEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<NetEvent> {
        std::mem::take(&mut self.events)
    }
}

fn rewrite_fields(payload: &str, fields: &serde_json::Map<String, serde_json::Value>) -> String {
    match serde_json::from_str::<serde_json::Value>(payload) {
        Ok(serde_json::Value::Object(mut obj)) => {
            for (k, v) in fields {
                obj.insert(k.clone(), v.clone());
            }
            crate::telemetry::to_canonical_string(&serde_json::Value::Object(obj)).unwrap_or_else(|_| payload.to_string())
        }
        _ => payload.to_string(),
    }
}
