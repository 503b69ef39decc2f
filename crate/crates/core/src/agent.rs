//! Agents and their environment.
//!
//! The environment wraps one assembled [`World`] per episode: `reset(seed)`
//! rebuilds every simulator, `step(setpoints)` advances one market interval
//! and returns readings and reward. Agents split into a brain (learner) and a
//! muscle (linear policy from normalized readings to actuator setpoints).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::design::derive_seed;
use crate::kernel::KernelError;
use crate::scenario::{LearnerKind, ObjectiveDoc, ObjectiveKind, PhaseDoc, PhaseMode, Scenario, ScenarioDocument};
use crate::telemetry::EventBuffer;
use crate::world::{ActuatorBinding, World, WorldError, AGGREGATES};

pub const ELITE_FRACTION: f64 = 0.2;
pub const STD_FLOOR: f64 = 0.01;
pub const MIN_POPULATION: usize = 4;
/// Damage added for an interval whose power flow did not converge.
pub const DIVERGENCE_PENALTY: f64 = 10.0;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("population of {0} is below the minimum of {MIN_POPULATION}")]
    PopulationTooSmall(usize),
    #[error("unknown aggregate {0:?}")]
    UnknownAggregate(String),
    #[error("setpoint {value} for {id} lies outside its value space")]
    SetpointOutOfRange { id: String, value: f64 },
    #[error("expected {expected} setpoints, got {got}")]
    SetpointCount { expected: usize, got: usize },
    #[error("environment was not reset")]
    NotReset,
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("episode {episode} (seed {seed}): {source}")]
    Episode {
        episode: u64,
        seed: u64,
        #[source]
        source: Box<AgentError>,
    },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Value space of a sensor or actuator.
#[derive(Debug, Clone, PartialEq)]
pub enum Space {
    Range { lo: f64, hi: f64 },
    Values(Vec<f64>),
}

impl Space {
    pub fn from_doc(range: Option<[f64; 2]>, values: Option<&[f64]>) -> Option<Space> {
        match (range, values) {
            (Some([lo, hi]), None) if lo < hi => Some(Space::Range { lo, hi }),
            (None, Some(v)) if !v.is_empty() => Some(Space::Values(v.to_vec())),
            _ => None,
        }
    }

    pub fn lo(&self) -> f64 {
        match self {
            Space::Range { lo, .. } => *lo,
            Space::Values(v) => v.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn hi(&self) -> f64 {
        match self {
            Space::Range { hi, .. } => *hi,
            Space::Values(v) => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match self {
            Space::Range { lo, hi } => (*lo..=*hi).contains(&x),
            Space::Values(v) => v.contains(&x),
        }
    }

    /// Nearest admissible value; ties go to the earlier enumerated value.
    pub fn clip(&self, x: f64) -> f64 {
        match self {
            Space::Range { lo, hi } => x.clamp(*lo, *hi),
            Space::Values(v) => {
                let mut best = v[0];
                for &c in &v[1..] {
                    if (c - x).abs() < (best - x).abs() {
                        best = c;
                    }
                }
                best
            }
        }
    }

    /// Maps `[lo, hi]` onto `[-1, 1]`; degenerate spaces map to 0.
    pub fn normalize(&self, x: f64) -> f64 {
        let (lo, hi) = (self.lo(), self.hi());
        if hi > lo {
            (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn half_range(&self) -> f64 {
        (self.hi() - self.lo()) / 2.0
    }

    pub fn midpoint(&self) -> f64 {
        match self {
            Space::Range { lo, hi } => (lo + hi) / 2.0,
            Space::Values(v) => v[0],
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Space::Range { lo, hi } => rng.gen_range(*lo..=*hi),
            Space::Values(v) => v[rng.gen_range(0..v.len())],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSpec {
    pub id: String,
    pub space: Space,
    pub initial: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorSpec {
    pub id: String,
    pub space: Space,
    pub default: f64,
}

/// Linear muscle: `default + half_range * (W x + b)`, clipped per actuator,
/// where `x` are readings normalized to [-1, 1]. Parameters are laid out as
/// `W` row-major (one row per actuator) followed by `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    pub n_in: usize,
    pub n_out: usize,
    pub theta: Vec<f64>,
}

impl LinearPolicy {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            theta: vec![0.0; Self::dims(n_in, n_out)],
        }
    }

    pub fn dims(n_in: usize, n_out: usize) -> usize {
        n_out * (n_in + 1)
    }
}

/// Setpoints for `readings`; the flag reports whether any reading had to be
/// clamped into its sensor range.
pub fn muscle_act(
    policy: &LinearPolicy,
    readings: &[f64],
    sensors: &[SensorSpec],
    actuators: &[ActuatorSpec],
) -> (Vec<f64>, bool) {
    let mut clamped = false;
    let x: Vec<f64> = readings
        .iter()
        .zip(sensors)
        .map(|(r, s)| {
            let (lo, hi) = (s.space.lo(), s.space.hi());
            if *r < lo || *r > hi || !r.is_finite() {
                clamped = true;
            }
            let r = if r.is_finite() { r.clamp(lo, hi) } else { s.space.midpoint() };
            s.space.normalize(r)
        })
        .collect();
    let w = &policy.theta[..policy.n_out * policy.n_in];
    let b = &policy.theta[policy.n_out * policy.n_in..];
    let out = actuators
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let z: f64 = (0..policy.n_in).map(|i| w[j * policy.n_in + i] * x[i]).sum::<f64>() + b[j];
            a.space.clip(a.default + a.space.half_range() * z)
        })
        .collect();
    (out, clamped)
}

/// Cross-entropy method over a diagonal Gaussian.
#[derive(Debug, Clone)]
pub struct Cem {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub population: usize,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CemUpdate {
    pub elite_count: usize,
    pub elite_mean_return: f64,
    pub best_return: f64,
    pub best_index: usize,
    pub mean_return: f64,
}

impl Cem {
    pub fn new(dims: usize, init_std: f64, population: usize, seed: u64) -> Result<Self, AgentError> {
        if population < MIN_POPULATION {
            return Err(AgentError::PopulationTooSmall(population));
        }
        Ok(Self {
            mean: vec![0.0; dims],
            std: vec![init_std.max(STD_FLOOR); dims],
            population,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn sample(&mut self) -> Vec<Vec<f64>> {
        (0..self.population)
            .map(|_| {
                self.mean
                    .iter()
                    .zip(&self.std)
                    .map(|(m, s)| {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        m + s * z
                    })
                    .collect()
            })
            .collect()
    }

    /// Refits mean and standard deviation to the elite candidates.
    pub fn update(&mut self, scored: &[(Vec<f64>, f64)]) -> Result<CemUpdate, AgentError> {
        let u = brain_update(scored, &mut self.mean, &mut self.std)?;
        Ok(u)
    }
}

/// Keeps the top ⌈0.2 n⌉ candidates by return (ties to the lower index) and
/// writes their mean and floored standard deviation.
pub fn brain_update(
    scored: &[(Vec<f64>, f64)],
    mean: &mut [f64],
    std: &mut [f64],
) -> Result<CemUpdate, AgentError> {
    let n = scored.len();
    if n < MIN_POPULATION {
        return Err(AgentError::PopulationTooSmall(n));
    }
    let k = ((ELITE_FRACTION * n as f64).ceil() as usize).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scored[b].1.total_cmp(&scored[a].1).then(a.cmp(&b)));
    let elites = &order[..k];
    for d in 0..mean.len() {
        let m = elites.iter().map(|&i| scored[i].0[d]).sum::<f64>() / k as f64;
        let var = elites.iter().map(|&i| (scored[i].0[d] - m).powi(2)).sum::<f64>() / k as f64;
        mean[d] = m;
        std[d] = var.sqrt().max(STD_FLOOR);
    }
    Ok(CemUpdate {
        elite_count: k,
        elite_mean_return: elites.iter().map(|&i| scored[i].1).sum::<f64>() / k as f64,
        best_return: scored[order[0]].1,
        best_index: order[0],
        mean_return: scored.iter().map(|s| s.1).sum::<f64>() / n as f64,
    })
}

/// Reward for one interval from the named aggregates.
pub fn objective_eval(objective: &ObjectiveDoc, aggregates: &BTreeMap<String, f64>) -> Result<f64, AgentError> {
    let get = |name: &str| {
        aggregates
            .get(name)
            .copied()
            .ok_or_else(|| AgentError::UnknownAggregate(name.to_string()))
    };
    match objective.kind {
        ObjectiveKind::Damage => Ok(get("excursion")? + DIVERGENCE_PENALTY * get("diverged")?),
        ObjectiveKind::Profit => {
            let mut r = 0.0;
            for a in &objective.agents {
                r += get(&format!("payment.{a}"))? - objective.cost_per_mvar * get(&format!("offered_mvar.{a}"))?;
            }
            Ok(r)
        }
        ObjectiveKind::Custom => {
            let mut r = 0.0;
            for (name, w) in &objective.weights {
                r += w * get(name)?;
            }
            Ok(r)
        }
    }
}

/// Whether `name` is an aggregate the scenario's worlds produce.
pub fn is_aggregate_name(name: &str, doc: &ScenarioDocument) -> bool {
    if AGGREGATES.contains(&name) {
        return true;
    }
    match name.split_once('.') {
        Some((attr, agent)) => {
            ["payment", "offered_mvar", "accepted_mvar"].contains(&attr)
                && doc.market.bidders.iter().any(|b| b.agent_id == agent)
        }
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub readings: Vec<f64>,
    pub reward: f64,
    pub aggregates: BTreeMap<String, f64>,
}

pub struct Environment<'a> {
    scenario: &'a Scenario,
    pub sensors: Vec<SensorSpec>,
    pub actuators: Vec<ActuatorSpec>,
    objective: ObjectiveDoc,
    events: EventBuffer,
    /// Whether actuators are wired into the kernel.
    attached: bool,
    world: Option<World>,
}

impl<'a> Environment<'a> {
    pub fn world(&self) -> Option<&World> {
        self.world.as_ref()
    }

    pub fn events(&self) -> &EventBuffer {
        &self.events
    }

    /// Rebuilds every simulator with streams derived from `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<f64>, AgentError> {
        let bindings: Vec<ActuatorBinding> = self
            .actuators
            .iter()
            .map(|a| ActuatorBinding {
                id: a.id.clone(),
                default: a.default,
            })
            .collect();
        let world = World::build(
            self.scenario,
            seed,
            &self.events,
            if self.attached { Some(&bindings) } else { None },
        )?;
        self.world = Some(world);
        Ok(self.sensors.iter().map(|s| s.initial).collect())
    }

    /// Applies `setpoints` and advances one market interval.
    pub fn step(&mut self, setpoints: &[f64]) -> Result<StepResult, AgentError> {
        let world = self.world.as_mut().ok_or(AgentError::NotReset)?;
        if self.attached {
            if setpoints.len() != self.actuators.len() {
                return Err(AgentError::SetpointCount {
                    expected: self.actuators.len(),
                    got: setpoints.len(),
                });
            }
            for (v, a) in setpoints.iter().zip(&self.actuators) {
                if !a.space.contains(*v) {
                    return Err(AgentError::SetpointOutOfRange {
                        id: a.id.clone(),
                        value: *v,
                    });
                }
            }
            world.set_actuators(setpoints);
        }
        world.step_interval()?;
        let readings = self
            .sensors
            .iter()
            .map(|s| world.read(&s.id).unwrap_or(s.initial))
            .collect();
        let aggregates = world.aggregates();
        let reward = objective_eval(&self.objective, &aggregates)?;
        Ok(StepResult {
            readings,
            reward,
            aggregates,
        })
    }
}

/// Environment over the scenario's agent section. Without one, the
/// environment has no sensors or actuators and a damage objective.
pub fn build_environment<'a>(scenario: &'a Scenario, events: &EventBuffer) -> Result<Environment<'a>, AgentError> {
    let doc = &scenario.doc;
    let (sensors, actuators, objective, attached) = match &doc.agent {
        None => (
            Vec::new(),
            Vec::new(),
            ObjectiveDoc {
                kind: ObjectiveKind::Damage,
                agents: Vec::new(),
                cost_per_mvar: 0.0,
                weights: BTreeMap::new(),
            },
            false,
        ),
        Some(a) => {
            let sensors = a
                .sensors
                .iter()
                .map(|s| {
                    let space = Space::from_doc(s.range, s.values.as_deref()).expect("validated sensor space");
                    SensorSpec {
                        id: s.id.clone(),
                        initial: s.initial.unwrap_or_else(|| space.midpoint()),
                        space,
                    }
                })
                .collect();
            let actuators = a
                .actuators
                .iter()
                .map(|x| ActuatorSpec {
                    id: x.id.clone(),
                    space: Space::from_doc(x.range, x.values.as_deref()).expect("validated actuator space"),
                    default: x.default,
                })
                .collect();
            (sensors, actuators, a.objective.clone(), a.learner.kind != LearnerKind::None)
        }
    };
    let mut env = Environment {
        scenario,
        sensors,
        actuators,
        objective,
        events: events.clone(),
        attached,
        world: None,
    };
    // fail fast on unresolvable ids
    let enabled = events.is_enabled();
    events.set_enabled(false);
    let probe = env.reset(0);
    events.set_enabled(enabled);
    probe?;
    env.world = None;
    Ok(env)
}

/// Brain state carried across phases of one run.
pub struct Agent {
    pub kind: LearnerKind,
    pub cem: Option<Cem>,
    /// Best training candidate so far: (theta, return).
    pub best: Option<(Vec<f64>, f64)>,
    rng: ChaCha8Rng,
    replay: Vec<Vec<f64>>,
    n_in: usize,
    n_out: usize,
}

impl Agent {
    pub fn new(scenario: &Scenario, env: &Environment, seed: u64) -> Result<Self, AgentError> {
        let kind = scenario.doc.learner_kind();
        let (n_in, n_out) = (env.sensors.len(), env.actuators.len());
        let cem = match (&scenario.doc.agent, kind) {
            (Some(a), LearnerKind::Cem) => Some(Cem::new(
                LinearPolicy::dims(n_in, n_out),
                a.learner.init_std,
                a.learner.population,
                derive_seed(seed, 0),
            )?),
            _ => None,
        };
        Ok(Self {
            kind,
            cem,
            best: None,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)),
            replay: scenario.doc.agent.as_ref().map(|a| a.learner.setpoints.clone()).unwrap_or_default(),
            n_in,
            n_out,
        })
    }

    /// Parameters used outside training: the best training candidate, else
    /// the current sampling mean, else zeros.
    pub fn frozen_policy(&self) -> LinearPolicy {
        let theta = match (&self.best, &self.cem) {
            (Some((t, _)), _) => t.clone(),
            (None, Some(c)) => c.mean.clone(),
            _ => vec![0.0; LinearPolicy::dims(self.n_in, self.n_out)],
        };
        LinearPolicy {
            n_in: self.n_in,
            n_out: self.n_out,
            theta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeReport {
    pub episode: u64,
    pub seed: u64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseReport {
    pub name: String,
    pub mode: PhaseMode,
    pub episodes: Vec<EpisodeReport>,
    pub generations: Vec<CemUpdate>,
    pub best_theta: Option<Vec<f64>>,
    pub best_return: Option<f64>,
    pub return_mean: f64,
    pub return_min: f64,
    pub return_max: f64,
    /// Set when the phase was not executed (training without a learner).
    pub skipped: bool,
}

/// Run-wide bookkeeping shared by consecutive phases.
#[derive(Debug, Clone, PartialEq)]
pub struct RunContext {
    pub run_seed: u64,
    /// Global episode counter; episode seeds are `derive_seed(run_seed, counter)`.
    pub episode_counter: u64,
    /// Simulation-time offset of the next episode, in seconds.
    pub time_offset: f64,
}

enum Actor<'p> {
    Policy(&'p LinearPolicy),
    Random,
    Replay,
    Idle,
}

fn run_episode(
    env: &mut Environment,
    agent: &mut Agent,
    actor: Actor,
    phase: &PhaseDoc,
    ctx: &mut RunContext,
    on_episode_end: &mut dyn FnMut(&EventBuffer) -> Result<(), AgentError>,
) -> Result<EpisodeReport, AgentError> {
    let episode = ctx.episode_counter;
    let seed = derive_seed(ctx.run_seed, episode);
    ctx.episode_counter += 1;
    let events = env.events.clone();
    events.set_time_offset(ctx.time_offset);
    let wrap = |e: AgentError| AgentError::Episode {
        episode,
        seed,
        source: Box::new(e),
    };
    let mut readings = env.reset(seed).map_err(wrap)?;
    let interval = env.scenario.interval() as f64;
    let test = phase.mode == PhaseMode::Test;
    let mut ret = 0.0;
    for step in 0..phase.episode_length {
        let setpoints = match &actor {
            Actor::Policy(p) => {
                let (s, clamped) = muscle_act(p, &readings, &env.sensors, &env.actuators);
                if clamped {
                    events.push(
                        step as f64 * interval,
                        "agent",
                        "agent.warning",
                        json!({"episode": episode, "step": step, "message": "reading outside sensor range clamped"}),
                    );
                }
                s
            }
            Actor::Random => env.actuators.iter().map(|a| a.space.sample(&mut agent.rng)).collect(),
            Actor::Replay => {
                let rows = &agent.replay;
                rows[step as usize % rows.len()].clone()
            }
            Actor::Idle => env.actuators.iter().map(|a| a.default).collect(),
        };
        let r = env.step(&setpoints).map_err(wrap)?;
        ret += r.reward;
        if test && env.attached {
            events.push(
                step as f64 * interval,
                "agent",
                "agent.action",
                json!({"episode": episode, "step": step, "readings": readings, "setpoints": setpoints, "reward": r.reward}),
            );
        }
        readings = r.readings;
    }
    let end = phase.episode_length as f64 * interval;
    if let Some(w) = env.world() {
        let stats = w.kernel().stats();
        let steps: serde_json::Map<String, serde_json::Value> =
            stats.steps.iter().map(|(id, n)| (id.clone(), json!(n))).collect();
        events.push(end, "kernel", "kernel.step", json!({"episode": episode, "t_end": end, "steps": steps}));
    }
    events.push(
        end,
        "agent",
        "agent.episode",
        json!({
            "phase": phase.name,
            "mode": if test { "test" } else { "train" },
            "episode": episode,
            "seed": seed,
            "return": ret,
            "steps": phase.episode_length,
        }),
    );
    on_episode_end(&events)?;
    ctx.time_offset += end;
    Ok(EpisodeReport {
        episode,
        seed,
        ret,
        steps: phase.episode_length,
    })
}

/// Runs one schedule phase. Training with the CEM learner runs
/// `phase.episodes` generations of one episode per candidate; training with
/// any other learner is skipped. Test phases run the frozen best policy (CEM),
/// uniform setpoints (random), the replay list, or no agent at all (none).
/// During training only `agent.*` records reach the event buffer.
pub fn run_phase(
    env: &mut Environment,
    agent: &mut Agent,
    phase: &PhaseDoc,
    ctx: &mut RunContext,
    on_episode_end: &mut dyn FnMut(&EventBuffer) -> Result<(), AgentError>,
) -> Result<PhaseReport, AgentError> {
    let mut report = PhaseReport {
        name: phase.name.clone(),
        mode: phase.mode,
        episodes: Vec::new(),
        generations: Vec::new(),
        best_theta: None,
        best_return: None,
        return_mean: 0.0,
        return_min: 0.0,
        return_max: 0.0,
        skipped: false,
    };
    let events = env.events.clone();
    match phase.mode {
        PhaseMode::Train => {
            if agent.kind != LearnerKind::Cem {
                report.skipped = true;
                return Ok(report);
            }
            events.set_kind_filter(Some("agent."));
            let result = (|| -> Result<(), AgentError> {
                for g in 0..phase.episodes {
                    let candidates = agent.cem.as_mut().expect("cem learner").sample();
                    let mut scored = Vec::with_capacity(candidates.len());
                    for theta in candidates {
                        let policy = LinearPolicy {
                            n_in: env.sensors.len(),
                            n_out: env.actuators.len(),
                            theta: theta.clone(),
                        };
                        let ep = run_episode(env, agent, Actor::Policy(&policy), phase, ctx, on_episode_end)?;
                        if agent.best.as_ref().map_or(true, |(_, b)| ep.ret > *b) {
                            agent.best = Some((theta.clone(), ep.ret));
                        }
                        report.episodes.push(ep.clone());
                        scored.push((theta, ep.ret));
                    }
                    let cem = agent.cem.as_mut().expect("cem learner");
                    let u = cem.update(&scored)?;
                    events.set_time_offset(0.0);
                    events.push(
                        ctx.time_offset,
                        "agent",
                        "agent.generation",
                        json!({
                            "phase": phase.name,
                            "generation": g,
                            "elite_mean_return": u.elite_mean_return,
                            "best_return": u.best_return,
                            "mean_return": u.mean_return,
                            "mean": cem.mean,
                            "std": cem.std,
                        }),
                    );
                    on_episode_end(&events)?;
                    report.generations.push(u);
                }
                Ok(())
            })();
            events.set_kind_filter(None);
            result?;
        }
        PhaseMode::Test => {
            let policy = agent.frozen_policy();
            for _ in 0..phase.episodes {
                let actor = match agent.kind {
                    LearnerKind::Cem => Actor::Policy(&policy),
                    LearnerKind::Random => Actor::Random,
                    LearnerKind::Replay => Actor::Replay,
                    LearnerKind::None => Actor::Idle,
                };
                let ep = run_episode(env, agent, actor, phase, ctx, on_episode_end)?;
                report.episodes.push(ep);
            }
        }
    }
    if let Some((t, r)) = &agent.best {
        report.best_theta = Some(t.clone());
        report.best_return = Some(*r);
    }
    let returns: Vec<f64> = report.episodes.iter().map(|e| e.ret).collect();
    if !returns.is_empty() {
        report.return_mean = returns.iter().sum::<f64>() / returns.len() as f64;
        report.return_min = returns.iter().copied().fold(f64::INFINITY, f64::min);
        report.return_max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(report)
}
