//! Independent reference implementations used as test oracles. Nothing here
//! calls into the solver, clearing or summary code under test.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use analyse_core::grid::{Bus, BusId, BusKind, GridModel, Line, Load, Sgen};
use analyse_core::market::Offer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use num_complex::Complex64;
use serde_json::Value;

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn index_of(model: &GridModel, id: BusId) -> usize {
    model.buses.iter().position(|b| b.id == id).expect("bus exists")
}

pub fn admittance(model: &GridModel) -> Vec<Vec<Complex64>> {
    let n = model.buses.len();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for l in &model.lines {
        let (i, j) = (index_of(model, l.from_bus), index_of(model, l.to_bus));
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(l.r_pu, l.x_pu);
        let half = Complex64::new(0.0, l.b_shunt_pu / 2.0);
        y[i][i] += ys + half;
        y[j][j] += ys + half;
        y[i][j] -= ys;
        y[j][i] -= ys;
    }
    y
}

/// Scheduled net injection per bus in pu (generation minus load).
pub fn scheduled(model: &GridModel) -> Vec<Complex64> {
    let mut s = vec![Complex64::new(0.0, 0.0); model.buses.len()];
    for l in &model.loads {
        s[index_of(model, l.bus)] -= Complex64::new(l.p_mw, l.q_mvar) / model.base_mva;
    }
    for g in &model.sgens {
        s[index_of(model, g.bus)] += Complex64::new(g.p_mw, g.q_mvar) / model.base_mva;
    }
    s
}

/// Gauss-Seidel load flow. Returns complex bus voltages in model order, or
/// `None` when it fails to settle.
pub fn gauss_seidel(model: &GridModel) -> Option<Vec<Complex64>> {
    let y = admittance(model);
    let s = scheduled(model);
    let n = model.buses.len();
    let mut v: Vec<Complex64> = model
        .buses
        .iter()
        .map(|b| match b.kind {
            BusKind::Slack => Complex64::new(b.vm_setpoint, 0.0),
            BusKind::Pq => Complex64::new(1.0, 0.0),
        })
        .collect();
    for _ in 0..200_000 {
        let mut delta: f64 = 0.0;
        for i in 0..n {
            if model.buses[i].kind == BusKind::Slack {
                continue;
            }
            let mut sum = Complex64::new(0.0, 0.0);
            for k in 0..n {
                if k != i {
                    sum += y[i][k] * v[k];
                }
            }
            let next = (s[i].conj() / v[i].conj() - sum) / y[i][i];
            delta = delta.max((next - v[i]).norm());
            v[i] = next;
        }
        if delta < 1e-14 {
            return Some(v);
        }
        if !delta.is_finite() {
            return None;
        }
    }
    None
}

/// Largest |P| or |Q| mismatch over PQ buses, in pu, for polar voltages.
pub fn max_mismatch(model: &GridModel, vm: &[f64], va: &[f64]) -> f64 {
    let y = admittance(model);
    let s = scheduled(model);
    let v: Vec<Complex64> = vm.iter().zip(va).map(|(m, a)| Complex64::from_polar(*m, *a)).collect();
    let mut worst: f64 = 0.0;
    for i in 0..v.len() {
        if model.buses[i].kind == BusKind::Slack {
            continue;
        }
        let current: Complex64 = (0..v.len()).map(|k| y[i][k] * v[k]).sum();
        let calc = v[i] * current.conj();
        let d = s[i] - calc;
        worst = worst.max(d.re.abs()).max(d.im.abs());
    }
    worst
}

fn bus(id: u32, kind: BusKind) -> Bus {
    Bus {
        id: BusId(id),
        kind,
        vm_setpoint: 1.0,
    }
}

fn line(a: u32, b: u32, r: f64, x: f64, bsh: f64) -> Line {
    Line {
        from_bus: BusId(a),
        to_bus: BusId(b),
        r_pu: r,
        x_pu: x,
        b_shunt_pu: bsh,
        rating_mva: 10.0,
    }
}

fn load(b: u32, p: f64, q: f64) -> Load {
    Load {
        bus: BusId(b),
        p_mw: p,
        q_mvar: q,
    }
}

/// Meshed 5-bus grid with line charging and one generating unit.
pub fn meshed_five() -> GridModel {
    GridModel {
        base_mva: 100.0,
        buses: vec![
            Bus {
                id: BusId(1),
                kind: BusKind::Slack,
                vm_setpoint: 1.02,
            },
            bus(2, BusKind::Pq),
            bus(3, BusKind::Pq),
            bus(4, BusKind::Pq),
            bus(5, BusKind::Pq),
        ],
        lines: vec![
            line(1, 2, 0.02, 0.06, 0.06),
            line(1, 3, 0.08, 0.24, 0.05),
            line(2, 3, 0.06, 0.18, 0.04),
            line(2, 4, 0.06, 0.18, 0.04),
            line(2, 5, 0.04, 0.12, 0.03),
            line(3, 4, 0.01, 0.03, 0.02),
            line(4, 5, 0.08, 0.24, 0.05),
        ],
        loads: vec![load(2, 20.0, 10.0), load(3, 45.0, 15.0), load(4, 40.0, 5.0), load(5, 60.0, 10.0)],
        sgens: vec![Sgen {
            bus: BusId(2),
            p_mw: 40.0,
            q_mvar: 30.0,
            q_min_mvar: -50.0,
            q_max_mvar: 50.0,
        }],
    }
}

/// Radial 6-bus feeder with a lateral and non-uniform impedances.
pub fn radial_six() -> GridModel {
    GridModel {
        base_mva: 10.0,
        buses: vec![
            bus(1, BusKind::Slack),
            bus(2, BusKind::Pq),
            bus(3, BusKind::Pq),
            bus(4, BusKind::Pq),
            bus(5, BusKind::Pq),
            bus(6, BusKind::Pq),
        ],
        lines: vec![
            line(1, 2, 0.012, 0.035, 0.0),
            line(2, 3, 0.02, 0.04, 0.0),
            line(3, 4, 0.03, 0.05, 0.001),
            line(2, 5, 0.015, 0.03, 0.0),
            line(5, 6, 0.025, 0.045, 0.0),
        ],
        loads: vec![load(2, 1.0, 0.3), load(3, 0.8, 0.25), load(4, 1.1, 0.4), load(5, 0.6, 0.2), load(6, 0.9, 0.3)],
        sgens: vec![Sgen {
            bus: BusId(6),
            p_mw: 0.5,
            q_mvar: -0.1,
            q_min_mvar: -0.5,
            q_max_mvar: 0.5,
        }],
    }
}

pub struct Case {
    pub model: GridModel,
    pub offers: Vec<Offer>,
}

/// Reference feeder at a random stress level with 1 to 5 random offers.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = rng.gen_range(2.5..4.8);
    let n = rng.gen_range(1..=5);
    let offers = (0..n)
        .map(|i| {
            let sign = if rng.gen_bool(0.8) { 1.0 } else { -1.0 };
            Offer {
                offer_id: format!("o{i}"),
                agent_id: format!("agent_{i}"),
                bus: BusId(rng.gen_range(2..=4)),
                q_mvar: sign * rng.gen_range(0.2..1.2),
                price_eur_per_mvar: rng.gen_range(1.0..20.0),
                interval: 0,
            }
        })
        .collect();
    Case {
        model: GridModel::reference_feeder().with_load_scale(scale),
        offers,
    }
}

pub fn plain_offers(offers: &[Offer]) -> Vec<PlainOffer> {
    offers
        .iter()
        .map(|o| PlainOffer {
            bus: o.bus,
            q_mvar: o.q_mvar,
            price: o.price_eur_per_mvar,
        })
        .collect()
}

/// One offer as the brute-force oracle sees it.
#[derive(Debug, Clone)]
pub struct PlainOffer {
    pub bus: BusId,
    pub q_mvar: f64,
    pub price: f64,
}

pub struct BruteForce {
    /// Minimum pay-as-bid cost over resolving subsets.
    pub best_cost: Option<f64>,
    pub resolving_subsets: usize,
}

/// Bus voltage magnitudes with `offers` added as reactive injections.
pub fn oracle_vm(model: &GridModel, offers: &[&PlainOffer]) -> Option<Vec<f64>> {
    let mut m = model.clone();
    for o in offers {
        m.sgens.push(Sgen {
            bus: o.bus,
            p_mw: 0.0,
            q_mvar: o.q_mvar,
            q_min_mvar: o.q_mvar.min(0.0),
            q_max_mvar: o.q_mvar.max(0.0),
        });
    }
    gauss_seidel(&m).map(|v| v.iter().map(|c| c.norm()).collect())
}

/// Exhaustive search over every subset of `offers`.
pub fn brute_force(model: &GridModel, offers: &[PlainOffer], v_min: f64, v_max: f64) -> BruteForce {
    let mut best: Option<f64> = None;
    let mut count = 0;
    for mask in 0u32..(1 << offers.len()) {
        let chosen: Vec<&PlainOffer> = (0..offers.len()).filter(|i| mask & (1 << i) != 0).map(|i| &offers[i]).collect();
        let Some(vm) = oracle_vm(model, &chosen) else { continue };
        if vm.iter().all(|v| *v >= v_min && *v <= v_max) {
            count += 1;
            let cost: f64 = chosen.iter().map(|o| o.price * o.q_mvar.abs()).sum();
            best = Some(best.map_or(cost, |b: f64| b.min(cost)));
        }
    }
    BruteForce {
        best_cost: best,
        resolving_subsets: count,
    }
}

/// Seed derivation written out from the published SplitMix64 algorithm.
pub fn oracle_derive_seed(base: u64, index: u64) -> u64 {
    const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
    let state = base ^ (index.wrapping_add(1)).wrapping_mul(GAMMA);
    let mut z = state.wrapping_add(GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Direct recount of a log, field by field, from untyped JSON.
#[derive(Debug, Default, PartialEq)]
pub struct Recount {
    pub records: u64,
    pub grid_steps: u64,
    pub violation_count: u64,
    pub max_excursion_pu: f64,
    pub diverged_steps: u64,
    pub clearings: u64,
    pub clearings_with_accepted: u64,
    pub unresolved_clearings: u64,
    pub payments: BTreeMap<String, f64>,
    pub accepted_mvar: BTreeMap<String, f64>,
    pub frames_sent: u64,
    pub frames_delivered: u64,
    pub frames_dropped: u64,
    pub episodes: u64,
    pub train_episodes: u64,
    pub returns: Vec<f64>,
    pub unknown_kinds: u64,
}

pub fn recount(text: &str) -> Recount {
    let known = [
        "run.start", "run.end", "phase.start", "phase.end", "kernel.step", "grid.state", "market.offer",
        "market.clearing", "net.send", "net.deliver", "net.drop", "net.rule", "net.restart", "agent.episode",
        "agent.generation", "agent.action", "agent.warning",
    ];
    let mut r = Recount::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).expect("fixture line parses");
        r.records += 1;
        let kind = v["kind"].as_str().unwrap();
        let p = &v["payload"];
        if !known.contains(&kind) {
            r.unknown_kinds += 1;
        }
        match kind {
            "grid.state" => {
                r.grid_steps += 1;
                let lo = p["v_min"].as_f64().unwrap();
                let hi = p["v_max"].as_f64().unwrap();
                for (_, vm) in p["vm"].as_object().unwrap() {
                    let vm = vm.as_f64().unwrap();
                    if vm < lo || vm > hi {
                        r.violation_count += 1;
                        let e = if vm < lo { lo - vm } else { vm - hi };
                        if e > r.max_excursion_pu {
                            r.max_excursion_pu = e;
                        }
                    }
                }
                if p["converged"] == Value::Bool(false) {
                    r.diverged_steps += 1;
                }
            }
            "market.clearing" => {
                r.clearings += 1;
                let acc = p["accepted"].as_array().unwrap();
                if !acc.is_empty() {
                    r.clearings_with_accepted += 1;
                }
                for a in acc {
                    *r.accepted_mvar.entry(a["agent_id"].as_str().unwrap().into()).or_default() +=
                        a["q_mvar"].as_f64().unwrap().abs();
                }
                for (k, x) in p["payments"].as_object().unwrap() {
                    *r.payments.entry(k.clone()).or_default() += x.as_f64().unwrap();
                }
                if p["resolved"] == Value::Bool(false) {
                    r.unresolved_clearings += 1;
                }
            }
            "net.send" => r.frames_sent += 1,
            "net.deliver" => r.frames_delivered += 1,
            "net.drop" => r.frames_dropped += 1,
            "agent.episode" => {
                if p["mode"] == "train" {
                    r.train_episodes += 1;
                } else {
                    r.episodes += 1;
                    r.returns.push(p["return"].as_f64().unwrap());
                }
            }
            _ => {}
        }
    }
    r
}
