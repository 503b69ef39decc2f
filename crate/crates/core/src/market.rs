//! Local reactive-power market.
//!
//! Each interval the operator greedily accepts offers until every bus is back
//! inside the voltage band: target the worst-violated bus, score each offer by
//! price over effectiveness (voltage sensitivity at that bus, signed by the
//! offer direction and the needed correction), accept the best at full
//! quantity, re-solve, repeat. Settlement is pay-as-bid.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{solve_power_flow, voltage_sensitivity, BusId, GridModel, GridState, Sgen};

/// Offers at most this effective (pu per Mvar) are skipped for an iteration.
pub const EFFECTIVENESS_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("invalid voltage band: {0}")]
    InvalidBand(String),
    #[error("invalid offer {offer_id}: {message}")]
    InvalidOffer { offer_id: String, message: String },
    #[error("malformed offer payload: {0}")]
    Wire(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Offer {
    pub offer_id: String,
    pub agent_id: String,
    pub bus: BusId,
    /// Signed reactive capacity, positive for injection.
    pub q_mvar: f64,
    pub price_eur_per_mvar: f64,
    pub interval: u64,
}

impl Offer {
    /// Canonical JSON with sorted keys, as carried in network frames.
    pub fn to_wire(&self) -> String {
        let v = serde_json::to_value(self).expect("offers serialize");
        crate::telemetry::to_canonical_string(&v).expect("offer fields are finite")
    }

    pub fn from_wire(payload: &str) -> Result<Self, MarketError> {
        serde_json::from_str(payload).map_err(|e| MarketError::Wire(e.to_string()))
    }

    /// Checks the offer against the asset's reactive limits.
    pub fn validate(&self, q_min_mvar: f64, q_max_mvar: f64) -> Result<(), MarketError> {
        let bad = |m: String| {
            Err(MarketError::InvalidOffer {
                offer_id: self.offer_id.clone(),
                message: m,
            })
        };
        if !self.q_mvar.is_finite() || self.q_mvar == 0.0 {
            return bad("q_mvar must be finite and non-zero".into());
        }
        if !(self.price_eur_per_mvar >= 0.0) || !self.price_eur_per_mvar.is_finite() {
            return bad("price must be finite and >= 0".into());
        }
        if self.q_mvar > q_max_mvar + 1e-12 || self.q_mvar < q_min_mvar - 1e-12 {
            return bad(format!(
                "q_mvar {} outside asset limits [{q_min_mvar}, {q_max_mvar}]",
                self.q_mvar
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageBand {
    #[serde(default = "VoltageBand::default_min")]
    pub v_min_pu: f64,
    #[serde(default = "VoltageBand::default_max")]
    pub v_max_pu: f64,
}

impl Default for VoltageBand {
    fn default() -> Self {
        Self {
            v_min_pu: 0.95,
            v_max_pu: 1.05,
        }
    }
}

impl VoltageBand {
    fn default_min() -> f64 {
        0.95
    }

    fn default_max() -> f64 {
        1.05
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        if self.v_min_pu > 0.0 && self.v_min_pu < self.v_max_pu && self.v_max_pu.is_finite() {
            Ok(())
        } else {
            Err(MarketError::InvalidBand(format!(
                "need 0 < v_min_pu < v_max_pu, got [{}, {}]",
                self.v_min_pu, self.v_max_pu
            )))
        }
    }

    /// Distance outside the band, zero inside.
    pub fn excursion(&self, vm: f64) -> f64 {
        (self.v_min_pu - vm).max(vm - self.v_max_pu).max(0.0)
    }

    /// +1 when the voltage must rise, -1 when it must fall, 0 inside the band.
    pub fn correction_sign(&self, vm: f64) -> f64 {
        if vm < self.v_min_pu {
            1.0
        } else if vm > self.v_max_pu {
            -1.0
        } else {
            0.0
        }
    }

    /// Worst-violated bus: largest excursion, ties to the lowest bus id.
    pub fn worst_violation(&self, state: &GridState) -> Option<(BusId, f64)> {
        let mut worst: Option<(BusId, f64)> = None;
        for (id, vm) in state.bus_ids.iter().zip(&state.vm) {
            let exc = self.excursion(*vm);
            if exc <= 0.0 {
                continue;
            }
            worst = match worst {
                Some((wid, wexc)) if wexc > exc || (wexc == exc && wid < *id) => Some((wid, wexc)),
                _ => Some((*id, exc)),
            };
        }
        worst
    }

    pub fn is_satisfied(&self, state: &GridState) -> bool {
        state.vm.iter().all(|v| self.excursion(*v) == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedOffer {
    pub offer_id: String,
    pub agent_id: String,
    pub bus: BusId,
    pub q_mvar: f64,
    pub price_eur_per_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub interval: u64,
    /// In acceptance order.
    pub accepted: Vec<AcceptedOffer>,
    /// Every bidding agent appears, with 0 when nothing was accepted.
    pub payments: BTreeMap<String, f64>,
    pub resolved: bool,
    /// The base power flow failed; nothing was procured.
    pub aborted: bool,
    pub iterations: usize,
    pub final_vm: BTreeMap<BusId, f64>,
}

impl ClearingResult {
    pub fn total_cost(&self) -> f64 {
        self.payments.values().sum()
    }

    pub fn accepted_mvar(&self, agent_id: &str) -> f64 {
        self.accepted
            .iter()
            .filter(|a| a.agent_id == agent_id)
            .map(|a| a.q_mvar)
            .sum()
    }
}

/// Adds every offer in `accepted` to the model as a reactive injection.
pub fn apply_offers<'a>(model: &GridModel, accepted: impl IntoIterator<Item = &'a Offer>) -> GridModel {
    let mut m = model.clone();
    for o in accepted {
        m.sgens.push(Sgen::reactive(o.bus, o.q_mvar));
    }
    m
}

fn converged(model: &GridModel) -> Option<GridState> {
    solve_power_flow(model).ok().filter(|s| s.converged)
}

pub fn clear_market(offers: &[Offer], model: &GridModel, band: &VoltageBand, interval: u64) -> ClearingResult {
    let mut payments: BTreeMap<String, f64> = offers.iter().map(|o| (o.agent_id.clone(), 0.0)).collect();
    let mut result = ClearingResult {
        interval,
        accepted: Vec::new(),
        payments: BTreeMap::new(),
        resolved: false,
        aborted: false,
        iterations: 0,
        final_vm: BTreeMap::new(),
    };
    let Some(mut state) = converged(model) else {
        result.aborted = true;
        result.payments = payments;
        return result;
    };
    let mut current = model.clone();
    let mut remaining: Vec<&Offer> = offers.iter().collect();
    remaining.sort_by(|a, b| a.offer_id.cmp(&b.offer_id));

    loop {
        let Some((target, _)) = band.worst_violation(&state) else {
            result.resolved = true;
            break;
        };
        if remaining.is_empty() {
            break;
        }
        result.iterations += 1;
        let vm_target = state.vm_of(target).expect("target bus is in the state");
        let direction = band.correction_sign(vm_target);
        let mut sensitivity: BTreeMap<BusId, Option<f64>> = BTreeMap::new();
        let mut best: Option<(f64, usize)> = None;
        for (i, o) in remaining.iter().enumerate() {
            let s = *sensitivity
                .entry(o.bus)
                .or_insert_with(|| voltage_sensitivity(&current, &state, target, o.bus).ok());
            let Some(s) = s else { continue };
            let e = s * o.q_mvar.signum() * direction;
            if e <= EFFECTIVENESS_EPSILON {
                continue;
            }
            let score = o.price_eur_per_mvar / e;
            // remaining is sorted by offer_id, so strict < keeps the lower id on ties
            if best.map_or(true, |(b, _)| score < b) {
                best = Some((score, i));
            }
        }
        let Some((_, i)) = best else { break };
        let o = remaining.remove(i);
        current.sgens.push(Sgen::reactive(o.bus, o.q_mvar));
        result.accepted.push(AcceptedOffer {
            offer_id: o.offer_id.clone(),
            agent_id: o.agent_id.clone(),
            bus: o.bus,
            q_mvar: o.q_mvar,
            price_eur_per_mvar: o.price_eur_per_mvar,
        });
        match converged(&current) {
            Some(s) => state = s,
            None => break,
        }
    }
    for (k, v) in settle(&result) {
        payments.insert(k, v);
    }
    result.payments = payments;
    result.final_vm = state.bus_ids.iter().copied().zip(state.vm.iter().copied()).collect();
    result
}

/// Pay-as-bid: each agent receives price times |accepted quantity|.
pub fn settle(result: &ClearingResult) -> BTreeMap<String, f64> {
    let mut pay = BTreeMap::new();
    for a in &result.accepted {
        *pay.entry(a.agent_id.clone()).or_insert(0.0) += a.price_eur_per_mvar * a.q_mvar.abs();
    }
    pay
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BidStrategy {
    Static,
    Jitter,
}

/// What a bidder knows about its asset when bidding.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetState {
    pub agent_id: String,
    pub bus: BusId,
    /// Signed reactive headroom to offer; zero means no offer.
    pub headroom_mvar: f64,
}

pub const JITTER_SPAN: f64 = 0.2;

pub fn jitter_price(p0: f64, u: f64) -> f64 {
    p0 * (1.0 + u)
}

/// Offers full headroom at `p0` (static) or `p0 * (1 + u)`, u ~ U[-0.2, 0.2]
/// (jitter). The uniform draw is only taken when an offer is emitted.
pub fn baseline_bid(
    asset: &AssetState,
    strategy: BidStrategy,
    p0: f64,
    interval: u64,
    rng: &mut impl Rng,
) -> Option<Offer> {
    if asset.headroom_mvar == 0.0 || !asset.headroom_mvar.is_finite() {
        return None;
    }
    let price = match strategy {
        BidStrategy::Static => p0,
        BidStrategy::Jitter => jitter_price(p0, rng.gen_range(-JITTER_SPAN..=JITTER_SPAN)),
    };
    let dir = if asset.headroom_mvar > 0.0 { "up" } else { "down" };
    Some(Offer {
        offer_id: format!("{}-{}-{}", asset.agent_id, interval, dir),
        agent_id: asset.agent_id.clone(),
        bus: asset.bus,
        q_mvar: asset.headroom_mvar,
        price_eur_per_mvar: price,
        interval,
    })
}
