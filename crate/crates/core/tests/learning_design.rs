mod common;

use std::collections::HashSet;

use analyse_core::agent::Cem;
use analyse_core::design::{derive_seed, expand_runs, lookup, parse_experiment, ExperimentDocument};
use common::oracle_derive_seed;
use proptest::prelude::*;

pub const THETA_STAR: f64 = 1.5;

/// Generations until |mean - THETA_STAR| < 0.05, if within `limit`.
pub fn cem_quadratic(seed: u64, limit: usize) -> Option<usize> {
    let mut cem = Cem::new(1, 1.0, 16, seed).unwrap();
    for g in 1..=limit {
        let scored: Vec<(Vec<f64>, f64)> = cem
            .sample()
            .into_iter()
            .map(|t| {
                let r = -(t[0] - THETA_STAR).powi(2);
                (t, r)
            })
            .collect();
        cem.update(&scored).unwrap();
        if (cem.mean[0] - THETA_STAR).abs() < 0.05 {
            return Some(g);
        }
    }
    None
}

#[test]
fn cem_finds_quadratic_optimum() {
    let hits = (0..20).filter(|s| cem_quadratic(*s, 50).is_some()).count();
    assert!(hits >= 18, "{hits} of 20 seeds converged");
}

#[test]
fn seeds_match_independent_derivation() {
    for base in [0u64, 1, 42, 2024, u64::MAX, 0x0123_4567_89AB_CDEF] {
        for i in [0u64, 1, 2, 7, 999, u64::MAX] {
            assert_eq!(derive_seed(base, i), oracle_derive_seed(base, i));
        }
    }
    assert_eq!(derive_seed(0, 0), 7960286522194355700);
    assert_eq!(derive_seed(42, 7), 14737624668983934838);
    assert_eq!(derive_seed(2024, 0), 7668162300524420374);
    assert_eq!(derive_seed(2024, 1), 13220458978008277301);
}

#[test]
fn thousand_derived_seeds_are_distinct() {
    let seeds: HashSet<u64> = (0..1000).map(|i| derive_seed(2024, i)).collect();
    assert_eq!(seeds.len(), 1000);
}

const BASE: &str = "
seed: 1
market: {interval_s: 900}
network:
  rules:
    - {rule_id: r, enabled: false}
";

fn experiment(strategy: &str) -> analyse_core::design::Experiment {
    let text = format!(
        "schema_version: 1
name: grid
base_scenario: base.yaml
base_seed: 5
factors:
  - {{name: interval, path: market/interval_s, levels: [300, 900, 3600]}}
  - {{name: attack, path: network/rules/0/enabled, levels: [false, true]}}
strategy: {strategy}
"
    );
    let doc = ExperimentDocument::parse(&text).unwrap();
    parse_experiment(doc, serde_yaml::from_str(BASE).unwrap()).unwrap()
}

#[test]
fn factorial_three_by_two_order() {
    let runs = expand_runs(&experiment("{kind: full_factorial}"));
    assert_eq!(runs.len(), 6);
    let got: Vec<(i64, bool)> = runs
        .iter()
        .map(|r| {
            (
                lookup(&r.document, "market/interval_s").unwrap().as_i64().unwrap(),
                lookup(&r.document, "network/rules/0/enabled").unwrap().as_bool().unwrap(),
            )
        })
        .collect();
    assert_eq!(
        got,
        vec![(300, false), (300, true), (900, false), (900, true), (3600, false), (3600, true)]
    );
    let ids: Vec<&str> = runs.iter().map(|r| r.run_id.as_str()).collect();
    assert_eq!(ids, ["grid_000", "grid_001", "grid_002", "grid_003", "grid_004", "grid_005"]);
    for r in &runs {
        assert_eq!(r.seed, oracle_derive_seed(5, r.index as u64));
    }
}

#[test]
fn random_design_is_reproducible() {
    let a = expand_runs(&experiment("{kind: random, n: 4}"));
    let b = expand_runs(&experiment("{kind: random, n: 4}"));
    assert_eq!(a.len(), 4);
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn derivation_is_injective_in_index(base in any::<u64>(), i in any::<u64>(), j in any::<u64>()) {
        prop_assume!(i != j);
        prop_assert_ne!(derive_seed(base, i), derive_seed(base, j));
    }
}
