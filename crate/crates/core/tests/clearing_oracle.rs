mod common;

use analyse_core::grid::GridModel;
use analyse_core::market::{clear_market, VoltageBand};
use common::{brute_force, random_case, PlainOffer};

#[test]
fn greedy_feasibility_agrees_with_exhaustive_search() {
    let band = VoltageBand::default();
    let mut ratios = Vec::new();
    for seed in 0..30 {
        let case = random_case(seed);
        let plain: Vec<PlainOffer> = case
            .offers
            .iter()
            .map(|o| PlainOffer {
                bus: o.bus,
                q_mvar: o.q_mvar,
                price: o.price_eur_per_mvar,
            })
            .collect();
        let brute = brute_force(&case.model, &plain, band.v_min_pu, band.v_max_pu);
        let greedy = clear_market(&case.offers, &case.model, &band, 0);
        assert!(!greedy.aborted);
        assert_eq!(
            greedy.resolved,
            brute.best_cost.is_some(),
            "case {seed}: greedy resolved={} brute subsets={}",
            greedy.resolved,
            brute.resolving_subsets
        );
        if let Some(best) = brute.best_cost {
            let cost = greedy.total_cost();
            assert!(cost + 1e-9 >= best, "case {seed}: greedy {cost} below optimum {best}");
            if best > 0.0 {
                ratios.push(cost / best);
            }
        }
    }
    let worst = ratios.iter().copied().fold(1.0, f64::max);
    println!("greedy/optimal cost ratio over {} priced cases: worst {worst:.3}", ratios.len());
}

#[test]
fn no_offers_means_nothing_accepted() {
    let band = VoltageBand::default();
    let stressed = GridModel::reference_feeder().with_load_scale(4.0);
    let r = clear_market(&[], &stressed, &band, 3);
    assert!(r.accepted.is_empty());
    assert!(!r.resolved);
    let calm = GridModel::reference_feeder();
    assert!(clear_market(&[], &calm, &band, 3).resolved);
}
