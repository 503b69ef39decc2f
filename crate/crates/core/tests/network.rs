use analyse_core::net::{
    AttackRule, DropReason, Link, NetEvent, NetworkSim, NetworkTopology, Node, NodeKind, RuleAction, RuleMatch,
};
use proptest::prelude::*;

fn node(id: &str, kind: NodeKind) -> Node {
    Node { id: id.into(), kind }
}

fn link(a: &str, b: &str, latency_ms: f64, kbps: Option<f64>, loss: f64) -> Link {
    Link {
        a: a.into(),
        b: b.into(),
        latency_ms,
        bandwidth_kbps: kbps,
        loss_prob: loss,
    }
}

fn pair(latency_ms: f64, kbps: Option<f64>, loss: f64) -> NetworkTopology {
    NetworkTopology {
        nodes: vec![node("a", NodeKind::Host), node("b", NodeKind::Host)],
        links: vec![link("a", "b", latency_ms, kbps, loss)],
    }
}

fn star(loss: f64) -> NetworkTopology {
    NetworkTopology {
        nodes: vec![
            node("h1", NodeKind::Host),
            node("h2", NodeKind::Host),
            node("h3", NodeKind::Host),
            node("sw", NodeKind::Switch),
            node("op", NodeKind::Host),
        ],
        links: vec![
            link("h1", "sw", 1.0, Some(1000.0), loss),
            link("h2", "sw", 2.0, Some(500.0), loss),
            link("h3", "sw", 3.0, None, loss),
            link("sw", "op", 0.5, Some(10000.0), loss),
        ],
    }
}

#[test]
fn latency_only_delivery_is_exact() {
    for latency_ms in [0.001, 1.0, 7.25, 120.0] {
        let mut sim = NetworkSim::new(pair(latency_ms, None, 0.0), 1).unwrap();
        let f = sim.frame("a", "b", 5_000_000, "x".repeat(300));
        sim.send(f).unwrap();
        sim.run_until(u64::MAX);
        let inbox = sim.take_inbox("b").unwrap();
        assert_eq!(inbox.len(), 1);
        let expected = 5_000_000 + (latency_ms * 1000.0).round() as u64;
        assert_eq!(inbox[0].delivered_at, expected);
    }
}

#[test]
fn transmission_time_adds_ceiling_of_serialization() {
    // 125 bytes at 3 kbps: 1000 bits / 3 kbps = 333.33 ms -> 333334 us
    let mut sim = NetworkSim::new(pair(2.0, Some(3.0), 0.0), 1).unwrap();
    let f = sim.frame("a", "b", 0, "y".repeat(125));
    sim.send(f).unwrap();
    sim.run_until(u64::MAX);
    assert_eq!(sim.take_inbox("b").unwrap()[0].delivered_at, 2_000 + 333_334);
}

fn deliveries_with_loss(seed: u64) -> usize {
    let mut sim = NetworkSim::new(pair(1.0, None, 0.5), seed).unwrap();
    for i in 0..1000u64 {
        let f = sim.frame("a", "b", i * 10_000, format!("{i}"));
        sim.send(f).unwrap();
    }
    sim.run_until(u64::MAX);
    sim.take_inbox("b").unwrap().len()
}

#[test]
fn seeded_loss_stays_in_binomial_interval() {
    for seed in [1, 2, 3, 42, 2024] {
        let n = deliveries_with_loss(seed);
        assert!((459..=541).contains(&n), "seed {seed}: {n} deliveries");
    }
    assert_eq!(deliveries_with_loss(7), deliveries_with_loss(7));
}

#[test]
fn event_log_reconstructs_inbox_and_counters() {
    let mut sim = NetworkSim::new(star(0.2), 99).unwrap();
    sim.install_rule(AttackRule {
        rule_id: "slow".into(),
        at_node: "sw".into(),
        matcher: RuleMatch {
            src: Some("h2".into()),
            ..Default::default()
        },
        action: RuleAction::Delay { extra_ms: 40.0 },
        active_from: 0.0,
        active_until: None,
        enabled: true,
    })
    .unwrap();
    for i in 0..200u64 {
        let src = ["h1", "h2", "h3"][(i % 3) as usize];
        let f = sim.frame(src, "op", i * 3_000, format!("{{\"n\":{i}}}"));
        sim.send(f).unwrap();
    }
    sim.run_until(u64::MAX);
    let inbox = sim.take_inbox("op").unwrap();
    let delivered: Vec<(String, u64, u64)> = sim
        .events()
        .iter()
        .filter_map(|e| match e {
            NetEvent::Deliver { time, frame_id, src, .. } => Some((src.clone(), *frame_id, *time)),
            _ => None,
        })
        .collect();
    let from_inbox: Vec<(String, u64, u64)> =
        inbox.iter().map(|d| (d.frame.src.clone(), d.frame.frame_id, d.delivered_at)).collect();
    assert_eq!(delivered, from_inbox);

    let sends = sim.events().iter().filter(|e| matches!(e, NetEvent::Send { .. })).count();
    let drops = sim.events().iter().filter(|e| matches!(e, NetEvent::Drop { .. })).count();
    assert_eq!(sends, 200);
    assert_eq!(sends, delivered.len() + drops);

    let bytes_out: u64 = ["h1", "h2", "h3"].iter().map(|n| sim.read_counters(n, 1.0).unwrap().bytes_out).sum();
    let bytes_in = sim.read_counters("op", 1.0).unwrap().bytes_in;
    let bytes_dropped: u64 = ["h1", "h2", "h3", "sw", "op"]
        .iter()
        .map(|n| sim.read_counters(n, 1.0).unwrap().bytes_dropped)
        .sum();
    assert_eq!(bytes_out, bytes_in + bytes_dropped);
}

#[test]
fn offline_source_drops_without_counting_output() {
    let mut sim = NetworkSim::new(pair(1.0, None, 0.0), 3).unwrap();
    sim.restart_node("a", 2.0).unwrap();
    let f = sim.frame("a", "b", 1_000_000, "p".into());
    sim.send(f).unwrap();
    sim.run_until(u64::MAX);
    assert_eq!(sim.read_counters("a", 1.0).unwrap().bytes_out, 0);
    assert!(sim.events().iter().any(|e| matches!(
        e,
        NetEvent::Drop {
            reason: DropReason::SourceOffline,
            ..
        }
    )));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn counters_are_conserved(seed in any::<u64>(), loss in 0.0f64..1.0, frames in 1usize..80) {
        let mut sim = NetworkSim::new(star(loss), seed).unwrap();
        for i in 0..frames {
            let src = ["h1", "h2", "h3"][i % 3];
            let f = sim.frame(src, "op", i as u64 * 500, "z".repeat(10 + i % 40));
            sim.send(f).unwrap();
        }
        sim.run_until(u64::MAX);
        let out: u64 = ["h1", "h2", "h3"].iter().map(|n| sim.read_counters(n, 1.0).unwrap().bytes_out).sum();
        let inn = sim.read_counters("op", 1.0).unwrap().bytes_in;
        let dropped: u64 = ["h1", "h2", "h3", "sw", "op"].iter().map(|n| sim.read_counters(n, 1.0).unwrap().bytes_dropped).sum();
        prop_assert_eq!(out, inn + dropped);
        let delivered = sim.take_inbox("op").unwrap().len();
        let drops = sim.events().iter().filter(|e| matches!(e, NetEvent::Drop { .. })).count();
        prop_assert_eq!(delivered + drops, frames);
    }

    #[test]
    fn utilization_is_a_fraction(seed in any::<u64>(), frames in 0usize..60) {
        let mut sim = NetworkSim::new(star(0.0), seed).unwrap();
        for i in 0..frames {
            let f = sim.frame("h1", "op", i as u64 * 100, "q".repeat(200));
            sim.send(f).unwrap();
        }
        sim.run_until(1_000_000);
        for n in ["h1", "sw", "op"] {
            let u = sim.read_counters(n, 1.0).unwrap().utilization;
            prop_assert!((0.0..=1.0).contains(&u));
        }
    }
}
