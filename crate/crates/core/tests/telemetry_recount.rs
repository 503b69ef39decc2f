mod common;

use std::fs;

use analyse_core::telemetry::{summarize, summarize_reader, TelemetryError};
use common::{fixtures_dir, recount};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn summary_equals_recount_on_every_fixture() {
    let mut seen = 0;
    for entry in fs::read_dir(fixtures_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
            continue;
        }
        seen += 1;
        let text = fs::read_to_string(&path).unwrap();
        let want = recount(&text);
        let got = summarize(&path).unwrap();
        let name = path.display();
        assert_eq!(got.records, want.records, "{name}");
        assert_eq!(got.unknown_kinds, want.unknown_kinds, "{name}");
        assert_eq!(got.grid_steps, want.grid_steps, "{name}");
        assert_eq!(got.violation_count, want.violation_count, "{name}");
        assert!(close(got.max_excursion_pu, want.max_excursion_pu), "{name}");
        assert_eq!(got.diverged_steps, want.diverged_steps, "{name}");
        assert_eq!(got.clearings, want.clearings, "{name}");
        assert_eq!(got.clearings_with_accepted, want.clearings_with_accepted, "{name}");
        assert_eq!(got.unresolved_clearings, want.unresolved_clearings, "{name}");
        assert_eq!(got.frames_sent, want.frames_sent, "{name}");
        assert_eq!(got.frames_delivered, want.frames_delivered, "{name}");
        assert_eq!(got.frames_dropped, want.frames_dropped, "{name}");
        assert_eq!(got.episodes, want.episodes, "{name}");
        assert_eq!(got.train_episodes, want.train_episodes, "{name}");
        assert_eq!(got.payments.keys().collect::<Vec<_>>(), want.payments.keys().collect::<Vec<_>>(), "{name}");
        for (k, v) in &want.payments {
            assert!(close(got.payments[k], *v), "{name}: payments {k}");
        }
        for (k, v) in &want.accepted_mvar {
            assert!(close(got.accepted_mvar[k], *v), "{name}: accepted {k}");
        }
        if !want.returns.is_empty() {
            let mean = want.returns.iter().sum::<f64>() / want.returns.len() as f64;
            assert!(close(got.return_mean, mean), "{name}");
        }
    }
    assert!(seen >= 4);
}

#[test]
fn handwritten_fixture_values() {
    let s = summarize(&fixtures_dir().join("handwritten.jsonl")).unwrap();
    assert_eq!(s.records, 15);
    assert_eq!(s.violation_count, 3);
    assert!(close(s.max_excursion_pu, 0.02));
    assert_eq!(s.diverged_steps, 1);
    assert_eq!(s.unknown_kinds, 1);
    assert_eq!(s.clearings, 2);
    assert_eq!(s.unresolved_clearings, 1);
    assert_eq!(s.accepted_mvar["a"], 0.5);
    assert_eq!(s.payments["b"], 7.0);
    assert_eq!(s.episodes, 2);
    assert_eq!(s.train_episodes, 1);
    assert_eq!(s.return_mean, 0.5);
    assert_eq!(s.factors["level"], "3");
    assert_eq!(s.seed, Some(17));
}

#[test]
fn malformed_line_is_reported_by_number() {
    let text = fs::read(fixtures_dir().join("malformed.txt")).unwrap();
    match summarize_reader(&text[..]) {
        Err(TelemetryError::MalformedLine { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected malformed line error, got {other:?}"),
    }
}
