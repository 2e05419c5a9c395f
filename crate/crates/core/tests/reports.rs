#[path = "support/stub.rs"]
mod stub;

use std::path::PathBuf;

use telewatch_core::detect::{AnomalyEvent, EventContext, EventStatus};
use telewatch_core::nn::ModelKind;
use telewatch_core::report::{
    build_pairs, generate_report, read_discrepancy_csv, render_report_markdown, BackendTag, ReasoningBackend,
    REPORT_SECTIONS,
};
use telewatch_core::verify::{Severity, Verdict};
use telewatch_core::TrackKey;

fn table_fixture() -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/discrepancy_reports.csv");
    std::fs::read_to_string(p).unwrap()
}

fn event(n: usize) -> AnomalyEvent {
    AnomalyEvent {
        id: format!("ev{n}"),
        key: TrackKey::new(34, 21),
        timestamp_us: 1_735_689_600_000_000 + n as i64 * 2_000_000,
        window: n,
        error: 4.2,
        threshold: 1.1,
        features: [("SSNR".to_string(), 9.5)].into_iter().collect(),
        top_feature: Some("SSNR".into()),
        context: EventContext::default(),
        status: EventStatus::Pending,
        model: ModelKind::LstmRecon,
        severity: Some(Severity::High),
        proposed_action: None,
    }
}

#[test]
fn pair_dataset_skips_null_actions() {
    let text = table_fixture();
    let records = read_discrepancy_csv(text.as_bytes()).unwrap();
    assert_eq!(records.len(), 10);
    // Oracle: the raw last field of each data line.
    let with_action = text
        .lines()
        .skip(1)
        .filter(|l| l.rsplit(',').next().unwrap() != "None")
        .count();
    let (pairs, stats) = build_pairs(&records);
    assert_eq!(stats.written, with_action);
    assert_eq!(stats.written + stats.skipped, records.len());
    assert_eq!(pairs.len(), 6);
    assert!(pairs.iter().all(|p| p.response != "None"));
    assert!(pairs[0].prompt.contains("SPACECRAFT_ID: 108"));
    assert!(pairs[0].prompt.contains("GROUND_ANTENNA_ID: 219"));
    assert!(pairs[0].prompt.contains("Receiver unexpectedly out of lock at 10:20:03."));
    assert_eq!(pairs[0].response, "Signal reacquired. Carrier locked at 10:23:47...");
}

#[test]
fn remote_backend_text_is_used_verbatim() {
    let stub = stub::Stub::start("Reacquire downlink.");
    let backend = ReasoningBackend::remote(&stub.base_url, "dr-tuned");
    let report = generate_report(&event(1), Some(Verdict::Agree), &backend);
    assert_eq!(report.suggested_action, "Reacquire downlink.");
    assert_eq!(report.backend, BackendTag::Remote);
    assert_eq!(stub.calls(), 1);
    let sent: serde_json::Value = serde_json::from_str(&stub.bodies()[0]).unwrap();
    assert_eq!(sent["model"], "dr-tuned");
    assert_eq!(sent["stream"], false);
    assert!(sent["prompt"].as_str().unwrap().contains("SPACECRAFT_ID: 21"));
}

#[test]
fn template_backend_never_calls_out() {
    let stub = stub::Stub::start("unused");
    for n in 0..5 {
        let report = generate_report(&event(n), None, &ReasoningBackend::Template);
        assert_eq!(report.backend, BackendTag::Template);
        assert!(!report.suggested_action.is_empty());
    }
    assert_eq!(stub.calls(), 0);
}

#[test]
fn unreachable_backend_falls_back_every_time() {
    let backend = ReasoningBackend::Remote {
        base_url: stub::dead_url(),
        model: "m".into(),
        path: "/api/generate".into(),
        timeout_ms: 500,
    };
    for n in 0..20 {
        let report = generate_report(&event(n), None, &backend);
        assert_eq!(report.backend, BackendTag::Template);
        assert!(!report.suggested_action.is_empty());
        assert!(report.generation_log.iter().any(|l| l.contains("fell back to template")));
        let md = render_report_markdown(&report);
        for s in REPORT_SECTIONS {
            assert!(md.contains(&format!("## {s}")), "{s}");
        }
    }
}
