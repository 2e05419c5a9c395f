//! Acceptance suite: one PASS/FAIL line per primary criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines are printed even
//! when cargo captures test output. Exits non-zero if any criterion fails.
//! `cargo test -p telewatch-service --test acceptance` runs it alone.

#[path = "../../core/tests/support/gradcases.rs"]
mod gradcases;
#[path = "../../core/tests/support/oracles.rs"]
mod oracles;
#[allow(dead_code)]
#[path = "../../core/tests/support/stub.rs"]
mod stub;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use telewatch_client::review::review;
use telewatch_client::Client;
use telewatch_core::agent::{run_workflow, DatasetRef, Phase, RunConfig};
use telewatch_core::api::RunStatus;
use telewatch_core::detect::{compute_threshold, flag_anomalies, AnomalyEvent, ErrorSeries, ThresholdMethod};
use telewatch_core::ingest::{
    extract_cec_archive, parse_cec_csv, parse_jpl_body, records_to_csv, Band, BandKey, BandNumber, CecOptions,
};
use telewatch_core::nn::{train, ModelConfig, ModelKind, OptimHyper};
use telewatch_core::preprocess::{
    apply_minmax, chrono_split, fit_isolation_forest, fit_minmax, iforest_scores, make_windows, outlier_rows,
    pca_analyze, Direction, ForestConfig, WindowSpec,
};
use telewatch_core::report::{build_pairs, generate_report, read_discrepancy_csv, BackendTag, ReasoningBackend};
use telewatch_core::synthetic::{generate, SyntheticSpec, SIGNAL_COLUMNS};
use telewatch_core::track::Column;
use telewatch_core::verify::{apply_feedback, Action, FeedbackSignal, QHyper, QTable, Severity, Verdict};
use telewatch_core::{Provenance, TrackFrame, TrackKey};
use telewatch_service::{replay_log, Service};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed <= limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn frame_of(cols: &[(&str, Vec<f64>)]) -> TrackFrame {
    let n = cols.first().map_or(0, |c| c.1.len());
    TrackFrame {
        key: TrackKey::new(34, 21),
        timestamps: (0..n as i64).map(|t| t * 2_000_000).collect(),
        columns: cols
            .iter()
            .map(|(name, v)| Column {
                name: name.to_string(),
                values: v.iter().map(|x| Some(*x)).collect(),
            })
            .collect(),
        provenance: Provenance::Synthetic,
    }
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

fn scaler() -> Outcome {
    let start = Instant::now();
    let mut worst = 0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..200);
        let cols: Vec<(String, Vec<f64>)> = (0..4)
            .map(|j| {
                let (lo, span) = (rng.random_range(-1e4..1e4), 10f64.powf(rng.random_range(-3.0..4.0)));
                let constant = j == 3 && seed % 5 == 0;
                let v = (0..n).map(|_| if constant { lo } else { lo + span * rng.random::<f64>() }).collect();
                (format!("c{j}"), v)
            })
            .collect();
        let refs: Vec<(&str, Vec<f64>)> = cols.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
        let frame = frame_of(&refs);
        let names: Vec<String> = cols.iter().map(|c| c.0.clone()).collect();
        let params = fit_minmax(&frame, &names).map_err(|e| e.to_string())?;
        let fwd = apply_minmax(&frame, &params, Direction::Forward).map_err(|e| e.to_string())?;
        let back = apply_minmax(&fwd, &params, Direction::Inverse).map_err(|e| e.to_string())?;
        for (j, (name, values)) in cols.iter().enumerate() {
            let r = params.get(name).unwrap();
            if r.max == r.min {
                continue;
            }
            for (i, x) in values.iter().enumerate() {
                worst = worst.max((back.columns[j].values[i].unwrap() - x).abs());
            }
        }
    }
    ensure(worst <= 1e-9, || format!("round-trip error {worst:e}"))?;

    let frame = frame_of(&[("WX_HUMID", vec![26.3, 25.4, 25.9])]);
    let params = fit_minmax(&frame, &["WX_HUMID".to_string()]).map_err(|e| e.to_string())?;
    let y = apply_minmax(&frame, &params, Direction::Forward).map_err(|e| e.to_string())?.columns[0].values[2].unwrap();
    let oracle = (25.9 - 25.4) / (26.3 - 25.4);
    ensure((y - 0.555556).abs() <= 1e-6 && (y - oracle).abs() <= 1e-12, || format!("humidity scaled to {y}"))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("max round-trip error {worst:.1e} over 100 frames; 25.9 -> {y:.6}; {:.2?}", start.elapsed()))
}

fn isolation_forest() -> Outcome {
    let start = Instant::now();
    let mut x: Vec<Vec<f64>> = vec![vec![0.0]; 99];
    x.push(vec![100.0]);
    let mut removed = 0;
    for seed in 0..10 {
        let cfg = ForestConfig {
            contamination: 0.01,
            seed,
            ..ForestConfig::default()
        };
        let forest = fit_isolation_forest(&x, &cfg).map_err(|e| e.to_string())?;
        if outlier_rows(&iforest_scores(&forest, &x), cfg.contamination) == [99] {
            removed += 1;
        }
    }
    ensure(removed == 10, || format!("planted point removed for {removed}/10 seeds"))?;
    let same = vec![vec![3.0, -1.0]; 64];
    let forest = fit_isolation_forest(&same, &ForestConfig::default()).map_err(|e| e.to_string())?;
    let scores = iforest_scores(&forest, &same);
    ensure(scores.iter().all(|s| *s == scores[0]), || "identical rows scored differently".into())?;
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("planted point removed 10/10 seeds; identical input scores all {:.4}; {:.2?}", scores[0], start.elapsed()))
}

fn pca() -> Outcome {
    let names = vec!["a".to_string(), "b".to_string()];
    let rank_one: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.37, 2.0 * i as f64 * 0.37]).collect();
    let r = pca_analyze(&rank_one, &names, 0.95).map_err(|e| e.to_string())?;
    ensure(r.n_for_target == 1 && r.explained_ratio[0] >= 0.999_999, || {
        format!("rank-1: {} components, ratio {:?}", r.n_for_target, r.explained_ratio)
    })?;
    let cross = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
    let s = pca_analyze(&cross, &names, 0.95).map_err(|e| e.to_string())?;
    ensure(
        s.explained_ratio.len() == 2 && s.explained_ratio.iter().all(|v| (v - 0.5).abs() <= 1e-9),
        || format!("symmetric fixture ratios {:?}", s.explained_ratio),
    )?;
    Ok(format!("rank-1 ratio {:.9}; symmetric ratios {:?}", r.explained_ratio[0], s.explained_ratio))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0f64;
    let mut checked = 0;
    for (name, case) in gradcases::CASES {
        for seed in gradcases::SEEDS {
            let w = case(seed);
            ensure(w.checked > 0, || format!("{name}: nothing checked"))?;
            ensure(w.rel_err <= gradcases::TOL, || format!("{name} seed {seed}: rel {:e} at {}", w.rel_err, w.at))?;
            worst = worst.max(w.rel_err);
            checked += w.checked;
        }
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "{} cases x {} seeds, {checked} entries, worst relative error {worst:.1e}; {:.2?}",
        gradcases::CASES.len(),
        gradcases::SEEDS.len(),
        start.elapsed()
    ))
}

fn training_descent() -> Outcome {
    let start = Instant::now();
    let track = generate(&SyntheticSpec::sine(0)).map_err(|e| e.to_string())?;
    let cols: Vec<String> = SIGNAL_COLUMNS.iter().map(|c| c.to_string()).collect();
    let params = fit_minmax(&track.frame, &cols).map_err(|e| e.to_string())?;
    let scaled = apply_minmax(&track.frame, &params, Direction::Forward).map_err(|e| e.to_string())?;
    let batch = make_windows(&scaled, &cols, &WindowSpec::reconstruction(16)).map_err(|e| e.to_string())?;
    let (tr, val) = chrono_split(&batch, 0.8).map_err(|e| e.to_string())?;
    let hyper = OptimHyper {
        lr: 1e-3,
        epochs: 200,
        ..OptimHyper::default()
    };
    let mut parts = Vec::new();
    for kind in ModelKind::ALL {
        let config = ModelConfig {
            kind,
            input_size: cols.len(),
            output_size: cols.len(),
            hidden_size: 16,
            n_layers: 1,
            dropout: 0.1,
            seq_len: 16,
            seed: 0,
            latent_size: 4,
            n_heads: 2,
        };
        let a = train(&config, &hyper, &tr, &val).map_err(|e| format!("{kind}: {e}"))?;
        let b = train(&config, &hyper, &tr, &val).map_err(|e| format!("{kind}: {e}"))?;
        ensure(a == b, || format!("{kind}: two seeded runs differ"))?;
        let (first, last) = (a.history[0].val, a.history.last().unwrap().val);
        let ratio = last / first;
        ensure(ratio <= 0.5, || format!("{kind}: final/first validation loss {ratio:.3}"))?;
        parts.push(format!("{kind} {ratio:.3}"));
    }
    within(start.elapsed(), Duration::from_secs(300))?;
    Ok(format!("final/epoch-1 validation loss: {}; bit-identical reruns; {:.1?}", parts.join(", "), start.elapsed()))
}

/// The event's window, target row included, contains a planted spike.
fn explained_by(e: &AnomalyEvent, spec: &SyntheticSpec, spikes: &[usize], span: usize) -> bool {
    let row = ((e.timestamp_us - spec.start_us) / spec.step_us) as usize;
    spikes.iter().any(|&p| p <= row && row < p + span)
}

fn detection(series_out: &mut Vec<Vec<f64>>) -> Outcome {
    let start = Instant::now();
    let mut passed = 0;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let spec = SyntheticSpec {
            seed,
            ..SyntheticSpec::default()
        };
        let config = RunConfig { seed, ..RunConfig::desk() };
        let span = config.window.length + config.window.horizon;
        let truth = generate(&spec).map_err(|e| e.to_string())?.spike_rows;
        let (state, _) = run_workflow("acc", DatasetRef::Synthetic { spec: spec.clone() }, config, None, None, None);
        ensure(state.phase == Phase::Completed, || format!("seed {seed}: {:?}", state.failure))?;
        series_out.extend(state.series.iter().map(|s| s.errors.clone()));
        let found = truth
            .iter()
            .filter(|&&p| state.anomalies.iter().any(|e| explained_by(e, &spec, &[p], span)))
            .count();
        let recall = found as f64 / truth.len() as f64;
        let true_events = state.anomalies.iter().filter(|e| explained_by(e, &spec, &truth, span)).count();
        let precision = if state.anomalies.is_empty() {
            0.0
        } else {
            true_events as f64 / state.anomalies.len() as f64
        };
        if recall >= 0.8 && precision >= 0.6 {
            passed += 1;
        }
        lines.push(format!("{recall:.1}/{precision:.2}"));
    }
    let fixture = compute_threshold(&oracles::hundred_zeros_and_one(), ThresholdMethod::MeanKSigma { k: 3.0 })
        .map_err(|e| e.to_string())?;
    let oracle = oracles::mean_k_sigma(&oracles::hundred_zeros_and_one(), 3.0);
    ensure(passed >= 8, || format!("{passed}/10 seeds meet recall >= 0.8, precision >= 0.6 ({})", lines.join(" ")))?;
    ensure((fixture - 30.693).abs() <= 1e-3 && (fixture - oracle).abs() <= 1e-12, || {
        format!("fixture threshold {fixture}")
    })?;
    Ok(format!(
        "{passed}/10 seeds pass (recall/precision {}); fixture threshold {fixture:.4}; {:.1?}",
        lines.join(" "),
        start.elapsed()
    ))
}

fn monotonicity(observed: &[Vec<f64>]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut all: Vec<Vec<f64>> = observed.to_vec();
    for i in 0..300 {
        let n = rng.random_range(1..400);
        all.push(
            (0..n)
                .map(|_| match i % 3 {
                    0 => rng.random::<f64>(),
                    1 => rng.random::<f64>().powi(8) * 1e3,
                    _ => (rng.random_range(0..4) as f64) * 0.5,
                })
                .collect(),
        );
    }
    all.push(oracles::hundred_zeros_and_one());
    let frame_for = |n: usize| frame_of(&[("x", vec![0.0; n])]);
    for errors in &all {
        let s = ErrorSeries {
            model: ModelKind::LstmRecon,
            errors: errors.clone(),
            feature_errors: Vec::new(),
            features: Vec::new(),
            index_map: (0..errors.len()).map(|w| w..w + 1).collect(),
        };
        let frame = frame_for(errors.len());
        let counts: Vec<usize> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|&k| {
                let t = compute_threshold(errors, ThresholdMethod::MeanKSigma { k }).unwrap();
                flag_anomalies(&s, t, &frame).len()
            })
            .collect();
        ensure(counts.windows(2).all(|w| w[1] <= w[0]), || format!("counts {counts:?}"))?;
    }
    Ok(format!("flag counts non-increasing over k = 1..4 on {} error series", all.len()))
}

fn q_learning() -> Outcome {
    let passed = (0..10).filter(|&s| oracles::greedy_matches_oracle(&oracles::train_against_oracle(s, 500))).count();
    ensure(passed >= 9, || format!("greedy policy matched the oracle for {passed}/10 seeds"))?;
    let hyper = QHyper::default();
    let gap = oracles::agree_fixed_point_gap(500);
    let bound = oracles::geometric_gap(hyper.alpha, 500) + 1e-9;
    ensure(gap <= bound, || format!("fixed-point gap {gap:e} > {bound:e}"))?;
    for (action, verdict, reward) in [
        (Action::Confirm, Verdict::Agree, 1.0),
        (Action::Reject, Verdict::Disagree, -1.0),
        (Action::RequestInfo, Verdict::Agree, -0.1),
    ] {
        let mut table = QTable::new(&hyper);
        let u = apply_feedback(&mut table, Severity::Low, action, verdict, &hyper);
        ensure(u.new == hyper.alpha * reward, || format!("first update {} != {}", u.new, hyper.alpha * reward))?;
    }
    Ok(format!("oracle policy learned for {passed}/10 seeds; |Q-1| after 500 agrees {gap:.1e} <= {bound:.1e}; first update = alpha*r"))
}

fn parsers() -> Outcome {
    let band = BandKey {
        band: Band::X,
        band_number: BandNumber::Sx20,
    };
    let data_lines = |t: &str| t.lines().filter(|l| !l.trim().is_empty()).count().saturating_sub(1);
    let mut checked = Vec::new();
    for (input, golden) in [
        ("jpl_x_sx20_day055.txt", "jpl_x_sx20_day055.golden.csv"),
        ("jpl_empty_body.txt", "jpl_empty_body.golden.csv"),
    ] {
        let body = read_fixture(input);
        let (records, report) = parse_jpl_body(&body, band).map_err(|e| e.to_string())?;
        ensure(report.rows_parsed + report.rows_rejected == data_lines(&body), || format!("{input}: row accounting"))?;
        ensure(records_to_csv(&records, Provenance::JplTransmitter) == read_fixture(golden), || {
            format!("{input}: canonical CSV differs from golden")
        })?;
        checked.push(format!("{input} ({} rows)", records.len()));
    }
    let bytes = std::fs::read(fixture("cec_dss14_70m.tar.gz")).map_err(|e| e.to_string())?;
    let (_, text) = extract_cec_archive(&bytes).map_err(|e| e.to_string())?;
    let opts = CecOptions {
        equipment: Some("Agilent".into()),
        ..CecOptions::default()
    };
    let (records, report) = parse_cec_csv(&text, &opts).map_err(|e| e.to_string())?;
    ensure(report.rows_seen() == data_lines(&text), || "CEC row accounting".into())?;
    ensure(!report.columns_extra.is_empty(), || "70 m superset columns not reported".into())?;
    ensure(records_to_csv(&records, Provenance::CecTransmitter) == read_fixture("cec_dss14_70m.golden.csv"), || {
        "CEC canonical CSV differs from golden".into()
    })?;
    checked.push(format!("cec_dss14_70m.tar.gz ({} rows, {} extra columns)", records.len(), report.columns_extra.len()));
    Ok(format!("byte-exact: {}", checked.join(", ")))
}

async fn replay_matches(svc: &Service) -> Result<(), String> {
    let live = svc.snapshot().await;
    let replayed = replay_log(&svc.log_path().await).map_err(|e| e.to_string())?;
    ensure(replayed == live, || format!("replay differs from live state at seq {}", live.last_seq))
}

async fn workflow_and_service() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let svc = Service::open(dir.path()).map_err(|e| e.to_string())?;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    tokio::spawn(telewatch_service::serve_on(listener, svc.clone()));
    let client = Client::new(format!("http://{addr}"));
    let dataset = DatasetRef::Synthetic {
        spec: SyntheticSpec {
            seed: 7,
            ..SyntheticSpec::default()
        },
    };
    let config = RunConfig { seed: 7, ..RunConfig::desk() };
    let err = |e: telewatch_client::ClientError| e.to_string();
    let mut checks = 0;

    let mut runs = Vec::new();
    for _ in 0..2 {
        let id = client.start_run(dataset.clone(), config.clone()).await.map_err(err)?;
        replay_matches(&svc).await?;
        checks += 1;
        let run = client
            .wait_for_run(&id, Duration::from_millis(50), Duration::from_secs(300))
            .await
            .map_err(err)?;
        ensure(run.status == RunStatus::Completed, || format!("run {id}: {:?}", run.error))?;
        replay_matches(&svc).await?;
        checks += 1;
        runs.push(run);
    }
    ensure(!runs[0].report_ids.is_empty(), || "no reports".into())?;

    let mut reports = Vec::new();
    for run in &runs {
        let mut rs = Vec::new();
        for id in &run.report_ids {
            let mut r = client.report(id).await.map_err(err)?;
            r.event_id = r.event_id.trim_start_matches(&format!("{}.", run.id)).to_string();
            rs.push(r);
        }
        reports.push(rs);
    }
    ensure(reports[0] == reports[1], || "seeded runs produced different reports".into())?;

    // First run: verdicts through the API, checking replay after each one.
    let mut submitted = 0;
    while let Some(item) = client.pending(Some(&runs[0].id)).await.map_err(err)?.into_iter().next() {
        client
            .submit_feedback(&item.event.id, &FeedbackSignal::new(Verdict::Agree, "acceptance"))
            .await
            .map_err(err)?;
        replay_matches(&svc).await?;
        checks += 1;
        submitted += 1;
        ensure(submitted < 10_000, || "feedback loop did not terminate".into())?;
    }
    // Second run: the terminal review loop supplies every verdict.
    let script = "a\n".repeat(10_000);
    let mut transcript = Vec::new();
    let summary = review(&client, Some(&runs[1].id), "acceptance", script.as_bytes(), &mut transcript)
        .await
        .map_err(err)?;
    replay_matches(&svc).await?;
    checks += 1;
    let open = client.pending(None).await.map_err(err)?;
    ensure(open.is_empty(), || format!("{} events still open", open.len()))?;
    Ok(format!(
        "{} reports per run, identical across seeded runs; {submitted} API verdicts + {} review verdicts; replay == live at {checks} checkpoints",
        runs[0].report_ids.len(),
        summary.agreed
    ))
}

fn report_pipeline() -> Outcome {
    let text = read_fixture("discrepancy_reports.csv");
    let records = read_discrepancy_csv(text.as_bytes()).map_err(|e| e.to_string())?;
    let nulls = text.lines().skip(1).filter(|l| l.ends_with(",None")).count();
    let (pairs, stats) = build_pairs(&records);
    ensure(stats.skipped == nulls && pairs.len() + nulls == records.len(), || {
        format!("{} pairs, {} skipped, {nulls} null actions", pairs.len(), stats.skipped)
    })?;
    ensure(pairs.iter().all(|p| p.response != "None"), || "null action leaked into pairs".into())?;

    let event = AnomalyEvent {
        id: "acc".into(),
        key: TrackKey::new(34, 21),
        timestamp_us: 1_735_689_600_000_000,
        window: 0,
        error: 3.0,
        threshold: 1.0,
        features: Default::default(),
        top_feature: Some("SSNR".into()),
        context: Default::default(),
        status: telewatch_core::detect::EventStatus::Confirmed,
        model: ModelKind::LstmRecon,
        severity: Some(Severity::High),
        proposed_action: Some(Action::Confirm),
    };
    let stub = stub::Stub::start("Reacquire downlink.");
    let remote = generate_report(&event, Some(Verdict::Agree), &ReasoningBackend::remote(&stub.base_url, "m"));
    ensure(remote.suggested_action == "Reacquire downlink." && remote.backend == BackendTag::Remote, || {
        format!("stub text came back as {:?}", remote.suggested_action)
    })?;
    let before = stub.calls();
    generate_report(&event, None, &ReasoningBackend::Template);
    ensure(stub.calls() == before, || "template backend made a remote call".into())?;

    let dead = ReasoningBackend::Remote {
        base_url: stub::dead_url(),
        model: "m".into(),
        path: "/api/generate".into(),
        timeout_ms: 500,
    };
    let mut failed = 0;
    for _ in 0..20 {
        let r = generate_report(&event, None, &dead);
        if r.backend != BackendTag::Template || r.suggested_action.is_empty() {
            failed += 1;
        }
    }
    ensure(failed == 0, || format!("{failed}/20 reports failed without a backend"))?;
    Ok(format!(
        "{} pairs, {} null actions skipped; stub text verbatim; 20/20 template fallbacks",
        pairs.len(),
        stats.skipped
    ))
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d.as_str()),
        Err(d) => ("FAIL", d.as_str()),
    };
    println!("{tag}  {name:<22} {detail}  [{:.1?}]", start.elapsed());
    outcome.is_ok()
}

fn main() {
    // Only the summary lines should reach the terminal.
    std::panic::set_hook(Box::new(|_| {}));
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    let mut observed = Vec::new();
    println!("acceptance criteria");
    let results = [
        run("scaler", scaler),
        run("isolation forest", isolation_forest),
        run("pca", pca),
        run("gradient checks", gradients),
        run("training descent", training_descent),
        run("detection", || detection(&mut observed)),
        run("monotonicity", || monotonicity(&observed)),
        run("q-learning", q_learning),
        run("parsers", parsers),
        run("workflow + service", || rt.block_on(workflow_and_service())),
        run("report pipeline", report_pipeline),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
