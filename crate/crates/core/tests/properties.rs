use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use telewatch_core::detect::{compute_threshold, flag_anomalies, ErrorSeries, ThresholdMethod};
use telewatch_core::nn::ModelKind;
use telewatch_core::preprocess::{
    apply_minmax, fit_isolation_forest, fit_minmax, iforest_scores, make_windows, pca_analyze, Direction,
    ForestConfig, WindowSpec,
};
use telewatch_core::track::{
    build_track_frames, impute_missing, read_frames_csv, select_track, write_frames_csv, Column, ImputePolicy,
    TrackRecord,
};
use telewatch_core::verify::{apply_feedback, Action, QHyper, QTable, Severity, Verdict};
use telewatch_core::{Provenance, TrackFrame, TrackKey};

fn frame_of(cols: Vec<Vec<Option<f64>>>) -> TrackFrame {
    let n = cols.first().map_or(0, Vec::len);
    TrackFrame {
        key: TrackKey::new(34, 21),
        timestamps: (0..n as i64).map(|t| t * 2_000_000).collect(),
        columns: cols
            .into_iter()
            .enumerate()
            .map(|(i, values)| Column {
                name: format!("f{i}"),
                values,
            })
            .collect(),
        provenance: Provenance::Synthetic,
    }
}

fn records() -> impl Strategy<Value = Vec<TrackRecord>> {
    prop::collection::vec(
        (0i64..20, prop::sample::select(vec![(34u32, 21u32), (43, 21), (63, 0)]), 0usize..3, -1e6f64..1e6),
        0..60,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(seq, (t, (dss, scid), col, v))| {
                TrackRecord::new(seq as u64, t * 1_000_000, TrackKey::new(dss, scid)).with(format!("c{col}"), v)
            })
            .collect()
    })
}

fn sparse_frame() -> impl Strategy<Value = TrackFrame> {
    (1usize..4, 1usize..40).prop_flat_map(|(f, n)| {
        prop::collection::vec(prop::collection::vec(prop::option::weighted(0.7, -1e3f64..1e3), n), f)
            .prop_map(frame_of)
    })
}

fn dense_rows(max_rows: usize, width: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1e3f64..1e3, width), 3..max_rows)
}

fn series(errors: Vec<f64>) -> ErrorSeries {
    let n = errors.len();
    ErrorSeries {
        model: ModelKind::LstmRecon,
        errors,
        feature_errors: Vec::new(),
        features: Vec::new(),
        index_map: (0..n).map(|w| w..w + 1).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frames_ignore_arrival_order(recs in records(), seed in any::<u64>()) {
        let mut shuffled = recs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(
            build_track_frames(&recs, Provenance::AntennaDataset),
            build_track_frames(&shuffled, Provenance::AntennaDataset)
        );
    }

    #[test]
    fn selected_track_holds_exactly_its_records(recs in records()) {
        let frames = build_track_frames(&recs, Provenance::AntennaDataset);
        for key in [TrackKey::new(34, 21), TrackKey::new(43, 21), TrackKey::new(99, 1)] {
            let frame = select_track(&frames, key);
            let mut expected: Vec<(i64, u64)> =
                recs.iter().filter(|r| r.key == key).map(|r| (r.timestamp_us, r.seq)).collect();
            expected.sort();
            prop_assert_eq!(frame.n_rows(), expected.len());
            let ts: Vec<i64> = expected.iter().map(|e| e.0).collect();
            prop_assert_eq!(&frame.timestamps, &ts);
        }
    }

    #[test]
    fn imputation_leaves_nothing_missing(frame in sparse_frame()) {
        for policy in [ImputePolicy::ForwardFillThenDropLeading, ImputePolicy::DropRowsWithMissing, ImputePolicy::ZeroFill] {
            let out = impute_missing(&frame, policy);
            prop_assert_eq!(out.missing_count(), 0);
            prop_assert!(out.validate().is_ok());
        }
    }

    #[test]
    fn canonical_csv_round_trips(recs in records()) {
        let frames = build_track_frames(&recs, Provenance::AntennaDataset);
        let mut buf = Vec::new();
        write_frames_csv(frames.values(), &mut buf).unwrap();
        let back = read_frames_csv(buf.as_slice(), Provenance::AntennaDataset).unwrap();
        prop_assert_eq!(back.len(), frames.len());
        for (key, f) in &frames {
            let b = &back[key];
            prop_assert_eq!(&b.timestamps, &f.timestamps);
            for c in &f.columns {
                prop_assert_eq!(&b.column(&c.name).unwrap().values, &c.values);
            }
        }
    }

    #[test]
    fn minmax_forward_in_unit_range_and_inverts(rows in dense_rows(40, 3)) {
        let frame = frame_of((0..3).map(|j| rows.iter().map(|r| Some(r[j])).collect()).collect());
        let names: Vec<String> = (0..3).map(|j| format!("f{j}")).collect();
        let params = fit_minmax(&frame, &names).unwrap();
        let fwd = apply_minmax(&frame, &params, Direction::Forward).unwrap();
        let back = apply_minmax(&fwd, &params, Direction::Inverse).unwrap();
        for (j, name) in names.iter().enumerate() {
            let r = params.get(name).unwrap();
            for (i, row) in rows.iter().enumerate() {
                let y = fwd.columns[j].values[i].unwrap();
                prop_assert!((0.0..=1.0).contains(&y), "{} -> {}", row[j], y);
                if r.max > r.min {
                    prop_assert!((back.columns[j].values[i].unwrap() - row[j]).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn scoring_is_row_wise(rows in dense_rows(30, 2), seed in 0u64..1000) {
        let cfg = ForestConfig { n_trees: 20, seed, ..Default::default() };
        let forest = fit_isolation_forest(&rows, &cfg).unwrap();
        let scores = iforest_scores(&forest, &rows);
        let mut perm: Vec<usize> = (0..rows.len()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let permuted_scores = iforest_scores(&forest, &permuted);
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(permuted_scores[k], scores[i]);
        }
    }

    #[test]
    fn pca_ratios_sum_to_one_and_reconstruct(rows in dense_rows(30, 4)) {
        let names: Vec<String> = (0..4).map(|j| format!("f{j}")).collect();
        let Ok(pca) = pca_analyze(&rows, &names, 0.95) else { return Ok(()) };
        prop_assert!((pca.explained_ratio.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(pca.explained_ratio.windows(2).all(|w| w[0] >= w[1] - 1e-12));
        let k = pca.components.len();
        for a in 0..k {
            for b in 0..k {
                let dot: f64 = pca.components[a].iter().zip(&pca.components[b]).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() <= 1e-9);
            }
        }
        let kept: Vec<usize> = pca.features.iter().map(|f| names.iter().position(|n| n == f).unwrap()).collect();
        for row in &rows {
            let sub: Vec<f64> = kept.iter().map(|&j| row[j]).collect();
            let z = pca.standardize(&sub);
            let back = pca.reconstruct(&pca.project(&z, k));
            for (a, b) in z.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn two_column_pca_matches_correlation(rows in dense_rows(40, 2)) {
        // Correlation matrix [[1, r], [r, 1]] has eigenvalues 1 +- |r|.
        let names = vec!["a".to_string(), "b".to_string()];
        let Ok(pca) = pca_analyze(&rows, &names, 0.95) else { return Ok(()) };
        prop_assume!(pca.features.len() == 2);
        let n = rows.len() as f64;
        let mean = |j: usize| rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let (ma, mb) = (mean(0), mean(1));
        let sab: f64 = rows.iter().map(|r| (r[0] - ma) * (r[1] - mb)).sum();
        let saa: f64 = rows.iter().map(|r| (r[0] - ma).powi(2)).sum();
        let sbb: f64 = rows.iter().map(|r| (r[1] - mb).powi(2)).sum();
        let r = sab / (saa * sbb).sqrt();
        prop_assert!((pca.explained_ratio[0] - (1.0 + r.abs()) / 2.0).abs() <= 1e-9);
    }

    #[test]
    fn unit_stride_windows_tile_the_frame(n in 1usize..80, length in 1usize..12, horizon in 0usize..3) {
        let frame = frame_of(vec![(0..n).map(|i| Some(i as f64)).collect()]);
        let spec = WindowSpec { length, stride: 1, horizon };
        let batch = make_windows(&frame, &["f0".to_string()], &spec).unwrap();
        prop_assert_eq!(batch.len(), spec.count(n));
        if batch.is_empty() {
            prop_assert!(n < length + horizon);
            return Ok(());
        }
        prop_assert_eq!(batch.index_map[0].start, 0);
        for w in batch.index_map.windows(2) {
            prop_assert_eq!(w[1].start, w[0].start + 1);
        }
        // First row of each window, then the tail of the last one.
        let mut covered: Vec<usize> = batch.index_map.iter().map(|r| r.start).collect();
        covered.extend(batch.index_map.last().unwrap().clone().skip(1));
        prop_assert_eq!(covered, (0..n - horizon).collect::<Vec<_>>());
        for (w, r) in batch.index_map.iter().enumerate() {
            for (t, row) in r.clone().enumerate() {
                prop_assert_eq!(batch.data[[w, t, 0]], row as f32);
            }
        }
    }

    #[test]
    fn flagged_count_falls_as_threshold_rises(errors in prop::collection::vec(0f64..100.0, 1..200), a in -10f64..110.0, b in -10f64..110.0) {
        let s = series(errors);
        let frame = frame_of(vec![vec![Some(0.0); s.errors.len()]]);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let at_lo = flag_anomalies(&s, lo, &frame);
        let at_hi = flag_anomalies(&s, hi, &frame);
        prop_assert!(at_hi.len() <= at_lo.len());
        prop_assert!(at_lo.iter().all(|e| e.error > e.threshold));
        prop_assert_eq!(flag_anomalies(&s, lo, &frame), at_lo);
    }

    #[test]
    fn flagged_count_non_increasing_in_k(errors in prop::collection::vec(0f64..100.0, 1..200)) {
        let s = series(errors);
        let frame = frame_of(vec![vec![Some(0.0); s.errors.len()]]);
        let counts: Vec<usize> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|&k| {
                let t = compute_threshold(&s.errors, ThresholdMethod::MeanKSigma { k }).unwrap();
                flag_anomalies(&s, t, &frame).len()
            })
            .collect();
        prop_assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{:?}", counts);
    }

    #[test]
    fn q_values_stay_bounded_and_updates_touch_one_cell(
        steps in prop::collection::vec((0usize..3, 0usize..3, any::<bool>()), 1..300),
        alpha in 0.01f64..1.0,
    ) {
        let hyper = QHyper { alpha, ..QHyper::default() };
        let mut table = QTable::new(&hyper);
        for (s, a, agree) in steps {
            let before = table.clone();
            let verdict = if agree { Verdict::Agree } else { Verdict::Disagree };
            apply_feedback(&mut table, Severity::ALL[s], Action::ALL[a], verdict, &hyper);
            let mut changed = 0;
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((-1.0..=1.0).contains(&table.q[i][j]));
                    if (i, j) != (s, a) {
                        prop_assert_eq!(table.q[i][j], before.q[i][j]);
                        prop_assert_eq!(table.visits[i][j], before.visits[i][j]);
                    } else if table.visits[i][j] != before.visits[i][j] {
                        changed += 1;
                    }
                }
            }
            prop_assert_eq!(changed, 1);
        }
    }

    #[test]
    fn greedy_choice_survives_affine_rescaling(row in prop::array::uniform3(-1f64..1.0), scale in 0.01f64..100.0, shift in -10f64..10.0) {
        // Rounding may merge values closer than this and change tie-breaking.
        prop_assume!((0..3).all(|i| (0..i).all(|j| (row[i] - row[j]).abs() > 1e-9)));
        let mut table = QTable::new(&QHyper { epsilon: 0.0, ..QHyper::default() });
        table.q[1] = row;
        let before = table.greedy(Severity::Medium);
        table.q[1] = row.map(|v| v * scale + shift);
        prop_assert_eq!(table.greedy(Severity::Medium), before);
    }
}

#[test]
fn duplicating_the_top_outlier_never_raises_its_score() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        rows.push(vec![4.0, -3.0]);
        let cfg = ForestConfig { seed, ..Default::default() };
        let base = iforest_scores(&fit_isolation_forest(&rows, &cfg).unwrap(), &rows);
        let top = (0..rows.len()).max_by(|&a, &b| base[a].total_cmp(&base[b])).unwrap();
        let mut dup = rows.clone();
        dup.push(rows[top].clone());
        let after = iforest_scores(&fit_isolation_forest(&dup, &cfg).unwrap(), &dup);
        assert!(after[top] <= base[top], "seed {seed}: {} -> {}", base[top], after[top]);
    }
}
