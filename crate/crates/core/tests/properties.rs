use panelguard::criticality::{quantile, CriticalRule};
use panelguard::loss::{eval_signed, eval_unsigned, LossParams};
use panelguard::nominal::{compare_sets, NominalPair};
use panelguard::panel::{load_panel, rescale_times, ColumnBindings, PreprocessPolicy, TimeSource, ZeroPolicy};
use panelguard::score::{evaluate, quantile_breaks, score_panel, ScoreOptions};
use proptest::prelude::*;

fn csv_from(rows: &[(f64, f64)]) -> String {
    let mut s = String::from("id,base,value\n");
    for (i, (b, v)) in rows.iter().enumerate() {
        s.push_str(&format!("u{i},{b},{v}\n"));
    }
    s
}

fn cell() -> impl Strategy<Value = f64> {
    prop_oneof![1 => Just(0.0), 4 => 1.0f64..1e6]
}

proptest! {
    #[test]
    fn rescale_is_idempotent(xs in prop::collection::vec(0.001f64..1e4, 1..50)) {
        let once = rescale_times(&xs).unwrap();
        let twice = rescale_times(&once.values).unwrap();
        prop_assert_eq!(&once.values, &twice.values);
        prop_assert_eq!(twice.max, 1.0);
        prop_assert!(once.values.iter().all(|&t| t > 0.0 && t <= 1.0));
    }

    #[test]
    fn omit_keeps_survivors_untouched(rows in prop::collection::vec((cell(), cell()), 1..40)) {
        let input = csv_from(&rows);
        let policy = PreprocessPolicy::new(ZeroPolicy::Omit).unwrap();
        match load_panel(input.as_bytes(), &ColumnBindings::default(), &policy) {
            Ok(panel) => {
                let expected: Vec<(String, f64, f64)> = rows
                    .iter()
                    .enumerate()
                    .filter(|(_, (b, v))| *b != 0.0 && *v != 0.0)
                    .map(|(i, (b, v))| (format!("u{i}"), *b, *v))
                    .collect();
                let got: Vec<(String, f64, f64)> =
                    panel.records.iter().map(|r| (r.id.clone(), r.base, r.observations[0].value)).collect();
                prop_assert_eq!(got, expected);
                prop_assert_eq!(panel.report.omitted, rows.len() - panel.records.len());
            }
            Err(_) => prop_assert!(rows.iter().all(|(b, v)| *b == 0.0 || *v == 0.0)),
        }
    }

    #[test]
    fn recode_changes_only_zeroes(rows in prop::collection::vec((cell(), cell()), 1..40), fill in 0.01f64..10.0) {
        let input = csv_from(&rows);
        let policy = PreprocessPolicy::new(ZeroPolicy::Recode(fill)).unwrap();
        let panel = load_panel(input.as_bytes(), &ColumnBindings::default(), &policy).unwrap();
        prop_assert_eq!(panel.records.len(), rows.len());
        for (r, (b, v)) in panel.records.iter().zip(&rows) {
            prop_assert_eq!(r.base, if *b == 0.0 { fill } else { *b });
            prop_assert_eq!(r.observations[0].value, if *v == 0.0 { fill } else { *v });
        }
    }

    #[test]
    fn signed_and_unsigned_agree(f in 0.01f64..1e6, b in 0.01f64..1e6, q in -2.0f64..0.5) {
        let l = eval_unsigned(f, b, LossParams::with_q(q).unwrap()).unwrap();
        let s = eval_signed(f, b, q).unwrap();
        prop_assert!((s.abs() - l).abs() <= 1e-12 * l.max(f64::MIN_POSITIVE));
        prop_assert_eq!(s > 0.0, f > b);
        prop_assert_eq!(s < 0.0, f < b);
        let (el, es) = evaluate(f, b, None, LossParams::with_q(q).unwrap()).unwrap();
        prop_assert_eq!(el, l);
        prop_assert_eq!(es, s);
    }

    #[test]
    fn general_p_keeps_sign(f in 0.01f64..1e6, b in 0.01f64..1e6, p in 0.2f64..3.0, q in -2.0f64..0.5) {
        let (l, s) = evaluate(f, b, None, LossParams::new(p, q).unwrap()).unwrap();
        prop_assert_eq!(s.abs(), l);
        prop_assert_eq!(s > 0.0, f > b);
    }

    #[test]
    fn compare_matches_direct_evaluation(
        rows in prop::collection::vec((1.0f64..1e6, 1.0f64..1e6), 1..40),
        q in -1.5f64..0.0,
    ) {
        let pairs: Vec<NominalPair> = rows
            .iter()
            .enumerate()
            .map(|(i, &(b, f))| NominalPair { id: format!("p{i:03}"), b_value: b, f_value: f })
            .collect();
        let cmp = compare_sets(&pairs, q).unwrap();
        let params = LossParams::with_q(q).unwrap();
        for r in &cmp.rows {
            prop_assert_eq!(r.f_vs_b.loss, eval_unsigned(r.f_value, r.b_value, params).unwrap());
            prop_assert_eq!(r.b_vs_f.loss, eval_unsigned(r.b_value, r.f_value, params).unwrap());
            prop_assert_eq!(r.f_vs_b.signed_loss, eval_signed(r.f_value, r.b_value, q).unwrap());
        }
        let mut ranks: Vec<usize> = cmp.rows.iter().map(|r| r.f_vs_b.rank).collect();
        ranks.sort();
        prop_assert_eq!(ranks, (1..=pairs.len()).collect::<Vec<_>>());
    }

    #[test]
    fn quartile_breaks_follow_order_statistics(xs in prop::collection::vec(0.0f64..1e3, 2..200)) {
        let b = quantile_breaks(&xs, 4).unwrap();
        let mut s = xs.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        for (j, &edge) in b.edges.iter().enumerate() {
            let h = (n - 1) as f64 * (j + 1) as f64 / 4.0;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let expect = s[lo] + (h - lo as f64) * (s[hi] - s[lo]);
            prop_assert!((edge - expect).abs() <= 1e-9 * expect.abs().max(1.0));
        }
        for (&x, &c) in xs.iter().zip(&b.classes) {
            prop_assert!((1..=4).contains(&c));
            let below = b.edges.iter().filter(|&&e| x > e).count();
            prop_assert_eq!(c, 1 + below);
        }
    }
}

#[test]
fn quartile_edges_on_known_data() {
    let xs: Vec<f64> = (1..=9).map(f64::from).collect();
    let b = quantile_breaks(&xs, 4).unwrap();
    assert_eq!(b.edges, vec![3.0, 5.0, 7.0]);
    assert_eq!(b.classes, vec![1, 1, 1, 2, 2, 3, 3, 4, 4]);
    assert!(!b.degenerate);
    let flat = quantile_breaks(&[2.0; 5], 4).unwrap();
    assert!(flat.degenerate);
    assert!(flat.classes.iter().all(|&c| c == 1));
}

#[test]
fn quantile_rule_flags_expected_share() {
    let mut s = String::from("id,base,value\n");
    for i in 0..1000 {
        s.push_str(&format!("u{i:04},{},{}\n", 1000 + i, 1000 + i * 7 % 997));
    }
    let panel = load_panel(s.as_bytes(), &ColumnBindings::default(), &PreprocessPolicy::default()).unwrap();
    let opts = ScoreOptions {
        rule: Some(CriticalRule::Quantile { alpha: 0.99 }),
        ..Default::default()
    };
    let scoring = score_panel(&panel, &opts).unwrap();
    let losses: Vec<f64> = scoring.records.iter().map(|r| r.loss).collect();
    let c = quantile(&losses, 0.99).unwrap();
    assert_eq!(scoring.flagged_count(), losses.iter().filter(|&&l| l > c).count());
    assert!((9..=11).contains(&scoring.flagged_count()));
}

#[test]
fn labelled_time_scales_to_unit_interval() {
    let input = "id,base,value,year\na,100,110,2011\na,100,130,2013\nb,50,40,2011\nb,50,60,2012\n";
    let bindings = ColumnBindings {
        time: TimeSource::Labels {
            column: "year".into(),
            spacing: 1.0,
        },
        ..Default::default()
    };
    let panel = load_panel(input.as_bytes(), &bindings, &PreprocessPolicy::default()).unwrap();
    let ts: Vec<Vec<f64>> = panel
        .records
        .iter()
        .map(|r| r.observations.iter().map(|o| o.t.unwrap()).collect())
        .collect();
    // labels are ordered by first appearance in the file, not sorted
    assert_eq!(ts, vec![vec![1.0 / 3.0, 2.0 / 3.0], vec![1.0 / 3.0, 1.0]]);

    let opts = ScoreOptions {
        time_invariant: true,
        ..Default::default()
    };
    let scoring = score_panel(&panel, &opts).unwrap();
    let latest = scoring
        .records
        .iter()
        .find(|r| r.id == "b" && r.t == Some(1.0))
        .unwrap();
    assert_eq!(latest.loss, eval_unsigned(60.0, 50.0, LossParams::default()).unwrap());
}

#[test]
fn per_slice_thresholds_are_independent() {
    let input = "id,base,value,year\na,100,200,1\nb,100,101,1\na,100,101,2\nb,100,200,2\nc,100,150,1\nc,100,150,2\n";
    let bindings = ColumnBindings {
        time: TimeSource::Elapsed("year".into()),
        ..Default::default()
    };
    let panel = load_panel(input.as_bytes(), &bindings, &PreprocessPolicy::default()).unwrap();
    let rule = CriticalRule::Quantile { alpha: 0.5 };
    let pooled = score_panel(
        &panel,
        &ScoreOptions {
            rule: Some(rule),
            ..Default::default()
        },
    )
    .unwrap();
    let sliced = score_panel(
        &panel,
        &ScoreOptions {
            rule: Some(rule),
            per_slice: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(pooled.flagged_count(), 2);
    assert_eq!(sliced.flagged_count(), 2);
    let by_slice: Vec<(String, Option<f64>)> = sliced
        .records
        .iter()
        .filter(|r| r.flagged == Some(true))
        .map(|r| (r.id.clone(), r.t))
        .collect();
    assert!(by_slice.contains(&("a".to_string(), Some(0.5))));
    assert!(by_slice.contains(&("b".to_string(), Some(1.0))));
}
