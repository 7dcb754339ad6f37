use std::collections::BTreeMap;

use proptest::prelude::*;
use tracewatch::detector::{alpha, classify, exceeds, Classification, DetectorConfig, NormalModel};
use tracewatch::event::{format_event, parse_event, SensorEvent, SensorId, SensorValue};
use tracewatch::fingerprint::{
    extract_fingerprint, fingerprint_class_counts, ClassKey, FingerprintConfig, RequestId,
    RequestTrace,
};
use tracewatch::sensor::{ContinuousAggregation, WindowOp};

fn sid_strategy() -> impl Strategy<Value = SensorId> {
    (
        prop::collection::vec("[a-z][a-z0-9_]{0,8}", 1..6),
        "[A-Z][A-Za-z0-9_$]{0,12}",
        "[a-z][A-Za-z0-9_]{0,12}",
        any::<u32>(),
        0u32..3,
        any::<u32>(),
    )
        .prop_map(|(pkg, class, method, id, vid, vvid)| {
            SensorId::new(pkg.join("."), class, method, id, vid, vvid).unwrap()
        })
}

fn event_strategy() -> impl Strategy<Value = SensorEvent> {
    (any::<u64>(), any::<u32>(), sid_strategy())
        .prop_flat_map(|(ts, count, sid)| {
            let value = match sid.vid() {
                0 => prop_oneof![
                    (0u64..100_000).prop_map(|v| SensorValue::Numeric64(v as f64)),
                    (prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO)
                        .prop_map(SensorValue::Numeric64),
                ]
                .boxed(),
                1 => any::<u32>().prop_map(SensorValue::State32).boxed(),
                _ => "[^\n\r]{0,40}".prop_map(SensorValue::Text).boxed(),
            };
            (Just(ts), Just(count), Just(sid), value)
        })
        .prop_map(|(ts, count, sid, value)| SensorEvent::new(ts, count, sid, value))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn parse_inverts_format(e in event_strategy()) {
        let line = format_event(&e);
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(parse_event(&line).unwrap(), e);
    }

    /// Integer-grid sensitivities keep `alpha * p` exact in f64, so the
    /// direct floating-point evaluation is a valid oracle there.
    #[test]
    fn classify_matches_direct_inequality(
        alpha_ in 0u64..(1 << 20),
        m in 1u64..16_384,
        count in 0u64..(1 << 24),
        tie in any::<bool>(),
    ) {
        let p = m as f64 / 1024.0;
        let count = if tie && (alpha_ * m) % 1024 == 0 { alpha_ * m / 1024 } else { count };
        let expected = count as f64 >= alpha_ as f64 * p;
        let got = classify(count, alpha_, p) == Classification::Attack;
        prop_assert_eq!(got, expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn sid_round_trips_through_text(s in sid_strategy()) {
        prop_assert_eq!(s.to_string().parse::<SensorId>().unwrap(), s);
    }

    #[test]
    fn canonical_lines_survive_parse_then_format(e in event_strategy()) {
        let line = format_event(&e);
        prop_assert_eq!(format_event(&parse_event(&line).unwrap()), line);
    }

    #[test]
    fn alpha_matches_sort_and_index(
        history in prop::collection::vec(0u64..1000, 1..=200),
        permille in 1u64..1000,
    ) {
        // rank = ceil(permille * n / 1000) in integers
        let q = permille as f64 / 1000.0;
        let n = history.len() as u64;
        let rank = (permille * n).div_ceil(1000).max(1);
        let mut sorted = history.clone();
        sorted.sort_unstable();
        prop_assert_eq!(alpha(&history, q).unwrap(), sorted[rank as usize - 1]);
    }

    #[test]
    fn window_quantile_matches_sort_and_index(
        values in prop::collection::vec(0u32..500, 1..60),
        permille in 1u64..1000,
    ) {
        let input: SensorId = "app.Svc.call.0.0.0".parse().unwrap();
        let output: SensorId = "app.Svc.callQ.0.0.0".parse().unwrap();
        let q = permille as f64 / 1000.0;
        let agg = ContinuousAggregation::new(input.clone(), 1_000, WindowOp::Quantile(q), output).unwrap();
        let stream: Vec<_> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| SensorEvent::new(i as u64, 0, input.clone(), SensorValue::Numeric64(v as f64)))
            .collect();
        let out = agg.process(&stream).unwrap();
        prop_assert_eq!(out.len(), 1);
        let mut sorted = values.clone();
        sorted.sort_unstable();
        let rank = (permille * values.len() as u64).div_ceil(1000).max(1) as usize;
        prop_assert_eq!(out[0].value.clone(), SensorValue::Numeric64(sorted[rank - 1] as f64));
    }

    #[test]
    fn window_mean_of_constant_is_constant(c in 1u32..10_000, n in 1usize..300, width in 1u64..50) {
        let input: SensorId = "app.Svc.call.0.0.0".parse().unwrap();
        let agg = ContinuousAggregation::new(input.clone(), width, WindowOp::Mean, "app.Svc.avg.0.0.0".parse().unwrap()).unwrap();
        let stream: Vec<_> = (0..n)
            .map(|i| SensorEvent::new(i as u64, 0, input.clone(), SensorValue::Numeric64(c as f64)))
            .collect();
        for e in agg.process(&stream).unwrap() {
            prop_assert_eq!(e.value, SensorValue::Numeric64(c as f64));
        }
    }

    #[test]
    fn exceeds_is_monotone_in_sensitivity(count in 0u64..10_000, alpha_ in 0u64..10_000, p in 0.01f64..100.0, f in 1.0f64..10.0) {
        if !exceeds(count, alpha_, p) {
            prop_assert!(!exceeds(count, alpha_, p * f));
        }
    }

    #[test]
    fn noise_within_bucket_keeps_class(
        buckets in prop::collection::vec(1i64..300, 1..12),
        offsets in prop::collection::vec((0u8..3, 0u8..3), 12),
    ) {
        let trace = |pick: &dyn Fn(usize) -> u8| RequestTrace {
            request_id: RequestId::Marker(0),
            events: buckets
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let sid: SensorId = format!("app.C{i}.m.0.0.0").parse().unwrap();
                    SensorEvent::new(0, i as u32, sid, SensorValue::Numeric64((b * 3 + pick(i) as i64) as f64))
                })
                .collect(),
        };
        let cfg = FingerprintConfig::default();
        let a = extract_fingerprint(&trace(&|i| offsets[i].0), &cfg).unwrap();
        let b = extract_fingerprint(&trace(&|i| offsets[i].1), &cfg).unwrap();
        prop_assert_eq!(a.class_key, b.class_key);
        prop_assert_eq!(a.chain, b.chain);
    }

    #[test]
    fn class_counts_ignore_input_order(
        items in prop::collection::vec((0u64..50_000, 0usize..4), 0..80),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let cfg = FingerprintConfig::default();
        let fps: Vec<_> = items
            .iter()
            .map(|&(ts, class)| {
                let sid: SensorId = format!("app.C{class}.m.0.0.0").parse().unwrap();
                let t = RequestTrace {
                    request_id: RequestId::Gap(0),
                    events: vec![SensorEvent::new(ts, 0, sid, SensorValue::Numeric64(9.0))],
                };
                extract_fingerprint(&t, &cfg).unwrap()
            })
            .collect();
        let counts = fingerprint_class_counts(&fps, 10_000, 0);
        let mut shuffled = fps.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&fingerprint_class_counts(&shuffled, 10_000, 0), &counts);

        // counts partition the fingerprints of every period
        let mut per_period: BTreeMap<i64, u64> = BTreeMap::new();
        for ((p, _), c) in &counts {
            *per_period.entry(*p).or_default() += c;
        }
        for (p, total) in per_period {
            let n = fps.iter().filter(|f| (f.first_ts / 10_000) as i64 == p).count() as u64;
            prop_assert_eq!(total, n);
        }
    }

    /// Random count sequences: attack verdicts leave the class history
    /// untouched, and every verdict agrees with `count >= alpha * p`.
    #[test]
    fn attack_counts_never_enter_history(
        periods in prop::collection::vec(prop::collection::vec((0u64..4, 0u64..60), 0..4), 1..60),
        n in 1usize..10,
    ) {
        let cfg = DetectorConfig { history_periods: n, warmup_periods: 1, ..Default::default() };
        let mut model = NormalModel::new(cfg).unwrap();
        for (i, period) in periods.iter().enumerate() {
            let counts: BTreeMap<ClassKey, u64> = period.iter().map(|&(k, c)| (ClassKey(k), c)).collect();
            let before: BTreeMap<ClassKey, Option<Vec<u64>>> =
                (0..4).map(|k| (ClassKey(k), model.class_history(ClassKey(k)))).collect();
            for v in model.step(i as i64, &counts) {
                let tracewatch::detector::Subject::Class(k) = v.subject else { unreachable!() };
                if let (Some(a), Some(t)) = (v.alpha, v.threshold) {
                    prop_assert_eq!(v.attack, exceeds(v.count, a, cfg.sensitivity));
                    prop_assert_eq!(t, a as f64 * cfg.sensitivity);
                }
                if v.attack {
                    prop_assert_eq!(model.class_history(k), before[&k].clone());
                }
                if let Some(h) = model.class_history(k) {
                    prop_assert!(h.len() <= n);
                }
            }
        }
    }

    #[test]
    fn raising_sensitivity_never_adds_an_alarm_for_fixed_history(
        history in prop::collection::vec(1u64..100, 1..30),
        count in 0u64..400,
        p in 0.1f64..5.0,
        f in 1.0f64..4.0,
    ) {
        // every history period falls in warm-up, so the history is the same for any p
        let cfg = |sensitivity| DetectorConfig {
            history_periods: 30,
            warmup_periods: history.len(),
            sensitivity,
            ..Default::default()
        };
        let verdict = |sensitivity: f64| {
            let mut m = NormalModel::new(cfg(sensitivity)).unwrap();
            for (i, &h) in history.iter().enumerate() {
                m.step(i as i64, &[(ClassKey(1), h)].into_iter().collect());
            }
            m.step(history.len() as i64, &[(ClassKey(1), count)].into_iter().collect())[0].attack
        };
        if !verdict(p) {
            prop_assert!(!verdict(p * f));
        }
    }
}

#[test]
fn alpha_oracle_examples() {
    assert_eq!(alpha(&[2, 3, 4, 5, 6], 0.95).unwrap(), 6);
    assert_eq!(alpha(&[7], 0.3).unwrap(), 7);
    assert_eq!(alpha(&[5, 5, 5, 5], 0.5).unwrap(), 5);
}
