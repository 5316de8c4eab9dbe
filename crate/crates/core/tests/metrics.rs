use atm_core::harness::{
    compute_metrics, confusion_of, f_beta, read_results, write_results, Confusion, EpisodeResult, MetricsError,
    RateSet, EPISODES_FILE, METRICS_FILE, TIMINGS_FILE,
};
use proptest::prelude::*;

fn episode(seed: u64, truth: bool, predicted: bool) -> EpisodeResult {
    EpisodeResult {
        seed,
        discarded: false,
        truth_collision: truth,
        predicted_risky: Some(predicted),
        action_found: predicted.then_some(false),
        reaction_time: None,
        selected_target: None,
        final_person_collided: truth,
        detect_time: predicted.then_some(0.0),
        action_time: None,
        action_verified: None,
        failure: None,
    }
}

fn with_action(mut e: EpisodeResult, target: &str, saved: bool) -> EpisodeResult {
    e.action_found = Some(true);
    e.selected_target = Some(target.to_string());
    e.action_time = Some(0.1);
    e.action_verified = Some(true);
    e.reaction_time = Some(0.004);
    if saved {
        e.final_person_collided = false;
    }
    e
}

#[test]
fn reference_counts_give_reference_rates() {
    let c = Confusion {
        tp: 53,
        fp: 34,
        tn: 80,
        fn_: 0,
    };
    let r = RateSet::from_confusion(&c);
    let close = |a: f64, b: f64| (a - b).abs() < 5e-4;
    assert!(close(r.accuracy, 0.796), "{}", r.accuracy);
    assert!(close(r.precision, 0.609), "{}", r.precision);
    assert_eq!(r.recall, 1.0);
    assert!(close(r.f1, 0.757), "{}", r.f1);
    assert!(close(r.f2, 0.886), "{}", r.f2);
    assert!(close(r.fp_rate, 34.0 / 167.0));
    assert_eq!(r.fn_rate, 0.0);
}

#[test]
fn action_rate_is_over_predicted_episodes() {
    // 54 predicted risky, 46 of them with an action.
    let mut results: Vec<_> = (0..54).map(|i| episode(i, true, true)).collect();
    for r in results.iter_mut().take(46) {
        *r = with_action(r.clone(), "ball", true);
    }
    results.extend((54..80).map(|i| episode(i, false, false)));
    let m = compute_metrics(&results).unwrap();
    assert!((m.detected_and_action_rate - 46.0 / 54.0).abs() < 1e-12);
    assert!((m.detected_and_action_rate - 0.8518).abs() < 1e-4);
    assert!((m.intervention_success_rate - 46.0 / 54.0).abs() < 1e-12);
    assert_eq!(m.verified_rate, 1.0);
    assert_eq!(m.reaction.count, 46);
}

#[test]
fn discarded_and_failed_episodes_are_not_counted() {
    let mut discarded = episode(1, true, false);
    discarded.discarded = true;
    discarded.predicted_risky = None;
    let mut failed = episode(2, false, false);
    failed.failure = Some("no path".into());
    let results = vec![discarded, failed, episode(3, true, true), episode(4, false, false)];
    let m = compute_metrics(&results).unwrap();
    assert_eq!((m.total, m.discarded, m.failed, m.valid), (4, 1, 1, 2));
    assert_eq!(m.confusion, Confusion { tp: 1, fp: 0, tn: 1, fn_: 0 });
    assert_eq!(compute_metrics(&results[..2]), Err(MetricsError::NoValidEpisodes));
}

#[test]
fn f_beta_edge_cases() {
    assert_eq!(f_beta(0.0, 0.0, 1.0), 0.0);
    assert_eq!(f_beta(1.0, 1.0, 2.0), 1.0);
    assert!((f_beta(0.5, 1.0, 1.0) - 2.0 / 3.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn rates_satisfy_their_identities(tp in 0u64..200, fp in 0u64..200, tn in 0u64..200, fn_ in 0u64..200) {
        prop_assume!(tp + fp + tn + fn_ > 0);
        let c = Confusion { tp, fp, tn, fn_ };
        let r = RateSet::from_confusion(&c);
        let eps = 1e-12;
        prop_assert!((r.accuracy + r.fp_rate + r.fn_rate - 1.0).abs() < eps);
        for v in [r.accuracy, r.fp_rate, r.fn_rate, r.precision, r.recall, r.f1, r.f2] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        // F1 is the harmonic mean and sits between precision and recall.
        let (lo, hi) = (r.precision.min(r.recall), r.precision.max(r.recall));
        if tp > 0 {
            prop_assert!((1.0 / r.f1 - 0.5 * (1.0 / r.precision + 1.0 / r.recall)).abs() < 1e-9);
            prop_assert!(r.f1 >= lo - eps && r.f1 <= hi + eps);
            prop_assert!(r.f2 >= lo - eps && r.f2 <= hi + eps);
            // F2 weights recall more heavily than F1 does.
            prop_assert_eq!(r.f2 >= r.f1 - eps, r.recall >= r.precision - eps);
        } else {
            prop_assert_eq!(r.f1, 0.0);
            prop_assert_eq!(r.f2, 0.0);
        }
    }

    #[test]
    fn confusion_counts_every_valid_episode(flags in prop::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
        let results: Vec<_> = flags.iter().enumerate().map(|(i, &(t, p))| episode(i as u64, t, p)).collect();
        let c = confusion_of(&results);
        prop_assert_eq!(c.total() as usize, results.len());
        prop_assert_eq!((c.tp + c.fn_) as usize, flags.iter().filter(|f| f.0).count());
        prop_assert_eq!((c.tp + c.fp) as usize, flags.iter().filter(|f| f.1).count());
    }
}

#[test]
fn results_survive_a_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let results = vec![
        with_action(episode(0x9E37_79B9_7F4A_7C15, true, true), "ball", true),
        EpisodeResult {
            detect_time: Some(0.1 + 0.2),
            action_time: Some(f64::MIN_POSITIVE),
            ..episode(7, false, true)
        },
        episode(8, false, false),
        EpisodeResult {
            discarded: true,
            predicted_risky: None,
            ..episode(9, false, false)
        },
    ];
    let report = compute_metrics(&results).unwrap();
    write_results(dir.path(), &results, Some(&report)).unwrap();
    for f in [EPISODES_FILE, TIMINGS_FILE, METRICS_FILE] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let back = read_results(dir.path()).unwrap();
    assert_eq!(back, results);
    assert_eq!(compute_metrics(&back).unwrap(), report);
    assert_eq!(read_results(&dir.path().join(EPISODES_FILE)).unwrap(), results);

    // Reaction times live only in the timings file.
    let csv = std::fs::read_to_string(dir.path().join(EPISODES_FILE)).unwrap();
    assert!(!csv.contains("reaction"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap()).unwrap();
    assert_eq!(json["confusion"]["tp"], 1);
    assert!(json.get("reaction").is_none());
}

#[test]
fn mismatched_timings_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_results(dir.path(), &[episode(1, false, false)], None).unwrap();
    std::fs::write(dir.path().join(TIMINGS_FILE), "seed,reaction_time\n2,\n").unwrap();
    assert!(read_results(dir.path()).is_err());
}
