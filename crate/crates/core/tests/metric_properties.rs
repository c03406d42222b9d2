use proptest::prelude::*;

use struggle_core::metrics::{
    anticipation_cap, event_f1, extract_events, frame_ap, frame_cap, pr_curve, EventSet, ScoredFrames,
    DEFAULT_TAUS,
};
use struggle_core::stream::{PredictionFrame, PredictionTrack};

fn two_class(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2..max)
        .prop_flat_map(|n| (prop::collection::vec(0u8..20, n), prop::collection::vec(0u8..2, n)))
        .prop_filter("needs both classes", |(_, l)| l.contains(&0) && l.contains(&1))
        .prop_map(|(s, l)| (s.into_iter().map(|v| f64::from(v) / 20.0).collect(), l))
}

fn track(id: &str, det: &[f64], ant: &[Vec<f64>]) -> PredictionTrack {
    PredictionTrack {
        video_id: id.into(),
        frames: det
            .iter()
            .zip(ant)
            .enumerate()
            .map(|(t, (&d, a))| PredictionFrame {
                t,
                detection_prob: d,
                anticipation_probs: a.clone(),
                latency_ms: 0.0,
            })
            .collect(),
    }
}

proptest! {
    #[test]
    fn cap_is_a_probability((scores, labels) in two_class(80)) {
        let c = frame_cap(&ScoredFrames::new(scores, labels).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
    }

    #[test]
    fn cap_depends_only_on_ranking((scores, labels) in two_class(80)) {
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        let a = frame_cap(&ScoredFrames::new(scores, labels.clone()).unwrap()).unwrap();
        let b = frame_cap(&ScoredFrames::new(warped, labels).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn balanced_cap_equals_ap(scores in prop::collection::vec(0.0f64..1.0, 1..40), seed in any::<u64>()) {
        let n = scores.len();
        let mut labels: Vec<u8> = (0..2 * n).map(|i| u8::from(i < n)).collect();
        // deterministic shuffle
        let mut s = seed;
        for i in (1..labels.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            labels.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut all = scores.clone();
        all.extend(scores.iter().map(|x| x * 0.5));
        let f = ScoredFrames::new(all, labels).unwrap();
        prop_assert!((frame_cap(&f).unwrap() - frame_ap(&f).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn perfect_ranking_scores_one(pos in 1usize..30, neg in 1usize..30) {
        let labels: Vec<u8> = (0..pos + neg).map(|i| u8::from(i < pos)).collect();
        let scores: Vec<f64> = (0..pos + neg).map(|i| 1.0 - i as f64 / 100.0).collect();
        let f = ScoredFrames::new(scores, labels).unwrap();
        prop_assert_eq!(frame_cap(&f).unwrap(), 1.0);
        prop_assert!((pr_curve(&f).unwrap().auc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn events_round_trip(binary in prop::collection::vec(0u8..2, 0..120)) {
        let events = extract_events(&binary);
        prop_assert_eq!(events.to_labels(binary.len()), binary.clone());
        prop_assert_eq!(extract_events(&events.to_labels(binary.len())), events);
    }

    #[test]
    fn f1_bounds(a in prop::collection::vec(0u8..2, 1..80), b in prop::collection::vec(0u8..2, 1..80)) {
        let (pa, pb) = (extract_events(&a), extract_events(&b));
        let f = event_f1(&pa, &pb, &DEFAULT_TAUS);
        prop_assert!((0.0..=1.0).contains(&f.mean));
        prop_assert!(f.per_tau.windows(2).all(|w| w[0].1 >= w[1].1));
        prop_assert_eq!(event_f1(&pa, &pa, &DEFAULT_TAUS).mean, 1.0);
    }

    #[test]
    fn delta_zero_anticipation_is_detection((scores, labels) in two_class(60)) {
        let t = track("v", &scores, &vec![Vec::new(); scores.len()]);
        let ant = anticipation_cap(&[(&t, &labels)], 0).unwrap();
        let det = frame_cap(&ScoredFrames::new(scores, labels).unwrap()).unwrap();
        prop_assert_eq!(ant.mean, Some(det));
    }
}

/// Per-offset values against a direct realignment of scores and labels.
#[test]
fn anticipation_matches_realignment() {
    let n = 40;
    let delta = 3;
    let labels: Vec<u8> = (0..n).map(|i| u8::from((i / 5) % 2 == 1)).collect();
    let det: Vec<f64> = (0..n).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
    let ant: Vec<Vec<f64>> = (0..n)
        .map(|i| (1..=delta).map(|j| ((i * 3 + j * 5) % 13) as f64 / 13.0).collect())
        .collect();
    let t = track("v", &det, &ant);
    let got = anticipation_cap(&[(&t, &labels)], delta).unwrap();
    for j in 1..=delta {
        let scores: Vec<f64> = (0..n - j).map(|i| ant[i][j - 1]).collect();
        let target: Vec<u8> = (0..n - j).map(|i| labels[i + j]).collect();
        let want = frame_cap(&ScoredFrames::new(scores, target).unwrap()).unwrap();
        assert!((got.per_offset[j - 1].unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn empty_event_sets() {
    let empty = EventSet::default();
    assert_eq!(event_f1(&empty, &empty, &DEFAULT_TAUS).mean, 1.0);
    assert!(extract_events(&[0, 0, 0]).is_empty());
}
