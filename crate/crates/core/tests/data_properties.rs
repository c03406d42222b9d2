use std::collections::HashSet;
use std::sync::OnceLock;

use proptest::prelude::*;

use struggle_core::data::{
    build_split, decode_feature_stream, encode_feature_stream, intervals_to_frame_labels, Activity,
    FeatureStream, SplitMode, SplitSpec, StruggleIntervals, VideoRecord,
};
use struggle_core::model::{decode_checkpoint, encode_checkpoint, Model, ModelConfig, Variant};
use struggle_core::nn::Matrix;
use struggle_core::synth::{generate_corpus_in_memory, CorpusConfig};

fn manifest() -> &'static [VideoRecord] {
    static M: OnceLock<Vec<VideoRecord>> = OnceLock::new();
    M.get_or_init(|| {
        let cfg = CorpusConfig {
            video_duration: 40.0,
            participants: 4,
            ..CorpusConfig::default()
        };
        generate_corpus_in_memory(&cfg).unwrap().records()
    })
}

fn activity() -> impl Strategy<Value = Activity> {
    prop::sample::select(Activity::ALL.to_vec())
}

fn attempts() -> impl Strategy<Value = Vec<u8>> {
    prop::sample::subsequence(vec![1u8, 2, 3, 4, 5], 1..=5)
}

fn mode() -> impl Strategy<Value = SplitMode> {
    prop_oneof![
        activity().prop_map(|activity| SplitMode::WithinActivity { activity }),
        Just(SplitMode::CombinedAll),
        activity().prop_map(|activity| SplitMode::LeaveOneActivityOut { activity }),
        (activity(), 1u8..=2).prop_map(|(activity, task_id)| SplitMode::LeaveOneTaskOut { activity, task_id }),
        (prop::option::of(activity()), attempts(), attempts()).prop_map(|(activity, train_attempts, eval_attempts)| {
            SplitMode::AttemptFilter {
                activity,
                train_attempts,
                eval_attempts,
            }
        }),
        (activity(), activity()).prop_map(|(train, eval)| SplitMode::CrossActivityZeroShot { train, eval }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn splits_are_video_disjoint(mode in mode(), disjoint in any::<bool>()) {
        let split = build_split(manifest(), &SplitSpec::new(mode.clone(), disjoint)).unwrap();
        let train: HashSet<String> = split.train_ids().into_iter().collect();
        prop_assert!(split.val_ids().iter().all(|id| !train.contains(id)));
        prop_assert!(!split.train.is_empty() && !split.val.is_empty());
        if disjoint {
            let train_people: HashSet<&str> = split.train.iter().map(|r| r.participant_id.as_str()).collect();
            prop_assert!(split.val.iter().all(|r| !train_people.contains(r.participant_id.as_str())));
        }
        match mode {
            SplitMode::LeaveOneActivityOut { activity } => {
                prop_assert!(split.train.iter().all(|r| r.activity != activity));
                prop_assert!(split.val.iter().all(|r| r.activity == activity));
            }
            SplitMode::AttemptFilter { train_attempts, eval_attempts, .. } => {
                prop_assert!(split.train.iter().all(|r| train_attempts.contains(&r.attempt)));
                prop_assert!(split.val.iter().all(|r| eval_attempts.contains(&r.attempt)));
            }
            _ => {}
        }
    }

    #[test]
    fn feature_stream_round_trip(n in 1usize..20, d_slow in 1usize..6, d_fast in 0usize..4, seed in any::<u32>()) {
        let d = d_slow + d_fast;
        let data: Vec<f64> = (0..n * d).map(|i| f64::from((i as u32).wrapping_mul(seed) % 1000) / 7.0 - 50.0).collect();
        let stream = FeatureStream::new("v", Matrix::from_vec(n, d, data).unwrap(), 3.125, d_slow, d_fast).unwrap();
        let bytes = encode_feature_stream(&stream).unwrap();
        let back: FeatureStream<f64> = decode_feature_stream("v", &bytes).unwrap();
        prop_assert_eq!(back.frames.rows(), n);
        for (a, b) in back.frames.as_slice().iter().zip(stream.frames.as_slice()) {
            prop_assert_eq!(*a, (*b as f32) as f64);
        }
        prop_assert_eq!(encode_feature_stream(&back).unwrap(), bytes);
    }

    #[test]
    fn labels_cover_rounded_intervals(start in 0.0f64..50.0, len in 0.0f64..20.0, fps in 1.0f64..10.0) {
        let n = 80 * 10;
        let iv = StruggleIntervals::new("v", vec![(start, start + len)]).unwrap();
        let conv = intervals_to_frame_labels(&iv, fps, n).unwrap();
        let first = (start * fps).round() as usize;
        let last = ((start + len) * fps).round() as usize;
        let ones: Vec<usize> = conv.track.labels.iter().enumerate().filter(|(_, &l)| l == 1).map(|(i, _)| i).collect();
        prop_assert_eq!(ones.first().copied(), Some(first));
        prop_assert_eq!(ones.last().copied(), Some(last));
        prop_assert_eq!(ones.len(), last - first + 1);
    }
}

#[test]
fn checkpoint_round_trip() {
    for v in [Variant::Lstr, Variant::Cmert] {
        let model = Model::<f64>::new(ModelConfig::desk(v), 9).unwrap();
        let bytes = encode_checkpoint(&model).unwrap();
        let back: Model<f64> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.config(), model.config());
        for (a, b) in back.params().iter().zip(model.params().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        let single: Model<f32> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(single.params().num_scalars(), model.params().num_scalars());
        assert!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 3]).is_err());
    }
}
