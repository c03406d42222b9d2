use super::{FrameLabelTrack, StruggleIntervals};
use crate::error::{Error, Result};

/// Frame index of a time in seconds: `round(t · fps)`, halves away from zero.
#[inline]
pub fn time_to_frame(t: f64, fps: f64) -> i64 {
    (t * fps).round() as i64
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelConversion {
    pub track: FrameLabelTrack,
    /// Episodes whose end was clamped to the last frame.
    pub warnings: Vec<String>,
}

/// Frame `k` is positive iff `round(s·fps) <= k <= round(e·fps)` for some
/// episode (closed interval), with indices clamped to `[0, n-1]`.
pub fn intervals_to_frame_labels(
    intervals: &StruggleIntervals,
    feature_fps: f64,
    n: usize,
) -> Result<LabelConversion> {
    if n == 0 {
        return Err(Error::Data(format!(
            "{}: cannot label an empty stream",
            intervals.video_id
        )));
    }
    if !(feature_fps > 0.0) {
        return Err(Error::Data("feature fps must be positive".into()));
    }
    let last = n as i64 - 1;
    let mut labels = vec![0u8; n];
    let mut warnings = Vec::new();
    for &(s, e) in &intervals.episodes {
        let first = time_to_frame(s, feature_fps);
        let end = time_to_frame(e, feature_fps);
        if first > last {
            warnings.push(format!(
                "{}: episode ({s}, {e}) starts after the last frame; dropped",
                intervals.video_id
            ));
            continue;
        }
        if end > last {
            warnings.push(format!(
                "{}: episode ({s}, {e}) clamped to frame {last}",
                intervals.video_id
            ));
        }
        for l in &mut labels[first.max(0) as usize..=end.min(last) as usize] {
            *l = 1;
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(LabelConversion {
        track: FrameLabelTrack {
            video_id: intervals.video_id.clone(),
            labels,
        },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(eps: Vec<(f64, f64)>) -> StruggleIntervals {
        StruggleIntervals::new("v", eps).unwrap()
    }

    #[test]
    fn no_episodes_gives_all_zero() {
        let c = intervals_to_frame_labels(&iv(vec![]), 3.125, 7).unwrap();
        assert_eq!(c.track.labels, vec![0; 7]);
    }

    /// Oracle: test each frame directly against the rounded boundaries.
    fn oracle(eps: &[(f64, f64)], fps: f64, n: usize) -> Vec<u8> {
        (0..n)
            .map(|k| {
                let hit = eps.iter().any(|&(s, e)| {
                    let lo = (s * fps).round() as i64;
                    let hi = ((e * fps).round() as i64).min(n as i64 - 1);
                    (lo..=hi).contains(&(k as i64))
                });
                u8::from(hit)
            })
            .collect()
    }

    #[test]
    fn one_to_two_seconds_at_3_125_fps() {
        let c = intervals_to_frame_labels(&iv(vec![(1.0, 2.0)]), 3.125, 10).unwrap();
        assert_eq!(c.track.labels, vec![0, 0, 0, 1, 1, 1, 1, 0, 0, 0]);
        assert_eq!(c.track.labels, oracle(&[(1.0, 2.0)], 3.125, 10));
        assert!(c.warnings.is_empty());
    }

    #[test]
    fn overlapping_episodes_union() {
        let c = intervals_to_frame_labels(&iv(vec![(0.0, 1.0), (0.5, 1.5)]), 3.125, 10).unwrap();
        // frames 0..=3 and 2..=5 merge into one run 0..=5
        assert_eq!(c.track.labels, vec![1, 1, 1, 1, 1, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn episode_past_end_is_clamped_with_warning() {
        let c = intervals_to_frame_labels(&iv(vec![(2.0, 10.0)]), 3.125, 8).unwrap();
        assert_eq!(c.track.labels, vec![0, 0, 0, 0, 0, 0, 1, 1]);
        assert_eq!(c.warnings.len(), 1);
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(intervals_to_frame_labels(&iv(vec![]), 3.125, 0).is_err());
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(time_to_frame(0.16, 3.125), 1); // 0.5 -> 1
        assert_eq!(time_to_frame(0.48, 3.125), 2); // 1.5 -> 2
    }

    proptest! {
        #[test]
        fn matches_oracle(eps in prop::collection::vec((0.0f64..30.0, 0.1f64..8.0), 0..5), n in 1usize..120) {
            let eps: Vec<(f64, f64)> = eps.into_iter().map(|(s, l)| (s, s + l)).collect();
            let c = intervals_to_frame_labels(&iv(eps.clone()), 3.125, n).unwrap();
            prop_assert_eq!(c.track.labels, oracle(&eps, 3.125, n));
        }

        #[test]
        fn extending_an_episode_is_monotone(s in 0.0f64..20.0, l in 0.1f64..5.0, ext in 0.0f64..5.0, n in 1usize..100) {
            let a = intervals_to_frame_labels(&iv(vec![(s, s + l)]), 3.125, n).unwrap().track.labels;
            let b = intervals_to_frame_labels(&iv(vec![(s, s + l + ext)]), 3.125, n).unwrap().track.labels;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(y >= x);
            }
        }

        #[test]
        fn positive_fraction_tracks_duration(count in 1usize..6, n in 2000usize..4000) {
            let fps = 3.125;
            let duration = n as f64 / fps;
            let width = duration / (2.0 * count as f64);
            let eps: Vec<(f64, f64)> = (0..count).map(|i| (2.0 * i as f64 * width + 0.1, (2.0 * i as f64 + 1.0) * width)).collect();
            let track = intervals_to_frame_labels(&iv(eps.clone()), fps, n).unwrap().track;
            let expected: f64 = eps.iter().map(|(s, e)| e - s).sum::<f64>() / duration;
            // one frame width per boundary, two boundaries per episode
            let tol = 2.0 * count as f64 / n as f64;
            prop_assert!((track.positive_fraction() - expected).abs() <= tol);
        }
    }
}
