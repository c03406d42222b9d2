use serde::{Deserialize, Serialize};

use super::events::{
    binarize, ece_event_pooled, ece_frame, extract_events, extract_events_with_probs, EventEce,
    EventF1, EventSet, MatchCounts, OnsetTiming, DEFAULT_TAUS, EVENT_MATCH_TAU,
};
use super::ranking::{frame_ap, frame_cap, pr_curve, PrCurve, ScoredFrames};
use crate::error::{Error, Result};
use crate::stream::PredictionTrack;

/// A prediction track with the frame labels of the same video.
pub type ScoredVideo<'a> = (&'a PredictionTrack, &'a [u8]);

fn check_lengths(videos: &[ScoredVideo<'_>]) -> Result<()> {
    for (track, labels) in videos {
        if track.len() != labels.len() {
            return Err(Error::shape(format!(
                "{}: {} predictions but {} labels",
                track.video_id,
                track.len(),
                labels.len()
            )));
        }
    }
    Ok(())
}

/// Pools detection probabilities against frame labels.
pub fn detection_frames(videos: &[ScoredVideo<'_>]) -> Result<ScoredFrames> {
    check_lengths(videos)?;
    let mut out = ScoredFrames::default();
    for (track, labels) in videos {
        for (f, &y) in track.frames.iter().zip(labels.iter()) {
            out.push(f.detection_prob, y);
        }
    }
    Ok(out)
}

/// Pairs the offset-`j` prediction at `T` with the label at `T + j`; pairs
/// past the end of a stream are dropped.
pub fn offset_frames(videos: &[ScoredVideo<'_>], j: usize) -> Result<ScoredFrames> {
    check_lengths(videos)?;
    let mut out = ScoredFrames::default();
    for (track, labels) in videos {
        for f in &track.frames {
            let Some(&y) = labels.get(f.t + j) else { continue };
            let p = f.anticipation_probs.get(j - 1).ok_or_else(|| {
                Error::shape(format!("{}: no prediction for offset {j}", track.video_id))
            })?;
            out.push(*p, y);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnticipationCap {
    /// Offsets `1..=δ`; `None` where the pooled pairs lack a class.
    pub per_offset: Vec<Option<f64>>,
    /// Unweighted mean of the defined per-offset values. With `δ = 0` this
    /// is the detection cAP.
    pub mean: Option<f64>,
    /// One ranking over every offset's pairs.
    pub pooled: Option<f64>,
}

pub fn anticipation_cap(videos: &[ScoredVideo<'_>], delta: usize) -> Result<AnticipationCap> {
    if delta == 0 {
        let cap = frame_cap(&detection_frames(videos)?).ok();
        return Ok(AnticipationCap {
            per_offset: Vec::new(),
            mean: cap,
            pooled: cap,
        });
    }
    let mut pooled = ScoredFrames::default();
    let mut per_offset = Vec::with_capacity(delta);
    for j in 1..=delta {
        let frames = offset_frames(videos, j)?;
        per_offset.push(frame_cap(&frames).ok());
        pooled.scores.extend(&frames.scores);
        pooled.labels.extend(&frames.labels);
    }
    let defined: Vec<f64> = per_offset.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(AnticipationCap {
        per_offset,
        mean,
        pooled: frame_cap(&pooled).ok(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub feature_fps: f64,
    pub taus: Vec<f64>,
    pub ece_bins: usize,
    pub event_match_tau: f64,
}

impl EvalOptions {
    pub fn new(feature_fps: f64) -> Self {
        Self {
            feature_fps,
            taus: DEFAULT_TAUS.to_vec(),
            ece_bins: 10,
            event_match_tau: EVENT_MATCH_TAU,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub videos: usize,
    pub frames: usize,
    pub positive_fraction: f64,
    pub detection_cap: Option<f64>,
    pub frame_ap: Option<f64>,
    pub anticipation: AnticipationCap,
    pub event_f1: EventF1,
    pub frame_ece: f64,
    pub event_ece: EventEce,
    pub mean_lead_time_s: Option<f64>,
    pub lead_time_misses: usize,
    pub mean_detection_delay_s: Option<f64>,
    pub detection_misses: usize,
    pub truth_events: usize,
    pub pr: Option<PrCurve>,
}

/// Scores a set of videos. Frame metrics pool every frame into one ranking;
/// event counts and timings are accumulated per video then combined.
pub fn evaluate(videos: &[ScoredVideo<'_>], opts: &EvalOptions) -> Result<MetricReport> {
    if videos.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    if !(opts.feature_fps > 0.0) {
        return Err(Error::Config("feature fps must be positive".into()));
    }
    let delta = videos[0].0.anticipation_len();
    if videos.iter().any(|(t, _)| t.frames.iter().any(|f| f.anticipation_probs.len() != delta)) {
        return Err(Error::shape("tracks disagree on the anticipation horizon"));
    }
    let det = detection_frames(videos)?;

    let mut counts = vec![MatchCounts::default(); opts.taus.len()];
    let mut event_sets = Vec::with_capacity(videos.len());
    let mut lead = OnsetTiming {
        per_event: Vec::new(),
        misses: 0,
    };
    let mut delay = lead.clone();
    let mut truth_events = 0;
    for (track, labels) in videos {
        let probs = track.detection_probs();
        let flags = binarize(&probs);
        let pred = extract_events_with_probs(&flags, &probs)?;
        let truth = extract_events(labels);
        truth_events += truth.len();
        for (c, &tau) in counts.iter_mut().zip(&opts.taus) {
            c.add(MatchCounts::of(&pred, &truth, tau));
        }
        delay.extend(super::detection_delay(&flags, &truth, opts.feature_fps));
        if delta > 0 {
            let ant: Vec<u8> = track
                .frames
                .iter()
                .map(|f| u8::from(f.anticipation_probs.iter().any(|&p| p > 0.5)))
                .collect();
            lead.extend(super::lead_time(&ant, &truth, opts.feature_fps));
        }
        event_sets.push((pred, truth));
    }
    let pairs: Vec<(&EventSet, &EventSet)> = event_sets.iter().map(|(p, t)| (p, t)).collect();

    Ok(MetricReport {
        videos: videos.len(),
        frames: det.len(),
        positive_fraction: det.positives() as f64 / det.len().max(1) as f64,
        detection_cap: frame_cap(&det).ok(),
        frame_ap: frame_ap(&det).ok(),
        anticipation: anticipation_cap(videos, delta)?,
        event_f1: EventF1::from_counts(&opts.taus, &counts),
        frame_ece: ece_frame(&det.scores, &det.labels, opts.ece_bins)?,
        event_ece: ece_event_pooled(&pairs, opts.event_match_tau, opts.ece_bins)?,
        mean_lead_time_s: lead.mean(),
        lead_time_misses: if delta > 0 { lead.misses } else { 0 },
        mean_detection_delay_s: delay.mean(),
        detection_misses: delay.misses,
        truth_events,
        pr: pr_curve(&det).ok(),
    })
}
