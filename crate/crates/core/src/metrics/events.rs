use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive frame segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub start: usize,
    pub end: usize,
    pub confidence: Option<f64>,
}

impl Event {
    pub fn new(start: usize, end: usize) -> Self {
        Self {
            start,
            end,
            confidence: None,
        }
    }

    pub fn frames(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn iou(&self, other: &Event) -> f64 {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        let inter = if hi >= lo { hi - lo + 1 } else { 0 };
        inter as f64 / (self.frames() + other.frames() - inter) as f64
    }
}

/// Sorted, non-overlapping segments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSet {
    pub events: Vec<Event>,
}

impl EventSet {
    pub fn new(events: Vec<Event>) -> Result<Self> {
        for e in &events {
            if e.start > e.end {
                return Err(Error::Data(format!("event ({}, {}) ends before it starts", e.start, e.end)));
            }
        }
        if events.windows(2).any(|w| w[1].start <= w[0].end) {
            return Err(Error::Data("events must be sorted and non-overlapping".into()));
        }
        Ok(Self { events })
    }

    pub fn from_segments(segments: &[(usize, usize)]) -> Result<Self> {
        Self::new(segments.iter().map(|&(s, e)| Event::new(s, e)).collect())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn segments(&self) -> Vec<(usize, usize)> {
        self.events.iter().map(|e| (e.start, e.end)).collect()
    }

    /// Binary track of length `n`; segments past `n` are clipped.
    pub fn to_labels(&self, n: usize) -> Vec<u8> {
        let mut out = vec![0u8; n];
        for e in &self.events {
            for v in out.iter_mut().take(e.end + 1).skip(e.start) {
                *v = 1;
            }
        }
        out
    }
}

/// Maximal runs of nonzero values.
pub fn extract_events(binary: &[u8]) -> EventSet {
    let mut events = Vec::new();
    let mut start = None;
    for (i, &b) in binary.iter().enumerate() {
        match (b != 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                events.push(Event::new(s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        events.push(Event::new(s, binary.len() - 1));
    }
    EventSet { events }
}

/// Like [`extract_events`], with each event's confidence set to the mean
/// probability over its frames.
pub fn extract_events_with_probs(binary: &[u8], probs: &[f64]) -> Result<EventSet> {
    if binary.len() != probs.len() {
        return Err(Error::shape(format!(
            "{} flags but {} probabilities",
            binary.len(),
            probs.len()
        )));
    }
    let mut set = extract_events(binary);
    for e in &mut set.events {
        let run = &probs[e.start..=e.end];
        e.confidence = Some(run.iter().sum::<f64>() / run.len() as f64);
    }
    Ok(set)
}

/// `p > 0.5` per frame.
pub fn binarize(probs: &[f64]) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p > 0.5)).collect()
}

/// Greedy one-to-one matching in descending IoU; returns `(pred, truth, iou)`
/// for pairs with IoU at least `tau`.
pub fn match_events(pred: &EventSet, truth: &EventSet, tau: f64) -> Vec<(usize, usize, f64)> {
    let mut pairs = Vec::new();
    for (i, p) in pred.events.iter().enumerate() {
        for (j, t) in truth.events.iter().enumerate() {
            let iou = p.iou(t);
            if iou > 0.0 && iou >= tau {
                pairs.push((i, j, iou));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_p = vec![false; pred.len()];
    let mut used_t = vec![false; truth.len()];
    let mut out = Vec::new();
    for (i, j, iou) in pairs {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            out.push((i, j, iou));
        }
    }
    out
}

pub const DEFAULT_TAUS: [f64; 3] = [0.1, 0.3, 0.5];

/// Matching counts at one IoU threshold; add counts across videos before
/// computing F1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub predicted: usize,
    pub truth: usize,
}

impl MatchCounts {
    pub fn of(pred: &EventSet, truth: &EventSet, tau: f64) -> Self {
        Self {
            tp: match_events(pred, truth, tau).len(),
            predicted: pred.len(),
            truth: truth.len(),
        }
    }

    pub fn add(&mut self, other: MatchCounts) {
        self.tp += other.tp;
        self.predicted += other.predicted;
        self.truth += other.truth;
    }

    pub fn precision(&self) -> f64 {
        if self.predicted == 0 {
            0.0
        } else {
            self.tp as f64 / self.predicted as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.truth == 0 {
            0.0
        } else {
            self.tp as f64 / self.truth as f64
        }
    }

    /// 1 when both sides are empty.
    pub fn f1(&self) -> f64 {
        if self.predicted == 0 && self.truth == 0 {
            return 1.0;
        }
        2.0 * self.tp as f64 / (self.predicted + self.truth) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventF1 {
    /// `(tau, f1)` pairs.
    pub per_tau: Vec<(f64, f64)>,
    pub mean: f64,
}

impl EventF1 {
    pub fn from_counts(taus: &[f64], counts: &[MatchCounts]) -> Self {
        let per_tau: Vec<(f64, f64)> = taus.iter().zip(counts).map(|(&t, c)| (t, c.f1())).collect();
        let mean = if per_tau.is_empty() {
            0.0
        } else {
            per_tau.iter().map(|p| p.1).sum::<f64>() / per_tau.len() as f64
        };
        Self { per_tau, mean }
    }
}

pub fn event_f1(pred: &EventSet, truth: &EventSet, taus: &[f64]) -> EventF1 {
    let counts: Vec<MatchCounts> = taus.iter().map(|&t| MatchCounts::of(pred, truth, t)).collect();
    EventF1::from_counts(taus, &counts)
}

fn binned_ece(samples: &[(f64, bool)], lo: f64, hi: f64, bins: usize) -> f64 {
    if samples.is_empty() || bins == 0 {
        return 0.0;
    }
    let width = (hi - lo) / bins as f64;
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut correct = vec![0.0; bins];
    for &(c, ok) in samples {
        let b = (((c - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += c;
        correct[b] += f64::from(u8::from(ok));
    }
    let n = samples.len() as f64;
    (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (correct[b] - conf[b]).abs() / n)
        .sum()
}

/// Frame ECE: confidence `max(p, 1-p)`, predicted class `p > 0.5`, equal
/// bins over `[0.5, 1]`.
pub fn ece_frame(probs: &[f64], labels: &[u8], bins: usize) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let samples: Vec<(f64, bool)> = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| (p.max(1.0 - p), u8::from(p > 0.5) == u8::from(y != 0)))
        .collect();
    Ok(binned_ece(&samples, 0.5, 1.0, bins))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventEce {
    pub ece: f64,
    /// Set when there were no predicted events.
    pub empty: bool,
    pub events: usize,
}

pub const EVENT_MATCH_TAU: f64 = 0.3;

/// ECE over predicted events, a prediction being correct when matched at
/// IoU of at least `tau`. Bins span `[0, 1]`.
pub fn ece_event(pred: &EventSet, truth: &EventSet, tau: f64, bins: usize) -> Result<EventEce> {
    ece_event_pooled(&[(pred, truth)], tau, bins)
}

/// Event ECE with events pooled over several videos.
pub fn ece_event_pooled(sets: &[(&EventSet, &EventSet)], tau: f64, bins: usize) -> Result<EventEce> {
    let mut samples = Vec::new();
    for (pred, truth) in sets {
        let mut ok = vec![false; pred.len()];
        for (i, _, _) in match_events(pred, truth, tau) {
            ok[i] = true;
        }
        for (e, ok) in pred.events.iter().zip(ok) {
            let c = e
                .confidence
                .ok_or_else(|| Error::Data("event ECE needs event confidences".into()))?;
            samples.push((c, ok));
        }
    }
    Ok(EventEce {
        ece: binned_ece(&samples, 0.0, 1.0, bins),
        empty: samples.is_empty(),
        events: samples.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnsetTiming {
    /// Seconds per truth event; `None` for misses.
    pub per_event: Vec<Option<f64>>,
    pub misses: usize,
}

impl OnsetTiming {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.per_event.iter().flatten().copied()
    }

    /// Mean over covered events; `None` when every event was missed.
    pub fn mean(&self) -> Option<f64> {
        let n = self.values().count();
        (n > 0).then(|| self.values().sum::<f64>() / n as f64)
    }

    pub fn extend(&mut self, other: OnsetTiming) {
        self.per_event.extend(other.per_event);
        self.misses += other.misses;
    }
}

/// For each truth onset `s` flagged by `flags`, the span from the start of
/// the flagged run containing `s` up to `s`. Not clamped to the horizon.
pub fn lead_time(flags: &[u8], truth: &EventSet, fps: f64) -> OnsetTiming {
    let mut per_event = Vec::with_capacity(truth.len());
    for e in &truth.events {
        let s = e.start;
        if s < flags.len() && flags[s] != 0 {
            let mut r = s;
            while r > 0 && flags[r - 1] != 0 {
                r -= 1;
            }
            per_event.push(Some((s - r) as f64 / fps));
        } else {
            per_event.push(None);
        }
    }
    let misses = per_event.iter().filter(|v| v.is_none()).count();
    OnsetTiming { per_event, misses }
}

/// First positive frame inside each truth event minus its start.
pub fn detection_delay(flags: &[u8], truth: &EventSet, fps: f64) -> OnsetTiming {
    let per_event: Vec<Option<f64>> = truth
        .events
        .iter()
        .map(|e| {
            (e.start..=e.end.min(flags.len().saturating_sub(1)))
                .find(|&i| i < flags.len() && flags[i] != 0)
                .map(|i| (i - e.start) as f64 / fps)
        })
        .collect();
    let misses = per_event.iter().filter(|v| v.is_none()).count();
    OnsetTiming { per_event, misses }
}
