use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pooled `(score, label)` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredFrames {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredFrames {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("score".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn push(&mut self, score: f64, label: u8) {
        self.scores.push(score);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (p, n) = (self.positives(), self.negatives());
        if p == 0 || n == 0 {
            return Err(Error::MetricUndefined(format!(
                "{p} positives and {n} negatives; both classes are required"
            )));
        }
        Ok((p, n))
    }

    /// Indices by descending score; ties keep their original order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }
}

/// Calibrated average precision: precision reweighted by `#neg / #pos`.
pub fn frame_cap(frames: &ScoredFrames) -> Result<f64> {
    let (pos, neg) = frames.require_both_classes()?;
    let w = neg as f64 / pos as f64;
    let (mut tp, mut fp, mut sum) = (0.0, 0.0, 0.0);
    for i in frames.ranking() {
        if frames.labels[i] != 0 {
            tp += 1.0;
            sum += tp / (tp + fp / w);
        } else {
            fp += 1.0;
        }
    }
    Ok(sum / pos as f64)
}

/// Uncalibrated average precision over the same ranking.
pub fn frame_ap(frames: &ScoredFrames) -> Result<f64> {
    let pos = frames.positives();
    if pos == 0 {
        return Err(Error::MetricUndefined("no positive frames".into()));
    }
    let (mut tp, mut fp, mut sum) = (0.0, 0.0, 0.0);
    for i in frames.ranking() {
        if frames.labels[i] != 0 {
            tp += 1.0;
            sum += tp / (tp + fp);
        } else {
            fp += 1.0;
        }
    }
    Ok(sum / pos as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// `None` for the leading recall-0 anchor.
    pub threshold: Option<f64>,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Starts at recall 0, precision 1; one point per distinct score after that.
    pub points: Vec<PrPoint>,
    pub auc: f64,
}

pub fn pr_curve(frames: &ScoredFrames) -> Result<PrCurve> {
    let (pos, _) = frames.require_both_classes()?;
    let order = frames.ranking();
    let mut points = vec![PrPoint {
        threshold: None,
        precision: 1.0,
        recall: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let threshold = frames.scores[order[k]];
        while k < order.len() && frames.scores[order[k]] == threshold {
            if frames.labels[order[k]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(PrPoint {
            threshold: Some(threshold),
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / pos as f64,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * 0.5 * (w[1].precision + w[0].precision))
        .sum();
    Ok(PrCurve { points, auc })
}

/// Mean cAP of uniformly random scores against `labels`.
pub fn random_baseline_cap(labels: &[u8], trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Config("random baseline needs at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..trials {
        let scores = (0..labels.len()).map(|_| rng.gen::<f64>()).collect();
        total += frame_cap(&ScoredFrames::new(scores, labels.to_vec())?)?;
    }
    Ok(total / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(scores: &[f64], labels: &[u8]) -> ScoredFrames {
        ScoredFrames::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn worked_example() {
        let f = frames(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]);
        assert_eq!(frame_cap(&f).unwrap(), (1.0 + 2.0 / 3.0) / 2.0);
        assert_eq!(frame_ap(&f).unwrap(), frame_cap(&f).unwrap());
    }

    #[test]
    fn perfect_ranking() {
        let f = frames(&[0.9, 0.8, 0.2, 0.1, 0.05], &[1, 1, 0, 0, 0]);
        assert_eq!(frame_cap(&f).unwrap(), 1.0);
        assert_eq!(frame_ap(&f).unwrap(), 1.0);
        assert_eq!(pr_curve(&f).unwrap().auc, 1.0);
    }

    #[test]
    fn single_class_is_undefined() {
        let f = frames(&[0.1, 0.2], &[1, 1]);
        let err = frame_cap(&f).unwrap_err().to_string();
        assert!(err.contains("cAP undefined"), "{err}");
        assert!(pr_curve(&f).is_err());
        assert!(frame_ap(&frames(&[0.1], &[0])).is_err());
    }

    #[test]
    fn ties_follow_original_order() {
        let a = frames(&[0.5, 0.5], &[1, 0]);
        let b = frames(&[0.5, 0.5], &[0, 1]);
        assert_eq!(frame_cap(&a).unwrap(), 1.0);
        assert_eq!(frame_cap(&b).unwrap(), 0.5);
    }

    #[test]
    fn random_scores_near_half_while_ap_tracks_prevalence() {
        let labels: Vec<u8> = (0..10_000).map(|i| u8::from(i % 4 == 0)).collect();
        let cap = random_baseline_cap(&labels, 5, 1).unwrap();
        assert!((0.48..=0.52).contains(&cap), "{cap}");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = ScoredFrames::new((0..10_000).map(|_| rng.gen()).collect(), labels).unwrap();
        let ap = frame_ap(&f).unwrap();
        assert!((ap - 0.25).abs() < 0.03, "{ap}");
    }

    #[test]
    fn random_balanced_pr_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<u8> = (0..10_000).map(|i| (i % 2) as u8).collect();
        let f = ScoredFrames::new((0..10_000).map(|_| rng.gen()).collect(), labels).unwrap();
        let auc = pr_curve(&f).unwrap().auc;
        assert!((auc - 0.5).abs() < 0.03, "{auc}");
    }

    #[test]
    fn baseline_is_seeded() {
        let labels = [1, 0, 0, 1, 0, 1, 0, 0];
        assert_eq!(
            random_baseline_cap(&labels, 4, 9).unwrap(),
            random_baseline_cap(&labels, 4, 9).unwrap()
        );
    }
}
