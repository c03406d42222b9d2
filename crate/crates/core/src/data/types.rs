use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Activity {
    TyingKnots,
    Origami,
    Tangram,
    ShuffleCards,
}

impl Activity {
    pub const ALL: [Activity; 4] = [
        Activity::TyingKnots,
        Activity::Origami,
        Activity::Tangram,
        Activity::ShuffleCards,
    ];

    /// Number of distinct tasks recorded for the activity.
    pub fn task_count(self) -> u8 {
        match self {
            Activity::Origami | Activity::Tangram => 4,
            Activity::TyingKnots | Activity::ShuffleCards => 5,
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Activity::TyingKnots => "tying_knots",
            Activity::Origami => "origami",
            Activity::Tangram => "tangram",
            Activity::ShuffleCards => "shuffle_cards",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&a| a == self).expect("listed")
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activity::TyingKnots => "TyingKnots",
            Activity::Origami => "Origami",
            Activity::Tangram => "Tangram",
            Activity::ShuffleCards => "ShuffleCards",
        };
        f.write_str(s)
    }
}

impl FromStr for Activity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Activity::ALL
            .into_iter()
            .find(|a| a.to_string().eq_ignore_ascii_case(s) || a.slug() == s)
            .ok_or_else(|| Error::Data(format!("unknown activity `{s}`")))
    }
}

pub const MAX_ATTEMPTS: u8 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub activity: Activity,
    pub task_id: u8,
    pub participant_id: String,
    pub attempt: u8,
    /// Seconds.
    pub duration: f64,
}

impl VideoRecord {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_ATTEMPTS).contains(&self.attempt) {
            return Err(Error::Data(format!(
                "{}: attempt {} outside 1..=5",
                self.video_id, self.attempt
            )));
        }
        if !(self.duration > 0.0) {
            return Err(Error::Data(format!(
                "{}: duration must be positive",
                self.video_id
            )));
        }
        if !(1..=self.activity.task_count()).contains(&self.task_id) {
            return Err(Error::Data(format!(
                "{}: {} has no task {}",
                self.video_id, self.activity, self.task_id
            )));
        }
        Ok(())
    }
}

/// Per-video feature matrix (`N x (d_slow + d_fast)`), slow channels first.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStream<T = f64> {
    pub video_id: String,
    pub frames: Matrix<T>,
    pub feature_fps: f64,
    pub d_slow: usize,
    pub d_fast: usize,
}

impl<T: Scalar> FeatureStream<T> {
    pub fn new(
        video_id: impl Into<String>,
        frames: Matrix<T>,
        feature_fps: f64,
        d_slow: usize,
        d_fast: usize,
    ) -> Result<Self> {
        let s = Self {
            video_id: video_id.into(),
            frames,
            feature_fps,
            d_slow,
            d_fast,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_slow + self.d_fast != self.frames.cols() {
            return Err(Error::shape(format!(
                "d_slow {} + d_fast {} != {} feature columns",
                self.d_slow,
                self.d_fast,
                self.frames.cols()
            )));
        }
        if !(self.feature_fps > 0.0) {
            return Err(Error::Data("feature fps must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn d_total(&self) -> usize {
        self.d_slow + self.d_fast
    }

    /// Copy holding only the first `n` frames.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Ok(Self {
            frames: self.frames.slice_rows(0, n.min(self.len()))?,
            ..self.clone()
        })
    }
}

/// Ground-truth struggle episodes in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StruggleIntervals {
    pub video_id: String,
    pub episodes: Vec<(f64, f64)>,
}

impl StruggleIntervals {
    pub fn new(video_id: impl Into<String>, episodes: Vec<(f64, f64)>) -> Result<Self> {
        let s = Self {
            video_id: video_id.into(),
            episodes,
        };
        for &(start, end) in &s.episodes {
            if !(start >= 0.0 && start < end && end.is_finite()) {
                return Err(Error::Data(format!(
                    "{}: invalid episode ({start}, {end})",
                    s.video_id
                )));
            }
        }
        Ok(s)
    }

    /// Checks every episode lies inside `[0, duration]`.
    pub fn validate_within(&self, duration: f64) -> Result<()> {
        for &(start, end) in &self.episodes {
            if !(0.0 <= start && start < end && end <= duration) {
                return Err(Error::Data(format!(
                    "{}: episode ({start}, {end}) outside [0, {duration}]",
                    self.video_id
                )));
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.episodes.iter().map(|(s, e)| e - s).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLabelTrack {
    pub video_id: String,
    pub labels: Vec<u8>,
}

impl FrameLabelTrack {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&l| l == 1).count() as f64 / self.labels.len() as f64
    }
}
