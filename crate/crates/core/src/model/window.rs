use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::data::{FeatureStream, FrameLabelTrack};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::scalar::Scalar;

/// Stream indices feeding the window that ends at frame `t`. Negative indices
/// are padding: they read frame 0 and are marked invalid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowLayout {
    pub t: usize,
    pub long: Vec<i64>,
    pub near_past: Vec<i64>,
    pub short: Vec<i64>,
}

impl WindowLayout {
    pub fn new(config: &ModelConfig, t: usize) -> Self {
        let m = config.short_len as i64;
        let t_i = t as i64;
        let start = t_i - m + 1;
        let np = config.near_past() as i64;
        let lt = config.long_tokens() as i64;
        let rate = config.long_sample_rate as i64;
        Self {
            t,
            long: (0..lt).map(|k| start - 1 - rate * (lt - 1 - k)).collect(),
            near_past: (start - np..start).collect(),
            short: (start..=t_i).collect(),
        }
    }

    /// Oldest frame index read (may be negative).
    pub fn earliest(&self) -> i64 {
        self.long
            .first()
            .copied()
            .into_iter()
            .chain(self.near_past.first().copied())
            .chain(self.short.first().copied())
            .min()
            .unwrap_or(self.t as i64)
    }
}

pub(crate) fn validity(indices: &[i64]) -> Vec<bool> {
    indices.iter().map(|&i| i >= 0).collect()
}

/// Gathers rows of `source` (indexed so that row `r` is stream frame `offset + r`),
/// mapping padded indices to frame 0 (`first`).
pub(crate) fn gather<T: Scalar>(
    source: &Matrix<T>,
    offset: i64,
    first: &[T],
    indices: &[i64],
) -> Result<Matrix<T>> {
    let cols = first.len();
    let mut data = Vec::with_capacity(indices.len() * cols);
    for &i in indices {
        if i < 0 {
            data.extend_from_slice(first);
        } else {
            let r = i - offset;
            if r < 0 || r >= source.rows() as i64 {
                return Err(Error::shape(format!("frame {i} not available")));
            }
            data.extend_from_slice(source.row(r as usize));
        }
    }
    Matrix::from_vec(indices.len(), cols, data)
}

/// Raw feature rows of one window plus validity of each row.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowInput<T = f64> {
    pub long_mem: Matrix<T>,
    pub long_valid: Vec<bool>,
    pub near_past: Matrix<T>,
    pub near_valid: Vec<bool>,
    pub short_mem: Matrix<T>,
    pub short_valid: Vec<bool>,
}

impl<T: Scalar> WindowInput<T> {
    /// Builds the window ending at frame `t` from rows `0..=t` of `frames`.
    pub fn from_frames(config: &ModelConfig, frames: &Matrix<T>, t: usize) -> Result<Self> {
        if t >= frames.rows() {
            return Err(Error::shape(format!(
                "frame {t} beyond stream of {} frames",
                frames.rows()
            )));
        }
        Self::from_layout(&WindowLayout::new(config, t), frames, 0)
    }

    pub(crate) fn from_layout(layout: &WindowLayout, source: &Matrix<T>, offset: i64) -> Result<Self> {
        let first = source.row(0).to_vec();
        Self::from_layout_with_first(layout, source, offset, &first)
    }

    pub(crate) fn from_layout_with_first(
        layout: &WindowLayout,
        source: &Matrix<T>,
        offset: i64,
        first: &[T],
    ) -> Result<Self> {
        Ok(Self {
            long_mem: gather(source, offset, first, &layout.long)?,
            long_valid: validity(&layout.long),
            near_past: gather(source, offset, first, &layout.near_past)?,
            near_valid: validity(&layout.near_past),
            short_mem: gather(source, offset, first, &layout.short)?,
            short_valid: validity(&layout.short),
        })
    }
}

/// Targets aligned with the output rows of one window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowTargets {
    /// `m + δ` rows: short frames then offsets `1..=δ`; `None` rows are ignored.
    pub frames: Vec<Option<usize>>,
    /// Frames `T+1..=T+f` for the near-future head.
    pub near_future: Vec<Option<usize>>,
}

impl WindowTargets {
    pub fn new(config: &ModelConfig, labels: &[u8], t: usize) -> Self {
        let layout_short = WindowLayout::new(config, t).short;
        let at = |i: i64| {
            if i >= 0 && (i as usize) < labels.len() {
                Some(labels[i as usize] as usize)
            } else {
                None
            }
        };
        let t_i = t as i64;
        let frames = layout_short
            .iter()
            .map(|&i| at(i))
            .chain((1..=config.anticipation_len as i64).map(|j| at(t_i + j)))
            .collect();
        let near_future = match config.variant {
            super::Variant::Cmert => (1..=config.near_future_len as i64)
                .map(|j| at(t_i + j))
                .collect(),
            super::Variant::Lstr => Vec::new(),
        };
        Self {
            frames,
            near_future,
        }
    }

    pub fn valid_count(&self) -> usize {
        self.frames.iter().filter(|t| t.is_some()).count()
    }
}

/// Current-frame indices of non-overlapping training windows: stride `m` from
/// a seeded offset in `[0, m)`. Streams shorter than `m` give one padded window.
pub fn training_window_ends(config: &ModelConfig, n: usize, seed: u64) -> Vec<usize> {
    let m = config.short_len;
    if n == 0 {
        return Vec::new();
    }
    if n < m {
        return vec![n - 1];
    }
    let offset = ChaCha8Rng::seed_from_u64(seed).gen_range(0..m);
    let mut ends = Vec::new();
    let mut end = offset + m - 1;
    while end < n {
        ends.push(end);
        end += m;
    }
    if ends.is_empty() {
        ends.push(n - 1);
    }
    ends
}

pub fn sample_training_windows<T: Scalar>(
    stream: &FeatureStream<T>,
    labels: &FrameLabelTrack,
    config: &ModelConfig,
    seed: u64,
) -> Result<Vec<(WindowInput<T>, WindowTargets)>> {
    if stream.d_slow != config.d_slow || stream.d_fast != config.d_fast {
        return Err(Error::shape(format!(
            "stream has {}+{} features, model expects {}+{}",
            stream.d_slow, stream.d_fast, config.d_slow, config.d_fast
        )));
    }
    if labels.len() != stream.len() {
        return Err(Error::shape("labels and stream lengths differ"));
    }
    training_window_ends(config, stream.len(), seed)
        .into_iter()
        .map(|t| {
            Ok((
                WindowInput::from_frames(config, &stream.frames, t)?,
                WindowTargets::new(config, &labels.labels, t),
            ))
        })
        .collect()
}
