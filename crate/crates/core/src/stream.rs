//! Causal frame-by-frame inference, batched reference evaluation and profiling.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::FeatureStream;
use crate::error::{Error, FormatError, Result};
use crate::model::{struggle_prob, Model, ModelOutput, WindowInput, WindowLayout};
use crate::nn::{ForwardMode, Matrix};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionFrame {
    pub t: usize,
    pub detection_prob: f64,
    /// Offsets `1..=δ`.
    pub anticipation_probs: Vec<f64>,
    pub latency_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrack {
    pub video_id: String,
    pub frames: Vec<PredictionFrame>,
}

impl PredictionTrack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn detection_probs(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.detection_prob).collect()
    }

    pub fn anticipation_len(&self) -> usize {
        self.frames.first().map_or(0, |f| f.anticipation_probs.len())
    }
}

fn frame_from_output<T: Scalar>(
    output: &ModelOutput<T>,
    m: usize,
    delta: usize,
    t: usize,
    latency_ms: f64,
) -> PredictionFrame {
    let logits = output.final_logits();
    PredictionFrame {
        t,
        detection_prob: struggle_prob(logits.row(m - 1)).as_f64(),
        anticipation_probs: (0..delta)
            .map(|j| struggle_prob(logits.row(m + j)).as_f64())
            .collect(),
        latency_ms,
    }
}

/// Single-stream inference state: a fixed-capacity ring of fused frames.
#[derive(Clone, Debug)]
pub struct StreamEngine<T = f64> {
    model: Arc<Model<T>>,
    ring: VecDeque<Vec<T>>,
    capacity: usize,
    first: Option<Vec<T>>,
    next_t: usize,
}

impl<T: Scalar> StreamEngine<T> {
    pub fn new(model: Arc<Model<T>>) -> Self {
        let c = model.config();
        let capacity = c.long_len + c.short_len + c.near_past();
        Self {
            model,
            ring: VecDeque::with_capacity(capacity),
            capacity,
            first: None,
            next_t: 0,
        }
    }

    pub fn model(&self) -> &Arc<Model<T>> {
        &self.model
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Frames currently buffered (never more than [`StreamEngine::capacity`]).
    pub fn buffered(&self) -> usize {
        self.ring.len()
    }

    /// Index the next call to [`StreamEngine::step`] will predict for.
    pub fn next_frame_index(&self) -> usize {
        self.next_t
    }

    pub fn reset(&mut self) {
        self.ring.clear();
        self.first = None;
        self.next_t = 0;
    }

    /// Appends one raw feature row and predicts for it.
    pub fn step(&mut self, frame: &[T]) -> Result<PredictionFrame> {
        let c = self.model.config();
        if frame.len() != c.d_total() {
            return Err(Error::shape(format!(
                "frame has {} features, model expects {}",
                frame.len(),
                c.d_total()
            )));
        }
        let fused = self.model.fuse_rows(&Matrix::row_vector(frame))?.into_vec();
        if self.first.is_none() {
            self.first = Some(fused.clone());
        }
        if self.ring.len() == self.capacity {
            self.ring.pop_front();
        }
        self.ring.push_back(fused);
        let t = self.next_t;
        self.next_t += 1;

        let d = c.d_model;
        let mut data = Vec::with_capacity(self.ring.len() * d);
        for row in &self.ring {
            data.extend_from_slice(row);
        }
        let history = Matrix::from_vec(self.ring.len(), d, data)?;
        let offset = (t + 1 - self.ring.len()) as i64;
        let layout = WindowLayout::new(c, t);
        let first = self.first.as_deref().expect("set above");
        let input = WindowInput::from_layout_with_first(&layout, &history, offset, first)?;

        let start = Instant::now();
        let output = self.model.forward_fused(&input, &mut ForwardMode::inference())?;
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(frame_from_output(&output, c.short_len, c.anticipation_len, t, latency_ms))
    }
}

/// Streams every frame of `stream` through a freshly reset engine.
pub fn run_stream<T: Scalar>(
    engine: &mut StreamEngine<T>,
    stream: &FeatureStream<T>,
) -> Result<PredictionTrack> {
    if stream.is_empty() {
        return Err(Error::Data(format!("{}: empty stream", stream.video_id)));
    }
    engine.reset();
    let frames = (0..stream.len())
        .map(|t| engine.step(stream.frames.row(t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionTrack {
        video_id: stream.video_id.clone(),
        frames,
    })
}

/// Reference evaluation: fuse the whole stream, then build each frame's
/// window directly from the fused matrix with the same padding and masks.
pub fn batch_evaluate<T: Scalar>(model: &Model<T>, stream: &FeatureStream<T>) -> Result<PredictionTrack> {
    if stream.is_empty() {
        return Err(Error::Data(format!("{}: empty stream", stream.video_id)));
    }
    let c = model.config();
    let fused = model.fuse_rows(&stream.frames)?;
    let frames = (0..stream.len())
        .map(|t| {
            let input = WindowInput::from_layout(&WindowLayout::new(c, t), &fused, 0)?;
            let start = Instant::now();
            let out = model.forward_fused(&input, &mut ForwardMode::inference())?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            Ok(frame_from_output(&out, c.short_len, c.anticipation_len, t, ms))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionTrack {
        video_id: stream.video_id.clone(),
        frames,
    })
}

/// Column names for a track with `delta` anticipation columns.
pub fn track_csv_header(delta: usize) -> Vec<String> {
    let mut h: Vec<String> = ["video_id", "T", "detection_prob"].map(String::from).to_vec();
    h.extend((1..=delta).map(|j| format!("ant_{j}")));
    h.push("latency_ms".into());
    h
}

fn csv_error(e: csv::Error) -> Error {
    FormatError::Malformed(format!("track csv: {e}")).into()
}

pub fn track_to_csv(tracks: &[PredictionTrack]) -> Result<String> {
    let delta = tracks.first().map_or(0, PredictionTrack::anticipation_len);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(track_csv_header(delta)).map_err(csv_error)?;
    for track in tracks {
        for f in &track.frames {
            if f.anticipation_probs.len() != delta {
                return Err(Error::shape("tracks disagree on the anticipation horizon"));
            }
            let mut row = vec![track.video_id.clone(), f.t.to_string(), f.detection_prob.to_string()];
            row.extend(f.anticipation_probs.iter().map(f64::to_string));
            row.push(format!("{:.6}", f.latency_ms));
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| FormatError::Malformed(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn track_from_csv(text: &str) -> Result<Vec<PredictionTrack>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(String::from).collect();
    if header.len() < 4 || header != track_csv_header(header.len() - 4) {
        return Err(FormatError::Malformed(format!("unexpected track header {header:?}")).into());
    }
    let delta = header.len() - 4;
    let mut tracks: Vec<PredictionTrack> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let bad = |what: &str| Error::from(FormatError::Malformed(format!("row {}: bad {what}", i + 1)));
        let num = |k: usize| rec[k].parse::<f64>().map_err(|_| bad("number"));
        let frame = PredictionFrame {
            t: rec[1].parse().map_err(|_| bad("frame index"))?,
            detection_prob: num(2)?,
            anticipation_probs: (3..3 + delta).map(num).collect::<Result<_>>()?,
            latency_ms: num(3 + delta)?,
        };
        match tracks.last_mut() {
            Some(tr) if tr.video_id == rec[0] => tr.frames.push(frame),
            _ => tracks.push(PredictionTrack {
                video_id: rec[0].to_string(),
                frames: vec![frame],
            }),
        }
    }
    for tr in &tracks {
        if tr.frames.iter().enumerate().any(|(i, f)| f.t != i) {
            return Err(FormatError::Malformed(format!("{}: frame indices not 0..N", tr.video_id)).into());
        }
    }
    Ok(tracks)
}

pub fn write_tracks(tracks: &[PredictionTrack], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, track_to_csv(tracks)?).map_err(|e| Error::io(path, e))
}

pub fn read_tracks(path: &Path) -> Result<Vec<PredictionTrack>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    track_from_csv(&text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeReport {
    pub steps: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    /// Measured steps over the wall-clock time of the timed loop.
    pub steps_per_second: f64,
    pub parameter_count: usize,
    pub macs_per_step: usize,
}

/// Times every step after `warmup_steps`. Per-step latency covers the whole
/// [`StreamEngine::step`] call.
pub fn profile<T: Scalar>(
    engine: &mut StreamEngine<T>,
    stream: &FeatureStream<T>,
    warmup_steps: usize,
) -> Result<RuntimeReport> {
    if stream.len() <= warmup_steps {
        return Err(Error::Data(format!(
            "profiling needs more than {warmup_steps} frames, got {}",
            stream.len()
        )));
    }
    engine.reset();
    for t in 0..warmup_steps {
        engine.step(stream.frames.row(t))?;
    }
    let mut lat = Vec::with_capacity(stream.len() - warmup_steps);
    let wall = Instant::now();
    for t in warmup_steps..stream.len() {
        let s = Instant::now();
        engine.step(stream.frames.row(t))?;
        lat.push(s.elapsed().as_secs_f64() * 1e3);
    }
    let total = wall.elapsed().as_secs_f64();
    let n = lat.len();
    let mean = lat.iter().sum::<f64>() / n as f64;
    let mut sorted = lat.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let p95 = sorted[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
    let c = engine.model().config();
    Ok(RuntimeReport {
        steps: n,
        mean_ms: mean,
        median_ms: median,
        p95_ms: p95,
        steps_per_second: n as f64 / total,
        parameter_count: c.parameter_count(),
        macs_per_step: c.step_macs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stream(n: usize, seed: u64) -> FeatureStream<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * 32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureStream::new("s", Matrix::from_vec(n, 32, data).unwrap(), 3.125, 24, 8).unwrap()
    }

    fn engine(variant: Variant) -> StreamEngine<f64> {
        StreamEngine::new(Arc::new(Model::new(ModelConfig::desk(variant), 3).unwrap()))
    }

    fn probs(track: &PredictionTrack) -> Vec<Vec<f64>> {
        track
            .frames
            .iter()
            .map(|f| {
                let mut v = vec![f.detection_prob];
                v.extend(&f.anticipation_probs);
                v
            })
            .collect()
    }

    #[test]
    fn first_step_is_valid() {
        let mut e = engine(Variant::Cmert);
        let s = stream(1, 1);
        let track = run_stream(&mut e, &s).unwrap();
        assert_eq!(track.len(), 1);
        let f = &track.frames[0];
        assert!((0.0..=1.0).contains(&f.detection_prob));
        assert_eq!(f.anticipation_probs.len(), 6);
    }

    #[test]
    fn streaming_matches_batch_and_is_repeatable() {
        for variant in [Variant::Lstr, Variant::Cmert] {
            let mut e = engine(variant);
            let s = stream(150, 2);
            let a = run_stream(&mut e, &s).unwrap();
            let b = run_stream(&mut engine(variant), &s).unwrap();
            assert_eq!(probs(&a), probs(&b));
            let batch = batch_evaluate(e.model(), &s).unwrap();
            for (x, y) in probs(&a).iter().zip(probs(&batch).iter()) {
                for (p, q) in x.iter().zip(y) {
                    assert!((p - q).abs() <= 1e-9);
                }
            }
            assert!(e.buffered() <= e.capacity());
        }
    }

    #[test]
    fn truncated_replay_matches() {
        let mut e = engine(Variant::Lstr);
        let s = stream(120, 3);
        let full = run_stream(&mut e, &s).unwrap();
        for t in [0, 7, 8, 64, 119] {
            let part = run_stream(&mut e, &s.truncated(t + 1).unwrap()).unwrap();
            assert_eq!(probs(&part)[t], probs(&full)[t]);
        }
    }

    #[test]
    fn detection_only_engine_has_no_anticipation() {
        let cfg = ModelConfig {
            anticipation_len: 0,
            ..ModelConfig::desk(Variant::Lstr)
        };
        let mut e = StreamEngine::new(Arc::new(Model::<f64>::new(cfg, 1).unwrap()));
        let t = run_stream(&mut e, &stream(10, 4)).unwrap();
        assert!(t.frames.iter().all(|f| f.anticipation_probs.is_empty()));
    }

    #[test]
    fn wrong_width_is_rejected() {
        let mut e = engine(Variant::Lstr);
        assert!(e.step(&[0.0; 31]).is_err());
        assert_eq!(e.next_frame_index(), 0);
    }

    #[test]
    fn csv_round_trip() {
        let mut e = engine(Variant::Cmert);
        let t = run_stream(&mut e, &stream(20, 5)).unwrap();
        let text = track_to_csv(std::slice::from_ref(&t)).unwrap();
        assert!(text.starts_with("video_id,T,detection_prob,ant_1,ant_2,ant_3,ant_4,ant_5,ant_6,latency_ms\n"));
        let back = track_from_csv(&text).unwrap();
        assert_eq!(probs(&back[0]), probs(&t));
    }

    #[test]
    fn profile_is_consistent() {
        let mut e = engine(Variant::Lstr);
        let r = profile(&mut e, &stream(60, 6), 10).unwrap();
        assert_eq!(r.steps, 50);
        let implied = 1000.0 / r.mean_ms;
        assert!((r.steps_per_second - implied).abs() / implied < 0.1);
        assert_eq!(r.parameter_count, e.model().params().num_scalars());
        assert!(r.p95_ms >= r.median_ms);
    }

    #[test]
    fn f32_engine_runs() {
        let model = Model::<f32>::new(ModelConfig::desk(Variant::Cmert), 3).unwrap();
        let mut e = StreamEngine::new(Arc::new(model));
        let s = stream(30, 7);
        let s32 = FeatureStream::new("s", s.frames.cast::<f32>(), 3.125, 24, 8).unwrap();
        let t = run_stream(&mut e, &s32).unwrap();
        assert!(t.frames.iter().all(|f| f.detection_prob.is_finite()));
    }
}
