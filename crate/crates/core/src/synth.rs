//! Deterministic synthetic corpus with learnable struggle episodes.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    encode_feature_stream, feature_path, intervals_to_frame_labels, write_annotations,
    write_manifest, Activity, Corpus, FeatureStream, LabeledVideo, StruggleIntervals, VideoRecord,
    ANNOTATIONS_FILE, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const AR_COEFFICIENT: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityProfile {
    pub name: String,
    pub activity: Activity,
    pub struggle_proportion_target: f64,
    /// Seconds.
    pub mean_episode_len: f64,
    /// Log-normal sigma of episode lengths.
    pub episode_len_jitter: f64,
    /// Seconds of ramp before each onset.
    pub precursor_len: f64,
    pub signal_strength: f64,
    pub noise_scale: f64,
    pub attempt_multipliers: [f64; 5],
}

impl ActivityProfile {
    pub fn default_for(activity: Activity) -> Self {
        let (proportion, mean_len, multipliers) = match activity {
            Activity::TyingKnots => (0.42, 20.0, [1.0, 0.85, 0.72, 0.62, 0.55]),
            Activity::Origami => (0.25, 16.0, [1.0, 0.7, 0.45, 0.3, 0.2]),
            Activity::Tangram => (0.49, 22.0, [1.0, 0.8, 0.65, 0.55, 0.45]),
            Activity::ShuffleCards => (0.29, 14.0, [1.0, 0.97, 0.94, 0.92, 0.9]),
        };
        Self {
            name: activity.to_string(),
            activity,
            struggle_proportion_target: proportion,
            mean_episode_len: mean_len,
            episode_len_jitter: 0.3,
            precursor_len: 2.0,
            signal_strength: 2.0,
            noise_scale: 1.0,
            attempt_multipliers: multipliers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.struggle_proportion_target;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Config(format!("{}: proportion {p} outside (0,1)", self.name)));
        }
        if !(self.mean_episode_len > 0.0) || !(self.episode_len_jitter >= 0.0) {
            return Err(Error::Config(format!("{}: bad episode length", self.name)));
        }
        if !(self.precursor_len >= 0.0) {
            return Err(Error::Config(format!("{}: negative precursor", self.name)));
        }
        if !(self.signal_strength >= 0.0) || !(self.noise_scale > 0.0) {
            return Err(Error::Config(format!("{}: bad signal or noise scale", self.name)));
        }
        if self.attempt_multipliers.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Config(format!("{}: multipliers must be positive", self.name)));
        }
        Ok(())
    }

    pub fn expected_proportion(&self, attempt: u8) -> f64 {
        let i = (attempt.clamp(1, 5) - 1) as usize;
        self.struggle_proportion_target * self.attempt_multipliers[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureGeometry {
    pub d_slow: usize,
    pub d_fast: usize,
    pub fps: f64,
}

impl Default for FeatureGeometry {
    fn default() -> Self {
        Self {
            d_slow: 24,
            d_fast: 8,
            fps: 3.125,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub profiles: Vec<ActivityProfile>,
    pub tasks_per_activity: u8,
    pub participants: usize,
    pub attempts: u8,
    /// Seconds.
    pub video_duration: f64,
    pub geometry: FeatureGeometry,
    pub master_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            profiles: Activity::ALL.map(ActivityProfile::default_for).to_vec(),
            tasks_per_activity: 2,
            participants: 3,
            attempts: 5,
            video_duration: 320.0,
            geometry: FeatureGeometry::default(),
            master_seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.profiles.is_empty() || self.tasks_per_activity == 0 || self.participants == 0 {
            return Err(Error::Config("corpus counts must be at least 1".into()));
        }
        if !(1..=5).contains(&self.attempts) {
            return Err(Error::Config(format!("attempts {} outside 1..=5", self.attempts)));
        }
        if !(self.video_duration > 0.0) {
            return Err(Error::Config("video duration must be positive".into()));
        }
        if self.geometry.d_slow == 0 || !(self.geometry.fps > 0.0) {
            return Err(Error::Config("need d_slow >= 1 and positive fps".into()));
        }
        self.profiles.iter().try_for_each(ActivityProfile::validate)
    }

    /// All `(profile, task, participant, attempt)` combinations in manifest order.
    pub fn video_keys(&self) -> Vec<(usize, u8, usize, u8)> {
        let mut keys = Vec::new();
        for (pi, p) in self.profiles.iter().enumerate() {
            for task in 1..=self.tasks_per_activity.min(p.activity.task_count()) {
                for part in 0..self.participants {
                    for attempt in 1..=self.attempts {
                        keys.push((pi, task, part, attempt));
                    }
                }
            }
        }
        keys
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one video, a pure function of its coordinates.
pub fn video_seed(master: u64, activity: Activity, task: u8, participant: usize, attempt: u8) -> u64 {
    [
        activity.index() as u64,
        task as u64,
        participant as u64,
        attempt as u64,
    ]
    .iter()
    .fold(splitmix64(master), |h, &v| splitmix64(h ^ v))
}

pub fn video_id(activity: Activity, task: u8, participant: usize, attempt: u8) -> String {
    format!("{}_t{task}_p{participant:03}_a{attempt}", activity.slug())
}

pub fn participant_id(participant: usize) -> String {
    format!("p{participant:03}")
}

/// Unit vector on the slow channels shared by every activity's task `task_id`.
pub fn task_direction(task_id: u8, d_slow: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(0x7A5C_D1EC ^ task_id as u64));
    loop {
        let v: Vec<f64> = (0..d_slow).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Closed frame ranges `[first, last]` of struggle episodes.
fn place_episodes(
    profile: &ActivityProfile,
    attempt: u8,
    n: usize,
    fps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let target = (profile.expected_proportion(attempt) * n as f64).round() as usize;
    if target == 0 {
        return Ok(Vec::new());
    }
    let mean_len = (profile.mean_episode_len * fps).max(2.0);
    let count = ((target as f64 / mean_len).round() as usize).max(1);
    let precursor = (profile.precursor_len * fps).round() as usize;
    let min_gap = precursor + 2;

    // count + 1 gaps; all but the trailing one must hold a precursor ramp
    let required = target + count * min_gap;
    if required > n {
        return Err(Error::Generation(format!(
            "{}: {count} episodes totalling {target} frames with {min_gap}-frame gaps do not fit in {n} frames; use shorter episodes or a lower proportion",
            profile.name
        )));
    }
    let sigma = profile.episode_len_jitter;
    let lengths_raw: Vec<f64> = if sigma > 0.0 {
        let ln = LogNormal::new(mean_len.ln() - sigma * sigma / 2.0, sigma)
            .map_err(|e| Error::Generation(e.to_string()))?;
        (0..count).map(|_| ln.sample(rng)).collect()
    } else {
        vec![mean_len; count]
    };
    let total_raw: f64 = lengths_raw.iter().sum();
    let mut lengths: Vec<usize> = lengths_raw
        .iter()
        .map(|l| ((l / total_raw) * target as f64).round().max(1.0) as usize)
        .collect();
    let assigned: usize = lengths.iter().sum();
    let last = lengths.last_mut().expect("count >= 1");
    if assigned > target {
        let excess = assigned - target;
        if *last <= excess {
            return Err(Error::Generation(format!(
                "{}: cannot split {target} struggle frames into {count} episodes; use longer episodes",
                profile.name
            )));
        }
        *last -= excess;
    } else {
        *last += target - assigned;
    }

    let free = (n - required) as f64;
    let gamma = Gamma::new(1.0, 1.0).map_err(|e| Error::Generation(e.to_string()))?;
    let w: Vec<f64> = (0..=count).map(|_| gamma.sample(rng)).collect();
    let wsum: f64 = w.iter().sum();
    let mut extra: Vec<usize> = w.iter().map(|x| (x / wsum * free).floor() as usize).collect();
    let used: usize = extra.iter().sum();
    extra[count] += (n - required) - used;

    let mut out = Vec::with_capacity(count);
    let mut cursor = 0;
    for (i, &len) in lengths.iter().enumerate() {
        cursor += min_gap + extra[i];
        out.push((cursor, cursor + len - 1));
        cursor += len;
    }
    debug_assert!(cursor + extra[count] == n);
    Ok(out)
}

/// Generates one video's features and struggle intervals.
pub fn generate_video(
    profile: &ActivityProfile,
    task_id: u8,
    attempt: u8,
    seed: u64,
    duration: f64,
    geometry: FeatureGeometry,
) -> Result<(FeatureStream<f64>, StruggleIntervals)> {
    profile.validate()?;
    let FeatureGeometry { d_slow, d_fast, fps } = geometry;
    let n = (duration * fps).round() as usize;
    if n == 0 {
        return Err(Error::Generation("video shorter than one frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let episodes = place_episodes(profile, attempt, n, fps, &mut rng)?;

    let d = d_slow + d_fast;
    let sd = profile.noise_scale;
    let innovation = Normal::new(0.0, sd * (1.0 - AR_COEFFICIENT * AR_COEFFICIENT).sqrt())
        .map_err(|e| Error::Generation(e.to_string()))?;
    let initial = Normal::new(0.0, sd).map_err(|e| Error::Generation(e.to_string()))?;
    let mut frames = Matrix::<f64>::zeros(n, d);
    for c in 0..d {
        let mut x = initial.sample(&mut rng);
        for t in 0..n {
            if t > 0 {
                x = AR_COEFFICIENT * x + innovation.sample(&mut rng);
            }
            frames.set(t, c, x);
        }
    }

    let dir = task_direction(task_id, d_slow);
    let s = profile.signal_strength;
    let fast_gain = (1.0 + s / (2.0 * sd)).sqrt();
    let precursor = (profile.precursor_len * fps).round() as usize;
    for &(first, last) in &episodes {
        for t in first..=last {
            let row = frames.row_mut(t);
            for (v, u) in row[..d_slow].iter_mut().zip(&dir) {
                *v += s * u;
            }
            for v in &mut row[d_slow..] {
                *v *= fast_gain;
            }
        }
        let ramp = precursor.min(first);
        for i in 0..ramp {
            let t = first - ramp + i;
            let level = s * (precursor - ramp + i + 1) as f64 / (precursor + 1) as f64;
            for (v, u) in frames.row_mut(t)[..d_slow].iter_mut().zip(&dir) {
                *v += level * u;
            }
        }
    }
    let frames = frames.map(|v| v as f32 as f64);

    let id = format!("seed{seed:016x}");
    let stream = FeatureStream::new(id.clone(), frames, fps, d_slow, d_fast)?;
    let intervals = StruggleIntervals::new(
        id,
        episodes
            .iter()
            .map(|&(a, b)| (a as f64 / fps, b as f64 / fps))
            .collect(),
    )?;
    Ok((stream, intervals))
}

/// Generates the whole corpus in memory, in manifest order.
pub fn generate_corpus_in_memory(config: &CorpusConfig) -> Result<Corpus<f64>> {
    config.validate()?;
    let videos = config
        .video_keys()
        .into_par_iter()
        .map(|(pi, task, part, attempt)| {
            let profile = &config.profiles[pi];
            let a = profile.activity;
            let seed = video_seed(config.master_seed, a, task, part, attempt);
            let (mut stream, mut intervals) = generate_video(
                profile,
                task,
                attempt,
                seed,
                config.video_duration,
                config.geometry,
            )?;
            let id = video_id(a, task, part, attempt);
            stream.video_id = id.clone();
            intervals.video_id = id.clone();
            Ok(LabeledVideo {
                record: VideoRecord {
                    video_id: id,
                    activity: a,
                    task_id: task,
                    participant_id: participant_id(part),
                    attempt,
                    duration: stream.len() as f64 / config.geometry.fps,
                },
                stream,
                intervals,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { videos })
}

#[derive(Clone, Debug)]
pub struct CorpusSummary {
    pub records: Vec<VideoRecord>,
    /// Hex SHA-256 of the manifest file.
    pub manifest_hash: String,
    /// Hex SHA-256 over manifest, annotations and every feature file.
    pub content_hash: String,
}

/// Writes `manifest.json`, `annotations.json` and one feature file per video.
pub fn write_corpus(corpus: &Corpus<f64>, out_dir: &Path) -> Result<CorpusSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records = corpus.records();
    let manifest = out_dir.join(MANIFEST_FILE);
    write_manifest(&records, &manifest)?;
    let annotations = out_dir.join(ANNOTATIONS_FILE);
    let ivs: Vec<StruggleIntervals> = corpus.videos.iter().map(|v| v.intervals.clone()).collect();
    write_annotations(&ivs, &annotations)?;

    let manifest_bytes = fs::read(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut content = Sha256::new();
    content.update(&manifest_bytes);
    content.update(fs::read(&annotations).map_err(|e| Error::io(&annotations, e))?);
    for v in &corpus.videos {
        let bytes = encode_feature_stream(&v.stream)?;
        let path = feature_path(out_dir, &v.record.video_id);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        content.update(&bytes);
    }
    Ok(CorpusSummary {
        records,
        manifest_hash: hex::encode(Sha256::digest(&manifest_bytes)),
        content_hash: hex::encode(content.finalize()),
    })
}

pub fn generate_corpus(config: &CorpusConfig, out_dir: &Path) -> Result<CorpusSummary> {
    let corpus = generate_corpus_in_memory(config)?;
    write_corpus(&corpus, out_dir)
}

/// Realized positive-frame fraction per activity.
pub fn realized_proportions(corpus: &Corpus<f64>) -> Result<Vec<(Activity, f64)>> {
    let mut out = Vec::new();
    for a in Activity::ALL {
        let (mut pos, mut total) = (0usize, 0usize);
        for v in corpus.videos.iter().filter(|v| v.record.activity == a) {
            let track = intervals_to_frame_labels(&v.intervals, v.stream.feature_fps, v.stream.len())?
                .track;
            pos += track.labels.iter().filter(|&&l| l == 1).count();
            total += track.len();
        }
        if total > 0 {
            out.push((a, pos as f64 / total as f64));
        }
    }
    Ok(out)
}
