use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{corpus_fingerprint, read_json, write_json, Corpus, LabeledVideo, VideoRecord};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalOptions, MetricReport};
use crate::model::{
    load_checkpoint, save_checkpoint, train, EpochLog, Model, ModelConfig, TrainConfig, TrainingVideo,
    Validator,
};
use crate::stream::{batch_evaluate, run_stream, PredictionTrack, StreamEngine};

/// A loaded corpus with its frame labels and content hash.
pub struct Workspace {
    pub corpus: Corpus<f64>,
    labels: BTreeMap<String, Vec<u8>>,
    pub corpus_hash: String,
}

/// A trained (or cache-loaded) model.
pub struct Fitted {
    pub model: Arc<Model<f64>>,
    /// Cache key of the training job.
    pub key: String,
    pub log: Vec<EpochLog>,
    pub from_cache: bool,
}

#[derive(Serialize)]
struct JobIdentity<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    train_ids: Vec<&'a str>,
    corpus_hash: &'a str,
}

/// Stable hash of everything that determines a trained model.
pub fn training_key(
    model: &ModelConfig,
    train: &TrainConfig,
    train_records: &[VideoRecord],
    corpus_hash: &str,
) -> String {
    let mut train_ids: Vec<&str> = train_records.iter().map(|r| r.video_id.as_str()).collect();
    train_ids.sort_unstable();
    let id = JobIdentity {
        model,
        train,
        train_ids,
        corpus_hash,
    };
    let json = serde_json::to_vec(&id).expect("identity serialises");
    hex::encode(Sha256::digest(json))
}

impl Workspace {
    pub fn load(dir: &Path) -> Result<Self> {
        let corpus = Corpus::load(dir)?;
        let hash = corpus_fingerprint(dir)?;
        Self::new(corpus, hash)
    }

    pub fn new(corpus: Corpus<f64>, corpus_hash: String) -> Result<Self> {
        let labels = corpus
            .videos
            .iter()
            .map(|v| Ok((v.record.video_id.clone(), v.frame_labels()?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            corpus,
            labels,
            corpus_hash,
        })
    }

    pub fn records(&self) -> Vec<VideoRecord> {
        self.corpus.records()
    }

    pub fn labels(&self, video_id: &str) -> Result<&[u8]> {
        self.labels
            .get(video_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Data(format!("unknown video {video_id}")))
    }

    fn video(&self, video_id: &str) -> Result<&LabeledVideo<f64>> {
        self.corpus
            .get(video_id)
            .ok_or_else(|| Error::Data(format!("unknown video {video_id}")))
    }

    /// Trains on `train_records`, reusing `cache_dir/<key>.osck` when present.
    /// With `validate_on`, each epoch logs detection cAP on those videos.
    pub fn fit(
        &self,
        model_config: &ModelConfig,
        train_config: &TrainConfig,
        train_records: &[VideoRecord],
        validate_on: Option<&[VideoRecord]>,
        cache_dir: Option<&Path>,
    ) -> Result<Fitted> {
        let key = training_key(model_config, train_config, train_records, &self.corpus_hash);
        let paths = cache_dir.map(|d| (d.join(format!("{key}.osck")), d.join(format!("{key}.log.json"))));
        if let Some((ckpt, log_path)) = &paths {
            if ckpt.exists() && log_path.exists() {
                let model: Model<f64> = load_checkpoint(ckpt)?;
                if model.config() == model_config {
                    log::info!("reusing checkpoint {}", ckpt.display());
                    return Ok(Fitted {
                        model: Arc::new(model),
                        key,
                        log: read_json(log_path)?,
                        from_cache: true,
                    });
                }
            }
        }
        let videos = train_records
            .iter()
            .map(|r| {
                Ok(TrainingVideo {
                    frames: &self.video(&r.video_id)?.stream.frames,
                    labels: self.labels(&r.video_id)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let validator = |m: &Model<f64>| -> Result<f64> {
            let val = validate_on.unwrap_or_default();
            let tracks = val
                .par_iter()
                .map(|r| batch_evaluate(m, &self.video(&r.video_id)?.stream))
                .collect::<Result<Vec<_>>>()?;
            let report = self.evaluate(&tracks)?;
            report
                .detection_cap
                .ok_or_else(|| Error::MetricUndefined("validation set has a single class".into()))
        };
        let validator: Option<&Validator<'_, f64>> = validate_on.map(|_| &validator as _);
        let outcome = train(model_config, train_config, &videos, validator, None)?;
        if let Some((ckpt, log_path)) = &paths {
            save_checkpoint(&outcome.model, ckpt)?;
            write_json(&outcome.log, log_path)?;
        }
        Ok(Fitted {
            model: Arc::new(outcome.model),
            key,
            log: outcome.log,
            from_cache: false,
        })
    }

    /// Streams each video through its own engine.
    pub fn predict(&self, model: &Arc<Model<f64>>, records: &[VideoRecord]) -> Result<Vec<PredictionTrack>> {
        records
            .par_iter()
            .map(|r| {
                let mut engine = StreamEngine::new(Arc::clone(model));
                run_stream(&mut engine, &self.video(&r.video_id)?.stream)
            })
            .collect()
    }

    pub fn evaluate(&self, tracks: &[PredictionTrack]) -> Result<MetricReport> {
        let first = tracks
            .first()
            .ok_or_else(|| Error::Data("nothing to evaluate".into()))?;
        let fps = self.video(&first.video_id)?.stream.feature_fps;
        let pairs = tracks
            .iter()
            .map(|t| Ok((t, self.labels(&t.video_id)?)))
            .collect::<Result<Vec<_>>>()?;
        evaluate(&pairs, &EvalOptions::new(fps))
    }

    /// Labels of the given videos concatenated in order.
    pub fn pooled_labels(&self, records: &[VideoRecord]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for r in records {
            out.extend_from_slice(self.labels(&r.video_id)?);
        }
        Ok(out)
    }

    /// Labels at `t + j` for every `t` with `t + j` inside the stream.
    pub fn offset_labels(&self, records: &[VideoRecord], j: usize) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for r in records {
            let l = self.labels(&r.video_id)?;
            out.extend_from_slice(&l[j.min(l.len())..]);
        }
        Ok(out)
    }
}

pub(crate) fn assert_disjoint(train: &[VideoRecord], eval: &[VideoRecord]) -> Result<()> {
    let ids: HashSet<&str> = train.iter().map(|r| r.video_id.as_str()).collect();
    match eval.iter().find(|r| ids.contains(r.video_id.as_str())) {
        Some(r) => Err(Error::Split(format!("{} is in both train and eval", r.video_id))),
        None => Ok(()),
    }
}

pub(crate) fn default_cache_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("checkpoints")
}
