use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};

use super::{
    intervals_to_frame_labels, read_feature_stream, FeatureStream, StruggleIntervals, VideoRecord,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const FEATURES_DIR: &str = "features";
pub const FEATURE_EXT: &str = "osdf";

/// Video id to episode list, in seconds.
pub type Annotations = BTreeMap<String, Vec<(f64, f64)>>;

pub fn write_json<V: Serialize + ?Sized>(value: &V, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<V: DeserializeOwned>(path: &Path) -> Result<V> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_manifest(records: &[VideoRecord], path: &Path) -> Result<()> {
    write_json(records, path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<VideoRecord>> {
    let records: Vec<VideoRecord> = read_json(path)?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

pub fn write_annotations(intervals: &[StruggleIntervals], path: &Path) -> Result<()> {
    let map: Annotations = intervals
        .iter()
        .map(|iv| (iv.video_id.clone(), iv.episodes.clone()))
        .collect();
    write_json(&map, path)
}

pub fn read_annotations(path: &Path) -> Result<Vec<StruggleIntervals>> {
    let map: Annotations = read_json(path)?;
    map.into_iter()
        .map(|(id, eps)| StruggleIntervals::new(id, eps))
        .collect()
}

pub fn feature_path(corpus_dir: &Path, video_id: &str) -> PathBuf {
    corpus_dir
        .join(FEATURES_DIR)
        .join(format!("{video_id}.{FEATURE_EXT}"))
}

/// Hex SHA-256 over the manifest, the annotations and every feature file in
/// manifest order.
pub fn corpus_fingerprint(dir: &Path) -> Result<String> {
    let read = |p: PathBuf| fs::read(&p).map_err(|e| Error::io(&p, e));
    let manifest = dir.join(MANIFEST_FILE);
    let records = read_manifest(&manifest)?;
    let mut h = Sha256::new();
    h.update(read(manifest)?);
    h.update(read(dir.join(ANNOTATIONS_FILE))?);
    for r in &records {
        h.update(read(feature_path(dir, &r.video_id))?);
    }
    Ok(hex::encode(h.finalize()))
}

/// One annotated video loaded into memory.
#[derive(Clone, Debug)]
pub struct LabeledVideo<T = f64> {
    pub record: VideoRecord,
    pub stream: FeatureStream<T>,
    pub intervals: StruggleIntervals,
}

impl<T: Scalar> LabeledVideo<T> {
    /// Per-frame labels aligned with the feature stream.
    pub fn frame_labels(&self) -> Result<Vec<u8>> {
        Ok(intervals_to_frame_labels(&self.intervals, self.stream.feature_fps, self.stream.len())?
            .track
            .labels)
    }
}

/// A corpus directory: `manifest.json`, `annotations.json` and `features/<id>.osdf`.
#[derive(Clone, Debug)]
pub struct Corpus<T = f64> {
    pub videos: Vec<LabeledVideo<T>>,
}

impl<T: Scalar> Corpus<T> {
    pub fn load(dir: &Path) -> Result<Self> {
        let records = read_manifest(&dir.join(MANIFEST_FILE))?;
        let mut annotations: BTreeMap<String, StruggleIntervals> =
            read_annotations(&dir.join(ANNOTATIONS_FILE))?
                .into_iter()
                .map(|iv| (iv.video_id.clone(), iv))
                .collect();
        let videos = records
            .into_iter()
            .map(|record| {
                let stream = read_feature_stream(&feature_path(dir, &record.video_id))?;
                let intervals = annotations
                    .remove(&record.video_id)
                    .unwrap_or(StruggleIntervals {
                        video_id: record.video_id.clone(),
                        episodes: Vec::new(),
                    });
                Ok(LabeledVideo {
                    record,
                    stream,
                    intervals,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { videos })
    }

    pub fn records(&self) -> Vec<VideoRecord> {
        self.videos.iter().map(|v| v.record.clone()).collect()
    }

    pub fn get(&self, video_id: &str) -> Option<&LabeledVideo<T>> {
        self.videos.iter().find(|v| v.record.video_id == video_id)
    }

    /// Videos with the given ids, in manifest order.
    pub fn select(&self, records: &[VideoRecord]) -> Vec<&LabeledVideo<T>> {
        let wanted: std::collections::HashSet<&str> =
            records.iter().map(|r| r.video_id.as_str()).collect();
        self.videos
            .iter()
            .filter(|v| wanted.contains(v.record.video_id.as_str()))
            .collect()
    }
}
