use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::workspace::{assert_disjoint, default_cache_dir, Workspace};
use crate::data::{build_split, Activity, SplitMode, SplitSpec, VideoRecord, MAX_ATTEMPTS};
use crate::error::{Error, Result};
use crate::metrics::{random_baseline_cap, MetricReport};
use crate::model::{ModelConfig, TrainConfig, Variant};
use crate::stream::PredictionTrack;
use crate::synth::splitmix64;

/// Environment variable holding the number of concurrent training jobs.
pub const WORKERS_ENV: &str = "STRUGGLE_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    WithinActivity,
    CombinedAll,
    ActivityLevelGen,
    TaskLevelGen,
    CrossActivityZeroShot,
    AttemptMatrix,
    HorizonAblation,
}

impl Protocol {
    pub const ALL: [Protocol; 7] = [
        Protocol::WithinActivity,
        Protocol::CombinedAll,
        Protocol::ActivityLevelGen,
        Protocol::TaskLevelGen,
        Protocol::CrossActivityZeroShot,
        Protocol::AttemptMatrix,
        Protocol::HorizonAblation,
    ];
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = |x: &str| x.replace(['-', '_'], "").to_ascii_lowercase();
        Protocol::ALL
            .into_iter()
            .find(|p| norm(&p.to_string()) == norm(s))
            .ok_or_else(|| Error::Config(format!("unknown protocol `{s}`")))
    }
}

fn default_true() -> bool {
    true
}

fn default_trials() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub protocol: Protocol,
    pub variants: Vec<Variant>,
    /// Base model; `variant` is replaced per run. Desk scale when absent.
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Anticipation lengths swept by `HorizonAblation`.
    #[serde(default)]
    pub horizons: Vec<usize>,
    /// Restricts the activities considered; all present ones when absent.
    #[serde(default)]
    pub activities: Option<Vec<Activity>>,
    #[serde(default = "default_true")]
    pub participant_disjoint: bool,
    #[serde(default = "default_trials")]
    pub random_trials: usize,
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Checkpoint cache; `<out_dir>/checkpoints` when absent.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl ProtocolSpec {
    pub fn new(protocol: Protocol, corpus_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            protocol,
            variants: vec![Variant::Cmert],
            model: None,
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2],
            horizons: if protocol == Protocol::HorizonAblation {
                vec![6, 12, 18, 24]
            } else {
                Vec::new()
            },
            activities: None,
            participant_disjoint: true,
            random_trials: default_trials(),
            corpus_dir: corpus_dir.into(),
            out_dir: out_dir.into(),
            cache_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("at least one model variant is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.protocol == Protocol::HorizonAblation && self.horizons.is_empty() {
            return Err(Error::Config("HorizonAblation needs a nonempty horizon list".into()));
        }
        if self.random_trials == 0 {
            return Err(Error::Config("random_trials must be positive".into()));
        }
        self.train.validate()?;
        for &v in &self.variants {
            self.model_for(v, None).validate()?;
        }
        Ok(())
    }

    pub fn model_for(&self, variant: Variant, delta: Option<usize>) -> ModelConfig {
        let mut m = self
            .model
            .clone()
            .unwrap_or_else(|| ModelConfig::desk(variant));
        m.variant = variant;
        if let Some(d) = delta {
            m.anticipation_len = d;
        }
        m
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| default_cache_dir(&self.out_dir))
    }

    /// Hash of every field that affects results (paths excluded).
    pub fn config_hash(&self) -> String {
        let mut s = self.clone();
        s.corpus_dir = PathBuf::new();
        s.out_dir = PathBuf::new();
        s.cache_dir = None;
        hex::encode(Sha256::digest(serde_json::to_vec(&s).expect("spec serialises")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub protocol: Protocol,
    pub config_hash: String,
    pub corpus_hash: String,
    /// Hash of the two above; changes iff any input changes.
    pub input_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
}

impl Provenance {
    pub fn new(spec: &ProtocolSpec, corpus_hash: &str) -> Self {
        let config_hash = spec.config_hash();
        let input_hash = hex::encode(Sha256::digest(format!("{config_hash}:{corpus_hash}")));
        Self {
            protocol: spec.protocol,
            config_hash,
            corpus_hash: corpus_hash.to_string(),
            input_hash,
            seeds: spec.seeds.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Heatmap placement of a cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixSlot {
    pub name: String,
    pub row: String,
    pub col: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub id: String,
    pub variant: Variant,
    pub delta: usize,
    pub seed: u64,
    pub train_selector: String,
    pub eval_selector: String,
    pub matrix: Option<MatrixSlot>,
    pub train_videos: usize,
    pub eval_videos: usize,
    pub checkpoint_key: Option<String>,
    pub final_train_loss: Option<f64>,
    pub report: Option<MetricReport>,
    pub random_detection_cap: Option<f64>,
    pub random_anticipation_cap: Option<f64>,
    pub error: Option<String>,
}

impl CellResult {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn detection_cap(&self) -> Option<f64> {
        self.report.as_ref().and_then(|r| r.detection_cap)
    }

    pub fn anticipation_cap(&self) -> Option<f64> {
        self.report.as_ref().and_then(|r| r.anticipation.mean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub spec: ProtocolSpec,
    pub provenance: Provenance,
    pub cells: Vec<CellResult>,
}

impl ProtocolResult {
    pub fn failures(&self) -> Vec<&CellResult> {
        self.cells.iter().filter(|c| c.failed()).collect()
    }
}

/// One requested evaluation before it runs.
#[derive(Clone, Debug)]
pub struct CellPlan {
    pub variant: Variant,
    pub delta: usize,
    pub seed: u64,
    pub train_selector: String,
    pub eval_selector: String,
    pub matrix: Option<MatrixSlot>,
    pub split: Result<(Vec<VideoRecord>, Vec<VideoRecord>), String>,
}

impl CellPlan {
    pub fn id(&self) -> String {
        let clean = |s: &str| s.replace(['/', ' '], "-");
        format!(
            "{}_d{}_s{}_{}__{}",
            self.variant,
            self.delta,
            self.seed,
            clean(&self.train_selector),
            clean(&self.eval_selector)
        )
    }
}

struct Selection {
    train: String,
    eval: String,
    matrix: Option<MatrixSlot>,
    split: Result<(Vec<VideoRecord>, Vec<VideoRecord>), String>,
}

fn split_of(manifest: &[VideoRecord], mode: SplitMode, disjoint: bool) -> Result<(Vec<VideoRecord>, Vec<VideoRecord>), String> {
    build_split(manifest, &SplitSpec::new(mode, disjoint))
        .map(|s| (s.train, s.val))
        .map_err(|e| e.to_string())
}

fn selections(spec: &ProtocolSpec, manifest: &[VideoRecord]) -> Vec<Selection> {
    let activities: Vec<Activity> = Activity::ALL
        .into_iter()
        .filter(|a| spec.activities.as_ref().map_or(true, |l| l.contains(a)))
        .filter(|a| manifest.iter().any(|r| r.activity == *a))
        .collect();
    let manifest: Vec<VideoRecord> = manifest
        .iter()
        .filter(|r| activities.contains(&r.activity))
        .cloned()
        .collect();
    let pd = spec.participant_disjoint;
    let mut out = Vec::new();
    let plain = |train: String, eval: String, split| Selection {
        train,
        eval,
        matrix: None,
        split,
    };
    match spec.protocol {
        Protocol::WithinActivity | Protocol::HorizonAblation => {
            for &a in &activities {
                let split = split_of(&manifest, SplitMode::WithinActivity { activity: a }, pd);
                out.push(plain(a.slug().into(), a.slug().into(), split));
            }
        }
        Protocol::CombinedAll => {
            let split = split_of(&manifest, SplitMode::CombinedAll, pd);
            out.push(plain("all".into(), "all".into(), split.clone()));
            for &a in &activities {
                let sub = split.clone().and_then(|(tr, va)| {
                    let va: Vec<VideoRecord> = va.into_iter().filter(|r| r.activity == a).collect();
                    if va.is_empty() {
                        Err(format!("no held-out {a} videos"))
                    } else {
                        Ok((tr, va))
                    }
                });
                out.push(plain("all".into(), a.slug().into(), sub));
            }
        }
        Protocol::ActivityLevelGen => {
            for &a in &activities {
                let split = split_of(&manifest, SplitMode::LeaveOneActivityOut { activity: a }, pd);
                out.push(plain(format!("all-but-{}", a.slug()), a.slug().into(), split));
            }
        }
        Protocol::TaskLevelGen => {
            for &a in &activities {
                let mut tasks: Vec<u8> = manifest
                    .iter()
                    .filter(|r| r.activity == a)
                    .map(|r| r.task_id)
                    .collect();
                tasks.sort_unstable();
                tasks.dedup();
                for t in tasks {
                    let mode = SplitMode::LeaveOneTaskOut { activity: a, task_id: t };
                    let split = split_of(&manifest, mode, pd);
                    out.push(plain(format!("{}/all-but-t{t}", a.slug()), format!("{}/t{t}", a.slug()), split));
                }
            }
        }
        Protocol::CrossActivityZeroShot => {
            for &tr in &activities {
                for &ev in &activities {
                    let split = split_of(&manifest, SplitMode::CrossActivityZeroShot { train: tr, eval: ev }, pd);
                    out.push(Selection {
                        train: tr.slug().into(),
                        eval: ev.slug().into(),
                        matrix: Some(MatrixSlot {
                            name: "zero_shot".into(),
                            row: tr.slug().into(),
                            col: ev.slug().into(),
                        }),
                        split,
                    });
                }
            }
        }
        Protocol::AttemptMatrix => {
            for &a in &activities {
                let mut tasks: Vec<u8> = manifest
                    .iter()
                    .filter(|r| r.activity == a)
                    .map(|r| r.task_id)
                    .collect();
                tasks.sort_unstable();
                tasks.dedup();
                for t in tasks {
                    let subset: Vec<VideoRecord> = manifest
                        .iter()
                        .filter(|r| r.activity == a && r.task_id == t)
                        .cloned()
                        .collect();
                    let name = format!("{}_t{t}", a.slug());
                    for i in 1..=MAX_ATTEMPTS {
                        for j in 1..=MAX_ATTEMPTS {
                            let mode = SplitMode::AttemptFilter {
                                activity: Some(a),
                                train_attempts: vec![i],
                                eval_attempts: vec![j],
                            };
                            out.push(Selection {
                                train: format!("{}/t{t}/a{i}", a.slug()),
                                eval: format!("{}/t{t}/a{j}", a.slug()),
                                matrix: Some(MatrixSlot {
                                    name: name.clone(),
                                    row: format!("a{i}"),
                                    col: format!("a{j}"),
                                }),
                                split: split_of(&subset, mode, pd),
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Expands a spec into cells in deterministic order.
pub fn plan_cells(spec: &ProtocolSpec, manifest: &[VideoRecord]) -> Vec<CellPlan> {
    let sels = selections(spec, manifest);
    let deltas: Vec<Option<usize>> = if spec.protocol == Protocol::HorizonAblation {
        spec.horizons.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let mut out = Vec::new();
    for &variant in &spec.variants {
        for &d in &deltas {
            let delta = spec.model_for(variant, d).anticipation_len;
            for &seed in &spec.seeds {
                for s in &sels {
                    out.push(CellPlan {
                        variant,
                        delta,
                        seed,
                        train_selector: s.train.clone(),
                        eval_selector: s.eval.clone(),
                        matrix: s.matrix.clone(),
                        split: s.split.clone(),
                    });
                }
            }
        }
    }
    out
}

fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn baseline_seed(selector: &str, delta: usize) -> u64 {
    selector
        .bytes()
        .fold(splitmix64(delta as u64), |h, b| splitmix64(h ^ u64::from(b)))
}

fn random_rows(ws: &Workspace, eval: &[VideoRecord], delta: usize, trials: usize, selector: &str) -> (Option<f64>, Option<f64>) {
    let seed = baseline_seed(selector, delta);
    let det = ws
        .pooled_labels(eval)
        .ok()
        .and_then(|l| random_baseline_cap(&l, trials, seed).ok());
    if delta == 0 {
        return (det, det);
    }
    let per: Vec<f64> = (1..=delta)
        .filter_map(|j| {
            let l = ws.offset_labels(eval, j).ok()?;
            random_baseline_cap(&l, trials, splitmix64(seed ^ j as u64)).ok()
        })
        .collect();
    let ant = (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64);
    (det, ant)
}

/// Trains (or loads) one model per distinct training job and scores every
/// cell; failures are recorded per cell and the run continues.
pub fn run_protocol(spec: &ProtocolSpec) -> Result<ProtocolResult> {
    spec.validate()?;
    let ws = Workspace::load(&spec.corpus_dir)?;
    run_protocol_in(spec, &ws)
}

/// Like [`run_protocol`] with an already loaded corpus.
pub fn run_protocol_in(spec: &ProtocolSpec, ws: &Workspace) -> Result<ProtocolResult> {
    spec.validate()?;
    let plans = plan_cells(spec, &ws.records());
    let cache = spec.cache_dir();

    // group cells sharing a training job, keeping first-seen order
    let mut jobs: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut job_order: Vec<String> = Vec::new();
    for (i, p) in plans.iter().enumerate() {
        let key = match &p.split {
            Ok((train, _)) => {
                let mut tc = spec.train.clone();
                tc.seed = p.seed;
                crate::harness::training_key(&spec.model_for(p.variant, Some(p.delta)), &tc, train, &ws.corpus_hash)
            }
            Err(_) => format!("failed-{i}"),
        };
        if !jobs.contains_key(&key) {
            job_order.push(key.clone());
        }
        jobs.entry(key).or_default().push(i);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<Vec<(usize, CellResult)>> = pool.install(|| {
        job_order
            .par_iter()
            .map(|key| run_job(spec, ws, &plans, &jobs[key], &cache))
            .collect()
    });
    let mut cells: Vec<Option<CellResult>> = vec![None; plans.len()];
    for (i, c) in results.into_iter().flatten() {
        cells[i] = Some(c);
    }
    let cells: Vec<CellResult> = cells.into_iter().map(|c| c.expect("every cell ran")).collect();
    for c in cells.iter().filter(|c| c.failed()) {
        log::warn!("cell {} failed: {}", c.id, c.error.as_deref().unwrap_or(""));
    }
    Ok(ProtocolResult {
        spec: spec.clone(),
        provenance: Provenance::new(spec, &ws.corpus_hash),
        cells,
    })
}

fn run_job(
    spec: &ProtocolSpec,
    ws: &Workspace,
    plans: &[CellPlan],
    members: &[usize],
    cache: &Path,
) -> Vec<(usize, CellResult)> {
    let first = &plans[members[0]];
    let blank = |p: &CellPlan| CellResult {
        id: p.id(),
        variant: p.variant,
        delta: p.delta,
        seed: p.seed,
        train_selector: p.train_selector.clone(),
        eval_selector: p.eval_selector.clone(),
        matrix: p.matrix.clone(),
        train_videos: p.split.as_ref().map_or(0, |s| s.0.len()),
        eval_videos: p.split.as_ref().map_or(0, |s| s.1.len()),
        checkpoint_key: None,
        final_train_loss: None,
        report: None,
        random_detection_cap: None,
        random_anticipation_cap: None,
        error: None,
    };
    let fail = |i: usize, msg: String| {
        let mut c = blank(&plans[i]);
        c.error = Some(msg);
        (i, c)
    };
    let train_records = match &first.split {
        Ok((train, _)) => train.clone(),
        Err(e) => return members.iter().map(|&i| fail(i, e.clone())).collect(),
    };
    let mut tc = spec.train.clone();
    tc.seed = first.seed;
    let model_cfg = spec.model_for(first.variant, Some(first.delta));
    let fitted = match ws.fit(&model_cfg, &tc, &train_records, None, Some(cache)) {
        Ok(f) => f,
        Err(e) => return members.iter().map(|&i| fail(i, format!("training failed: {e}"))).collect(),
    };

    // cells of one job often share validation videos
    let mut tracks: HashMap<String, PredictionTrack> = HashMap::new();
    let mut tracks_for = |eval: &[VideoRecord]| -> Result<Vec<PredictionTrack>> {
        let missing: Vec<VideoRecord> = eval
            .iter()
            .filter(|r| !tracks.contains_key(&r.video_id))
            .cloned()
            .collect();
        for t in ws.predict(&fitted.model, &missing)? {
            tracks.insert(t.video_id.clone(), t);
        }
        Ok(eval.iter().map(|r| tracks[&r.video_id].clone()).collect())
    };

    members
        .iter()
        .map(|&i| {
            let p = &plans[i];
            let (train, eval) = p.split.as_ref().expect("checked above");
            let mut cell = blank(p);
            cell.checkpoint_key = Some(fitted.key.clone());
            cell.final_train_loss = fitted.log.last().map(|l| l.train_loss);
            let scored = assert_disjoint(train, eval)
                .and_then(|()| tracks_for(eval))
                .and_then(|tracks| ws.evaluate(&tracks));
            match scored {
                Ok(report) => {
                    let (rd, ra) = random_rows(ws, eval, p.delta, spec.random_trials, &p.eval_selector);
                    cell.report = Some(report);
                    cell.random_detection_cap = rd;
                    cell.random_anticipation_cap = ra;
                }
                Err(e) => cell.error = Some(e.to_string()),
            }
            (i, cell)
        })
        .collect()
}
