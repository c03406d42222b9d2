//! Command-line surface of the `struggle` binary.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::data::{
    build_split, intervals_to_frame_labels, read_annotations, read_feature_stream, read_json,
    write_json, Activity, SplitMode, SplitSpec,
};
use crate::harness::{emit_report, run_protocol, Protocol, ProtocolResult, ProtocolSpec, Workspace, RESULT_FILE};
use crate::metrics::{evaluate, EvalOptions};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, TrainConfig, Variant};
use crate::stream::{profile, read_tracks, run_stream, write_tracks, StreamEngine};
use crate::synth::{generate_corpus, CorpusConfig};

#[derive(Debug, Parser)]
#[command(name = "struggle", version, about = "Online struggle detection and anticipation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus directory.
    GenData(GenDataArgs),
    /// Train a model on a corpus split and write a checkpoint.
    Train(TrainArgs),
    /// Stream one feature file through a checkpoint and write a track CSV.
    Stream(StreamArgs),
    /// Score a track CSV against annotations.
    Eval(EvalArgs),
    /// Run an experiment protocol and write its report.
    Protocol(ProtocolArgs),
    /// Measure per-step streaming latency.
    Profile(ProfileArgs),
    /// Re-emit report files from a run directory's result.json.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus config JSON; built-in defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Video length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub tasks: Option<u8>,
    #[arg(long)]
    pub participants: Option<usize>,
    #[arg(long)]
    pub attempts: Option<u8>,
    /// Signal strength for every activity.
    #[arg(long)]
    pub signal: Option<f64>,
    /// Noise scale for every activity.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "CMERT")]
    pub variant: Variant,
    /// Model config JSON (replaces the desk defaults).
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Training config JSON.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// `combined`, `within:<act>`, `loao:<act>`, `loto:<act>:<task>`,
    /// `zero-shot:<train>:<eval>` or `attempts:<act|all>:<i,..>:<j,..>`.
    #[arg(long, default_value = "combined")]
    pub split: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Anticipation length in frames.
    #[arg(long)]
    pub delta: Option<usize>,
    /// Skip the per-epoch validation cAP.
    #[arg(long)]
    pub no_validation: bool,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub track: PathBuf,
    /// Annotations JSON (video id to episodes in seconds).
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 3.125)]
    pub fps: f64,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    /// Protocol spec JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub protocol: Option<String>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<Variant>>,
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding result.json.
    #[arg(long)]
    pub run: PathBuf,
    /// Output directory; the run directory when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Some protocol cells failed.
    Partial,
}

fn parse_activity(s: &str) -> anyhow::Result<Activity> {
    Ok(s.parse()?)
}

fn parse_attempts(s: &str) -> anyhow::Result<Vec<u8>> {
    s.split(',')
        .map(|a| a.trim().parse::<u8>().with_context(|| format!("bad attempt `{a}`")))
        .collect()
}

/// Parses the `--split` syntax of `train`.
pub fn parse_split(s: &str) -> anyhow::Result<SplitMode> {
    let parts: Vec<&str> = s.split(':').collect();
    Ok(match parts.as_slice() {
        ["combined"] => SplitMode::CombinedAll,
        ["within", a] => SplitMode::WithinActivity {
            activity: parse_activity(a)?,
        },
        ["loao", a] => SplitMode::LeaveOneActivityOut {
            activity: parse_activity(a)?,
        },
        ["loto", a, t] => SplitMode::LeaveOneTaskOut {
            activity: parse_activity(a)?,
            task_id: t.parse().context("bad task id")?,
        },
        ["zero-shot", tr, ev] => SplitMode::CrossActivityZeroShot {
            train: parse_activity(tr)?,
            eval: parse_activity(ev)?,
        },
        ["attempts", a, tr, ev] => SplitMode::AttemptFilter {
            activity: if *a == "all" { None } else { Some(parse_activity(a)?) },
            train_attempts: parse_attempts(tr)?,
            eval_attempts: parse_attempts(ev)?,
        },
        _ => bail!("unrecognised split `{s}`"),
    })
}

fn gen_data(a: &GenDataArgs) -> anyhow::Result<Status> {
    let mut cfg: CorpusConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => CorpusConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(d) = a.duration {
        cfg.video_duration = d;
    }
    if let Some(t) = a.tasks {
        cfg.tasks_per_activity = t;
    }
    if let Some(p) = a.participants {
        cfg.participants = p;
    }
    if let Some(n) = a.attempts {
        cfg.attempts = n;
    }
    for p in &mut cfg.profiles {
        if let Some(s) = a.signal {
            p.signal_strength = s;
        }
        if let Some(n) = a.noise {
            p.noise_scale = n;
        }
    }
    let summary = generate_corpus(&cfg, &a.out)?;
    write_json(&cfg, &a.out.join("corpus_config.json"))?;
    println!("{} videos, content sha256 {}", summary.records.len(), summary.content_hash);
    Ok(Status::Ok)
}

fn train_cmd(a: &TrainArgs) -> anyhow::Result<Status> {
    let mut model: ModelConfig = match &a.model_config {
        Some(p) => read_json(p)?,
        None => ModelConfig::desk(a.variant),
    };
    model.variant = a.variant;
    if let Some(d) = a.delta {
        model.anticipation_len = d;
    }
    let mut tc: TrainConfig = match &a.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        tc.seed = s;
    }
    if let Some(e) = a.epochs {
        tc.epochs = e;
        tc.warmup_epochs = tc.warmup_epochs.min(e.saturating_sub(1));
    }
    let ws = Workspace::load(&a.corpus)?;
    let split = build_split(&ws.records(), &SplitSpec::new(parse_split(&a.split)?, true))?;
    let val = (!a.no_validation).then_some(split.val.as_slice());
    let fitted = ws.fit(&model, &tc, &split.train, val, None)?;
    save_checkpoint(&fitted.model, &a.out)?;
    let log_path = a.out.with_extension("log.json");
    write_json(&fitted.log, &log_path)?;
    for l in &fitted.log {
        let cap = l.val_cap.map_or("-".into(), |c| format!("{c:.4}"));
        println!("epoch {} lr {:.3e} loss {:.6} val cAP {cap}", l.epoch, l.lr, l.train_loss);
    }
    println!("wrote {} (key {})", a.out.display(), fitted.key);
    Ok(Status::Ok)
}

fn stream_cmd(a: &StreamArgs) -> anyhow::Result<Status> {
    let model = load_checkpoint::<f64>(&a.model)?;
    let stream = read_feature_stream::<f64>(&a.features)?;
    let mut engine = StreamEngine::new(Arc::new(model));
    let track = run_stream(&mut engine, &stream)?;
    write_tracks(std::slice::from_ref(&track), &a.out)?;
    println!("{} frames -> {}", track.len(), a.out.display());
    Ok(Status::Ok)
}

fn eval_cmd(a: &EvalArgs) -> anyhow::Result<Status> {
    let tracks = read_tracks(&a.track)?;
    let annotations = read_annotations(&a.labels)?;
    let mut labels = Vec::with_capacity(tracks.len());
    for t in &tracks {
        let iv = annotations
            .iter()
            .find(|iv| iv.video_id == t.video_id)
            .with_context(|| format!("no annotations for {}", t.video_id))?;
        labels.push(intervals_to_frame_labels(iv, a.fps, t.len())?.track.labels);
    }
    let pairs: Vec<_> = tracks.iter().zip(labels.iter().map(Vec::as_slice)).collect();
    let report = evaluate(&pairs, &EvalOptions::new(a.fps))?;
    write_json(&report, &a.report)?;
    println!(
        "detection cAP {} | anticipation cAP {} | event F1 {:.4}",
        report.detection_cap.map_or("undefined".into(), |v| format!("{v:.4}")),
        report.anticipation.mean.map_or("undefined".into(), |v| format!("{v:.4}")),
        report.event_f1.mean
    );
    Ok(Status::Ok)
}

/// Builds the protocol spec from a config file plus flag overrides.
pub fn protocol_spec(a: &ProtocolArgs) -> anyhow::Result<ProtocolSpec> {
    let mut spec: ProtocolSpec = match &a.config {
        Some(p) => read_json(p)?,
        None => {
            let (Some(p), Some(c), Some(o)) = (&a.protocol, &a.corpus, &a.out) else {
                bail!("without --config, --protocol, --corpus and --out are required");
            };
            ProtocolSpec::new(p.parse::<Protocol>()?, c, o)
        }
    };
    if let Some(p) = &a.protocol {
        let p: Protocol = p.parse()?;
        if p == Protocol::HorizonAblation && spec.horizons.is_empty() {
            spec.horizons = vec![6, 12, 18, 24];
        }
        spec.protocol = p;
    }
    if let Some(c) = &a.corpus {
        spec.corpus_dir = c.clone();
    }
    if let Some(o) = &a.out {
        spec.out_dir = o.clone();
    }
    if let Some(s) = &a.seeds {
        spec.seeds = s.clone();
    }
    if let Some(v) = &a.variants {
        spec.variants = v.clone();
    }
    if let Some(h) = &a.horizons {
        spec.horizons = h.clone();
    }
    if let Some(e) = a.epochs {
        spec.train.epochs = e;
        spec.train.warmup_epochs = spec.train.warmup_epochs.min(e.saturating_sub(1));
    }
    if let Some(c) = &a.cache {
        spec.cache_dir = Some(c.clone());
    }
    Ok(spec)
}

fn report_status(result: &ProtocolResult) -> Status {
    let failures = result.failures();
    if failures.is_empty() {
        return Status::Ok;
    }
    eprintln!("{} of {} cells failed:", failures.len(), result.cells.len());
    for c in failures {
        eprintln!("  {}: {}", c.id, c.error.as_deref().unwrap_or(""));
    }
    Status::Partial
}

fn protocol_cmd(a: &ProtocolArgs) -> anyhow::Result<Status> {
    let spec = protocol_spec(a)?;
    let result = run_protocol(&spec)?;
    let written = emit_report(&result, &spec.out_dir)?;
    println!(
        "{} cells, {} files under {}",
        result.cells.len(),
        written.len(),
        spec.out_dir.display()
    );
    Ok(report_status(&result))
}

fn profile_cmd(a: &ProfileArgs) -> anyhow::Result<Status> {
    let model = load_checkpoint::<f64>(&a.model)?;
    let stream = read_feature_stream::<f64>(&a.features)?;
    let mut engine = StreamEngine::new(Arc::new(model));
    let r = profile(&mut engine, &stream, a.warmup)?;
    println!(
        "{} steps: mean {:.3} ms, median {:.3} ms, p95 {:.3} ms, {:.1} steps/s, {} params, {} MACs/step",
        r.steps, r.mean_ms, r.median_ms, r.p95_ms, r.steps_per_second, r.parameter_count, r.macs_per_step
    );
    if let Some(out) = &a.out {
        write_json(&r, out)?;
    }
    Ok(Status::Ok)
}

fn report_cmd(a: &ReportArgs) -> anyhow::Result<Status> {
    let result: ProtocolResult = read_json(&a.run.join(RESULT_FILE))?;
    let out = a.out.as_deref().unwrap_or(&a.run);
    let written = emit_report(&result, out)?;
    println!("{} files under {}", written.len(), out.display());
    Ok(report_status(&result))
}

pub fn run(cli: &Cli) -> anyhow::Result<Status> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Stream(a) => stream_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Protocol(a) => protocol_cmd(a),
        Command::Profile(a) => profile_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_syntax() {
        assert_eq!(parse_split("combined").unwrap(), SplitMode::CombinedAll);
        assert_eq!(
            parse_split("loto:origami:2").unwrap(),
            SplitMode::LeaveOneTaskOut {
                activity: Activity::Origami,
                task_id: 2
            }
        );
        assert_eq!(
            parse_split("attempts:all:1,2:5").unwrap(),
            SplitMode::AttemptFilter {
                activity: None,
                train_attempts: vec![1, 2],
                eval_attempts: vec![5]
            }
        );
        assert!(parse_split("nope").is_err());
        assert!(parse_split("within:cooking").is_err());
    }

    #[test]
    fn protocol_flags_override_config() {
        let cli = Cli::try_parse_from([
            "struggle", "protocol", "--protocol", "horizon-ablation", "--corpus", "c", "--out", "o",
            "--seeds", "4,5", "--epochs", "2",
        ])
        .unwrap();
        let Command::Protocol(a) = &cli.command else { panic!() };
        let spec = protocol_spec(a).unwrap();
        assert_eq!(spec.protocol, Protocol::HorizonAblation);
        assert_eq!(spec.seeds, vec![4, 5]);
        assert_eq!(spec.horizons, vec![6, 12, 18, 24]);
        assert_eq!((spec.train.epochs, spec.train.warmup_epochs), (2, 1));
    }
}
