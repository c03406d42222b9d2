use std::fs;
use std::path::Path;

use struggle_core::data::{Activity, VideoRecord};
use struggle_core::harness::{
    emit_report, run_protocol_in, training_key, Protocol, ProtocolSpec, Provenance, Workspace, HEATMAP_DIR,
    PROVENANCE_FILE, RESULT_FILE, SUMMARY_FILE,
};
use struggle_core::model::{ModelConfig, TrainConfig, Variant};
use struggle_core::synth::{generate_corpus_in_memory, CorpusConfig};

fn workspace(seed: u64) -> Workspace {
    let cfg = CorpusConfig {
        video_duration: 40.0,
        attempts: 2,
        master_seed: seed,
        ..CorpusConfig::default()
    };
    Workspace::new(generate_corpus_in_memory(&cfg).unwrap(), format!("corpus-{seed}")).unwrap()
}

fn spec(protocol: Protocol, out: &Path) -> ProtocolSpec {
    let mut s = ProtocolSpec::new(protocol, "corpus", out);
    s.variants = vec![Variant::Lstr];
    s.seeds = vec![0];
    s.train.epochs = 1;
    s.train.warmup_epochs = 0;
    s.activities = Some(vec![Activity::TyingKnots, Activity::Origami]);
    s.random_trials = 3;
    s
}

#[test]
fn provenance_tracks_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = spec(Protocol::WithinActivity, &tmp.path().join("a"));
    let mut moved = a.clone();
    moved.out_dir = tmp.path().join("elsewhere");
    moved.corpus_dir = "other".into();
    assert_eq!(a.config_hash(), moved.config_hash());
    let mut reseeded = a.clone();
    reseeded.seeds = vec![1];
    assert_ne!(a.config_hash(), reseeded.config_hash());
    let mut longer = a.clone();
    longer.train.epochs = 2;
    assert_ne!(a.config_hash(), longer.config_hash());

    let p = Provenance::new(&a, "c1");
    assert_eq!(p, Provenance::new(&moved, "c1"));
    assert_ne!(p.input_hash, Provenance::new(&a, "c2").input_hash);
    assert_ne!(p.input_hash, Provenance::new(&reseeded, "c1").input_hash);
}

#[test]
fn training_key_ignores_record_order() {
    let ws = workspace(0);
    let mut records: Vec<VideoRecord> = ws.records().into_iter().take(5).collect();
    let m = ModelConfig::desk(Variant::Lstr);
    let t = TrainConfig::default();
    let k = training_key(&m, &t, &records, &ws.corpus_hash);
    records.reverse();
    assert_eq!(k, training_key(&m, &t, &records, &ws.corpus_hash));
    assert_ne!(k, training_key(&m, &t, &records[1..], &ws.corpus_hash));
    assert_ne!(k, training_key(&m, &t, &records, "other"));
}

#[test]
fn reruns_are_identical_and_reuse_the_cache() {
    let ws = workspace(1);
    let tmp = tempfile::tempdir().unwrap();
    let s = spec(Protocol::WithinActivity, &tmp.path().join("run"));
    let first = run_protocol_in(&s, &ws).unwrap();
    emit_report(&first, &s.out_dir).unwrap();
    let bytes = fs::read(s.out_dir.join(RESULT_FILE)).unwrap();
    let cached = run_protocol_in(&s, &ws).unwrap();
    emit_report(&cached, &s.out_dir).unwrap();
    assert_eq!(fs::read(s.out_dir.join(RESULT_FILE)).unwrap(), bytes);

    let mut fresh = s.clone();
    fresh.cache_dir = Some(tmp.path().join("cold"));
    let recomputed = run_protocol_in(&fresh, &ws).unwrap();
    assert_eq!(
        serde_json::to_value(&recomputed.cells).unwrap(),
        serde_json::to_value(&first.cells).unwrap()
    );
    assert!(first.failures().is_empty());
    assert!(s.out_dir.join(PROVENANCE_FILE).exists());
    assert!(s.out_dir.join(SUMMARY_FILE).exists());
}

#[test]
fn zero_shot_heatmaps_are_square() {
    let ws = workspace(2);
    let tmp = tempfile::tempdir().unwrap();
    let s = spec(Protocol::CrossActivityZeroShot, tmp.path());
    let result = run_protocol_in(&s, &ws).unwrap();
    assert_eq!(result.cells.len(), 4);
    emit_report(&result, tmp.path()).unwrap();
    let mut files: Vec<_> = fs::read_dir(tmp.path().join(HEATMAP_DIR))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert_eq!(files.len(), 2);
    for f in files {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(&f).unwrap();
        let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 3, "{}", f.display());
        assert!(rows.iter().all(|row| row.len() == 3));
        assert_eq!(&rows[0][1], &rows[1][0]);
    }
}

#[test]
fn every_cell_is_video_disjoint() {
    let ws = workspace(3);
    let tmp = tempfile::tempdir().unwrap();
    for protocol in [Protocol::ActivityLevelGen, Protocol::TaskLevelGen, Protocol::CombinedAll] {
        let mut s = spec(protocol, &tmp.path().join(protocol.to_string()));
        s.activities = None;
        let plans = struggle_core::harness::plan_cells(&s, &ws.records());
        assert!(!plans.is_empty());
        for p in plans {
            let Ok((train, eval)) = &p.split else {
                panic!("{}: split failed", p.id());
            };
            assert!(eval.iter().all(|e| train.iter().all(|t| t.video_id != e.video_id)));
        }
    }
}
