use std::path::Path;
use std::process::{Command, Output};

use struggle_core::data::{read_manifest, Corpus, MANIFEST_FILE};
use struggle_core::stream::read_tracks;

fn struggle(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_struggle"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

#[test]
fn generated_corpus_loads() {
    let tmp = tempfile::tempdir().unwrap();
    let out = struggle(
        tmp.path(),
        &["gen-data", "--out", "c", "--duration", "30", "--tasks", "1", "--attempts", "1", "--participants", "2"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = read_manifest(&tmp.path().join("c").join(MANIFEST_FILE)).unwrap();
    assert_eq!(records.len(), 4 * 2);
    let corpus: Corpus = Corpus::load(&tmp.path().join("c")).unwrap();
    assert_eq!(corpus.videos.len(), 8);
    assert!(tmp.path().join("c/corpus_config.json").exists());
}

#[test]
fn stream_writes_one_row_per_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert!(struggle(dir, &["gen-data", "--out", "c", "--duration", "30", "--tasks", "1", "--attempts", "2"]).status.success());
    let train = struggle(
        dir,
        &["train", "--corpus", "c", "--out", "m.osck", "--variant", "LSTR", "--epochs", "1", "--delta", "3", "--no-validation"],
    );
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(dir.join("m.log.json").exists());
    let id = &read_manifest(&dir.join("c").join(MANIFEST_FILE)).unwrap()[0].video_id;
    let features = format!("c/features/{id}.osdf");
    assert!(struggle(dir, &["stream", "--model", "m.osck", "--features", &features, "--out", "t.csv"]).status.success());
    let tracks = read_tracks(&dir.join("t.csv")).unwrap();
    assert_eq!(tracks.len(), 1);
    assert_eq!(tracks[0].len(), (30.0f64 * 3.125).round() as usize);
    assert_eq!(tracks[0].anticipation_len(), 3);
    let eval = struggle(dir, &["eval", "--track", "t.csv", "--labels", "c/annotations.json", "--report", "r.json"]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
}

#[test]
fn bad_input_fails_with_code_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = struggle(tmp.path(), &["stream", "--model", "missing.osck", "--features", "x.osdf", "--out", "t.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = struggle(tmp.path(), &["protocol", "--protocol", "no-such-protocol", "--corpus", "c", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_subcommand_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(!struggle(tmp.path(), &["frobnicate"]).status.success());
}
