use std::path::Path;
use std::process::{Command, Output};

fn ner(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ner")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

const MODEL: &str = r#"{"architecture": "hiercrf-byte", "embedding_dim": 4, "subtoken_layers": 1, "subtoken_hidden": 4, "sentence_layers": 1, "sentence_hidden": 4, "language_specific_transitions": false}"#;

fn setup(dir: &Path) {
    std::fs::write(dir.join("synth.json"), r#"{"train_sentences": 20, "dev_sentences": 8, "test_sentences": 4}"#).unwrap();
    std::fs::write(dir.join("exp.json"), format!(r#"{{"data": ["data/syncyr"], "training": {{"model": {MODEL}, "max_epochs": 2}}}}"#)).unwrap();
    assert!(ner(&["gen-synth", "--config", "synth.json", "--out", "data"], dir).status.success());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(ner(&["--help"], d).status.code(), Some(0));
    assert_eq!(ner(&["frobnicate"], d).status.code(), Some(1));
    assert_eq!(ner(&["train", "--config", "missing.json"], d).status.code(), Some(1));
    std::fs::write(d.join("tagset.json"), r#"{"entity_types": ["PER"]}"#).unwrap();
    let out = ner(&["eval", "--ckpt", "missing.pnlc", "--data", "eng", "--tagset", "tagset.json"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.json"), format!(r#"{{"data": ["x"], "output": "o", "training": {{"model": {MODEL}}}, "colour": 1}}"#)).unwrap();
    let out = ner(&["train", "--config", "bad.json"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
    std::fs::write(d.join("bad_synth.json"), r#"{"languages": 2}"#).unwrap();
    assert_eq!(ner(&["gen-synth", "--config", "bad_synth.json", "--out", "s"], d).status.code(), Some(1));
}

#[test]
fn eval_flags_unseen_languages() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    assert!(ner(&["train", "--config", "exp.json", "--out", "m"], d).status.success());
    let seen = ner(&["eval", "--ckpt", "m/model.pnlc", "--data", "data/syncyr"], d);
    let unseen = ner(&["eval", "--ckpt", "m/model.pnlc", "--data", "data/syngrk", "--out", "ev"], d);
    assert!(seen.status.success() && unseen.status.success());
    assert!(!String::from_utf8_lossy(&seen.stdout).contains("zero-shot"));
    assert!(String::from_utf8_lossy(&unseen.stdout).contains("zero-shot"));
    assert!(d.join("ev/eval.json").exists() && d.join("ev/run-manifest.json").exists());
}

#[test]
fn bts_encode_then_decode_restores_spans() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    assert!(ner(&["bts-encode", "--data", "data/syncyr", "--window", "120", "--stride", "60", "--out", "enc"], d).status.success());
    let out = ner(&["bts-decode", "--targets", "enc/targets.txt", "--stream", "enc/stream.txt", "--window", "120", "--out", "dec"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let spans = |p: &str| -> Vec<(u64, u64, String)> {
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join(p)).unwrap()).unwrap();
        v.as_array()
            .unwrap()
            .iter()
            .map(|s| (s["start"].as_u64().unwrap(), s["length"].as_u64().unwrap(), s["etype"].as_str().unwrap().to_string()))
            .collect()
    };
    let original = spans("enc/spans.json");
    assert!(!original.is_empty());
    assert_eq!(spans("dec/spans.json"), original);
}
