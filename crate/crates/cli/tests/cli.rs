use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use attrib_cli::manifest::{sha256_file, RunManifest, RunStatus};
use attrib_cli::stages::{DATASET, GENERATED, TRAIN};
use attrib_core::attribution::{save_predictions, PredictionRecord};
use attrib_core::datasets;
use attrib_core::sample::SampleRef;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn attribench(work: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attribench"))
        .arg("--config")
        .arg(fixtures().join("toy.toml"))
        .arg("--work-dir")
        .arg(work)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn pipeline(work: &Path) {
    let out = attribench(work, &["pipeline"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn pipeline_writes_outputs_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let samples = datasets::load(dir.path().join(DATASET)).unwrap();
    assert!(!samples.is_empty());
    for stage in ["ingest", "hop-sample", "generate", "distract", "leak-check", "assemble", "export-train"] {
        let m = RunManifest::load(dir.path(), stage).unwrap();
        assert_eq!(m.status, RunStatus::Ok, "{stage}");
        assert_eq!(m.seed, 7);
        assert_eq!(m.config_hash.len(), 64);
        assert!(!m.outputs.is_empty(), "{stage}");
    }
    let assemble = RunManifest::load(dir.path(), "assemble").unwrap();
    assert_eq!(assemble.outputs[DATASET], sha256_file(&dir.path().join(DATASET)).unwrap());
    assert_eq!(assemble.inputs[GENERATED], sha256_file(&dir.path().join(GENERATED)).unwrap());
    let leaks = std::fs::read_to_string(dir.path().join("leakage.csv")).unwrap();
    assert!(leaks.contains("marren-glacier,t-marren"), "{leaks}");
    assert!(samples.iter().all(|s| !s.source_ids.contains(&"marren-glacier".to_string())));
    assert!(!std::fs::read_dir(dir.path()).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().ends_with(".partial")));
}

#[test]
fn rerunning_a_stage_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let before = (std::fs::read(dir.path().join(DATASET)).unwrap(), std::fs::read(dir.path().join(TRAIN)).unwrap());
    for stage in ["assemble", "export-train"] {
        let out = attribench(dir.path(), &[stage]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let after = (std::fs::read(dir.path().join(DATASET)).unwrap(), std::fs::read(dir.path().join(TRAIN)).unwrap());
    assert_eq!(before, after);
}

#[test]
fn live_http_without_url_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = attribench(dir.path(), &["--mode", "live", "--backend", "http", "pipeline"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("chat_url"), "{}", stderr(&out));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[distractors]\nper_source = 5\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_attribench"))
        .args(["--config", config.to_str().unwrap(), "ingest"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("distractors.per_source"), "{}", stderr(&out));
}

#[test]
fn replay_cache_miss_is_an_endpoint_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = attribench(dir.path(), &["--seed", "12345", "pipeline"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let m = RunManifest::load(dir.path(), "generate").unwrap();
    assert_eq!(m.status, RunStatus::Failed);
    assert!(m.error.unwrap().contains("cache miss"));
    assert!(!dir.path().join(GENERATED).exists());
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = attribench(dir.path(), &["assemble"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("run ingest first"), "{}", stderr(&out));
}

/// Independent scorer: per-example (P, R, F1) with the empty-set rules,
/// macro as means, micro from pooled counts.
fn oracle(items: &[(BTreeSet<SampleRef>, BTreeSet<SampleRef>)]) -> [(f64, f64, f64); 2] {
    let score = |tp: usize, np: usize, ng: usize| match (np, ng) {
        (0, 0) => (1.0, 1.0, 1.0),
        (0, _) | (_, 0) => (0.0, 0.0, 0.0),
        _ => (tp as f64 / np as f64, tp as f64 / ng as f64, 2.0 * tp as f64 / (np + ng) as f64),
    };
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    let mut sums = (0.0, 0.0, 0.0);
    for (pred, gold) in items {
        let t = pred.intersection(gold).count();
        let s = score(t, pred.len(), gold.len());
        sums = (sums.0 + s.0, sums.1 + s.1, sums.2 + s.2);
        tp += t;
        np += pred.len();
        ng += gold.len();
    }
    let n = items.len() as f64;
    [score(tp, np, ng), (sums.0 / n, sums.1 / n, sums.2 / n)]
}

#[test]
fn eval_report_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let samples = datasets::load(dir.path().join(DATASET)).unwrap();
    // A fixed, imperfect predictor: the first gold ref of every third sample is
    // dropped, every fourth sample gains a wrong ref, every fifth is empty.
    let mut items = Vec::new();
    let mut records = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let mut pred: BTreeSet<SampleRef> = s.gold.clone();
        if i % 3 == 0 {
            let first = *pred.iter().next().unwrap();
            pred.remove(&first);
        }
        if i % 4 == 0 {
            let wrong = s.task().refs().find(|r| !s.gold.contains(r));
            pred.extend(wrong);
        }
        if i % 5 == 0 {
            pred.clear();
        }
        records.push(PredictionRecord {
            sample_id: s.id.clone(),
            method: "fixture".into(),
            refs: pred.iter().copied().collect(),
            raw: None,
            unparseable: false,
        });
        items.push((pred, s.gold.clone()));
    }
    let preds = dir.path().join("fixture-preds.jsonl");
    save_predictions(&records, &preds).unwrap();
    let out = attribench(dir.path(), &["eval", "--predictions", preds.to_str().unwrap(), "--name", "toy"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let [micro, macro_] = oracle(&items);
    let pct = |v: f64| format!("{:.1}", 100.0 * v);
    let row = |mode: &str, (p, r, f): (f64, f64, f64)| {
        format!("fixture,toy,{mode},{},{},{},{},0", pct(p), pct(r), pct(f), items.len())
    };
    assert!(csv.contains(&row("micro", micro)), "{csv}\nwant {}", row("micro", micro));
    assert!(csv.contains(&row("macro", macro_)), "{csv}\nwant {}", row("macro", macro_));

    let out = attribench(dir.path(), &["report"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("fixture"));
}

#[test]
fn eval_with_foreign_predictions_fails_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let preds = dir.path().join("bad.jsonl");
    let rec = PredictionRecord { sample_id: "nope".into(), method: "m".into(), refs: vec![], raw: None, unparseable: false };
    save_predictions(&[rec], &preds).unwrap();
    let out = attribench(dir.path(), &["eval", "--predictions", preds.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn configured_methods_attribute_from_the_cassette() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let n = datasets::load(dir.path().join(DATASET)).unwrap().len();
    for method in ["random", "zero-shot", "encoder", "ensemble"] {
        let out = attribench(dir.path(), &["attribute", "--method", method]);
        assert_eq!(code(&out), 0, "{method}: {}", stderr(&out));
        let preds = attrib_core::attribution::load_predictions(dir.path().join(format!("predictions-{method}.jsonl"))).unwrap();
        assert_eq!(preds.len(), n);
        assert!(preds.iter().all(|p| p.method == method));
    }
    let out = attribench(dir.path(), &["attribute", "--method", "missing"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn rephrase_covers_every_turn_with_history() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    let out = attribench(dir.path(), &["rephrase"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let samples = datasets::load(dir.path().join(DATASET)).unwrap();
    let with_history = samples.iter().filter(|s| s.qa.dialogue_history.as_ref().is_some_and(|h| !h.is_empty())).count();
    let lines = std::fs::read_to_string(dir.path().join("rephrased.jsonl")).unwrap().lines().count();
    assert!(with_history > 0);
    assert_eq!(lines, with_history);
}

#[test]
fn help_lists_subcommands_and_exit_codes() {
    let out = Command::new(env!("CARGO_BIN_EXE_attribench")).arg("--help").output().unwrap();
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["ingest", "hop-sample", "generate", "distract", "leak-check", "assemble", "export-train", "rephrase", "attribute", "eval", "report", "study-serve", "pipeline"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    assert!(text.contains("3 endpoint failure"));
}
