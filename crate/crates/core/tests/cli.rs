use std::path::Path;
use std::process::{Command, Output};

fn provgen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_provgen"))
        .arg("--dir")
        .arg(dir)
        .args(args)
        .env("PROVGEN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = provgen(dir, args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Small corpus and model through the fingerprint stage.
fn small_pipeline(dir: &Path, seed: &str) {
    ok(dir, &["gen-corpus", "--seed", seed, "--files", "12", "--planted", "3", "--test-files", "6"]);
    ok(dir, &["build-vocab"]);
    ok(
        dir,
        &[
            "train", "--steps", "40", "--seed", seed, "--layers", "1", "--d-model", "16", "--heads", "2", "--d-ff",
            "32", "--max-pos", "64", "--seq-len", "32",
        ],
    );
    ok(dir, &["profile", "--limit", "200"]);
    ok(dir, &["select", "--f", "8"]);
    ok(dir, &["fingerprint"]);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(provgen(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(provgen(dir.path(), &["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(provgen(dir.path(), &["select", "--strategy", "best"]).status.code(), Some(2));
    assert_eq!(provgen(dir.path(), &["query"]).status.code(), Some(2));
    let out = provgen(dir.path(), &["nope"]);
    assert!(!out.stderr.is_empty());
    assert_eq!(provgen(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = provgen(dir.path(), &["build-vocab"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus.jsonl"));
}

#[test]
fn query_finds_own_training_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_pipeline(d, "4");
    let corpus = std::fs::read_to_string(d.join("corpus.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(corpus.lines().nth(3).unwrap()).unwrap();
    let text = first["text"].as_str().unwrap();
    let head: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
    let prefix = d.join("prefix.py");
    std::fs::write(&prefix, &head).unwrap();

    let out = ok(d, &["query", "--prefix-file", prefix.to_str().unwrap(), "--json", "--k", "5", "--beam", "2"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 5);
    assert_eq!(results[0]["rank"], 1);
    assert_eq!(results[0]["distance"].as_f64(), Some(0.0));
    let own = (first["example_id"].as_u64().unwrap() << 20) + 3;
    assert!(results
        .iter()
        .any(|r| r["pair_id"].as_u64() == Some(own) && r["distance"].as_f64() == Some(0.0)));
    assert!(v["generated"].is_string());

    let text_out = ok(d, &["query", "--prefix-file", prefix.to_str().unwrap(), "--beam", "2"]);
    assert!(text_out.starts_with("generated: "));
    assert!(text_out.contains("#1   distance 0.000000"));
}

#[test]
fn query_rejects_foreign_selection() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_pipeline(d, "5");
    ok(d, &["select", "--strategy", "random", "--f", "8", "--seed", "9"]);
    let prefix = d.join("p.py");
    std::fs::write(&prefix, "x = 1\n").unwrap();
    let out = provgen(d, &["query", "--prefix-file", prefix.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("selection hash"));
}

#[test]
fn stages_after_fingerprint_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_pipeline(d, "6");
    ok(d, &["recitations", "--beam", "2"]);
    assert!(d.join("cases.jsonl").exists());
    // an untrained model rarely recites, so score a case built from a training prefix
    let vocab = provgen::tokenizer::Vocab::load(d.join("vocab.json")).unwrap();
    let corpus = provgen::pairing::read_corpus(d.join("corpus.jsonl")).unwrap();
    let head: String = corpus[0].text.lines().take(3).map(|l| format!("{l}\n")).collect();
    let case = provgen::recitation::RecitationCase {
        test_prefix: vocab.encode(&head),
        prefix_text: head,
        predicted_line: corpus[0].lines()[3].to_string(),
        matched_line: corpus[0].lines()[3].to_string(),
        edit_distance: 0,
        occurrences: 1,
        ground_truth_pair_ids: vec![(corpus[0].example_id << 20) + 3],
    };
    provgen::recitation::write_cases(d.join("cases.jsonl"), &[case]).unwrap();
    let eval = ok(d, &["evaluate", "--ks", "1,5,10"]);
    assert!(eval.contains("Acc@10: 100.00%"));
    let table = ok(d, &["compare", "--f", "8", "--seeds", "1,2"]);
    let labels: Vec<&str> = table.lines().skip(2).map(|l| l.split('|').next().unwrap().trim()).collect();
    assert_eq!(labels, vec!["HighVariance", "Random", "Maximum", "Minimum", "FFN"]);
    std::fs::write(d.join("cases.jsonl"), "").unwrap();
    assert_eq!(provgen(d, &["evaluate"]).status.code(), Some(1));
    let bench = ok(d, &["bench", "--beam", "2"]);
    assert!(bench.contains("retrieval mean"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("bench.json")).unwrap()).unwrap();
    assert!(report["retrieval_mean_ms"].as_f64().unwrap() > 0.0);
    assert_eq!(provgen(d, &["bench", "--iters", "10"]).status.code(), Some(1));
}
