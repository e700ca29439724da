use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn segrel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segrel")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = segrel(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Runs a failing command and returns its exit code and stderr.
fn fails(args: &[&str]) -> (i32, String) {
    let out = segrel(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    (out.status.code().expect("exit code"), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn records(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy_kv.jsonl")
}

#[test]
fn transform_of_one_tuple() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    fs::write(&input, r#"{"id":"c1","tuples":[["Clyde F.C","ground","Broadwood Stadium"]],"target":"Clyde F.C play at Broadwood Stadium."}"#)
        .unwrap();
    let output = dir.path().join("out.jsonl");
    let summary: Value =
        serde_json::from_str(&ok(&["transform", "--input", p(&input), "--output", p(&output)])).unwrap();
    assert_eq!(summary["preset"], "webnlg");
    let r = &records(&output)[0];
    let segments = r["segments"].as_array().unwrap();
    assert_eq!(segments.iter().filter(|s| s["role"] == "source").count(), 3);
    assert_eq!(segments.iter().filter(|s| s["role"] == "target").count(), 1);
    assert_eq!(segments[3]["text"], "ground");
    assert_eq!(r["tuples"].as_array().unwrap().len(), 2);
    assert_eq!(r["id"], "c1");
}

#[test]
fn transform_of_two_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    fs::write(&input, r#"{"pairs":[["name","Loch Fyne"],["food","French"]],"target":"Loch Fyne serves French food."}"#)
        .unwrap();
    let output = dir.path().join("out.jsonl");
    ok(&["transform", "--input", p(&input), "--output", p(&output)]);
    let r = &records(&output)[0];
    let segments = r["segments"].as_array().unwrap();
    let types: Vec<&str> = segments.iter().map(|s| s["type"].as_str().unwrap()).collect();
    assert_eq!(types, ["key", "value", "key", "value", "target"]);
    assert_eq!(r["preset"], "key-value");
    assert_eq!(r["pairs"], serde_json::json!([[0, 1], [2, 3]]));
    assert_eq!(r["id"], "1");
}

#[test]
fn transform_counts_match_an_independent_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    let (mut want_segments, mut want_tuples) = (0, 0);
    let mut text = String::new();
    for i in 0..100 {
        let m = rng.random_range(1..=6);
        let tuples: Vec<[String; 3]> = (0..m)
            .map(|_| {
                let head = format!("entity {}", rng.random_range(0..5));
                let tail = format!("entity {}", rng.random_range(0..5));
                [head, format!("rel{}", rng.random_range(0..3)), tail]
            })
            .collect();
        let entities: BTreeSet<&String> = tuples.iter().flat_map(|t| [&t[0], &t[2]]).collect();
        want_segments += entities.len() + m + 1;
        want_tuples += 2 * m;
        text += &serde_json::json!({"id": format!("g{i}"), "tuples": tuples, "target": "t"}).to_string();
        text.push('\n');
    }
    fs::write(&input, text).unwrap();
    let output = dir.path().join("out.jsonl");
    let summary: Value =
        serde_json::from_str(&ok(&["transform", "--input", p(&input), "--output", p(&output)])).unwrap();
    assert_eq!(summary["records"], 100);
    assert_eq!(summary["segments"], want_segments);
    assert_eq!(summary["tuples"], want_tuples);
    let out = records(&output);
    let segments: usize = out.iter().map(|r| r["segments"].as_array().unwrap().len()).sum();
    assert_eq!(segments, want_segments);
}

#[test]
fn flattened_transform_has_one_source() {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("flat.jsonl");
    ok(&["transform", "--input", p(&toy()), "--output", p(&output), "--flatten"]);
    for r in records(&output) {
        assert_eq!(r["preset"], "flat");
        assert_eq!(r["segments"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn error_categories_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("toy.jsonl");
    ok(&["transform", "--input", p(&toy()), "--output", p(&data)]);

    let missing = d.join("missing.jsonl");
    let (code, err) = fails(&["train", "--train", p(&missing), "--out", p(&d.join("r"))]);
    assert_eq!(code, 5, "{err}");
    assert!(err.starts_with("error: io error:"), "{err}");

    let (code, err) = fails(&["train", "--train", p(&data), "--set", "model.width=3", "--out", p(&d.join("r"))]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("config error"), "{err}");

    let (code, _) = fails(&["train", "--train", p(&data), "--set", "model.d_model=30", "--set", "model.heads=4"]);
    assert_eq!(code, 2);

    let bad = d.join("bad.jsonl");
    fs::write(&bad, "{\"segments\": []}\nnot json\n").unwrap();
    let (code, err) = fails(&["train", "--train", p(&bad), "--out", p(&d.join("r"))]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("data error") && err.contains(":1"), "{err}");

    let (code, err) = fails(&["train", "--train", p(&data), "--set", "model.max_seq_len=8", "--out", p(&d.join("r"))]);
    assert_eq!(code, 4, "{err}");

    let corrupt = d.join("corrupt.bin");
    fs::write(&corrupt, b"segrel-checkpoint 1 5\n{}\n").unwrap();
    let (code, err) =
        fails(&["generate", "--checkpoint", p(&corrupt), "--input", p(&data), "--output", p(&d.join("g"))]);
    assert_eq!(code, 6, "{err}");

    let (code, _) = fails(&["subsample", "--input", p(&data), "--output", p(&d.join("s")), "--spec", "half"]);
    assert_eq!(code, 2);
    let (code, _) = fails(&["subsample", "--input", p(&data), "--output", p(&d.join("s")), "--spec", "500"]);
    assert_eq!(code, 3);
}

fn tiny_run(d: &Path, data: &Path) -> PathBuf {
    let out = d.join("run");
    ok(&[
        "train",
        "--train",
        p(data),
        "--out",
        p(&out),
        "-q",
        "--set",
        "model.d_model=16",
        "--set",
        "model.heads=2",
        "--set",
        "model.layers=1",
        "--set",
        "train.steps=5",
        "--set",
        "train.eval_interval=5",
        "--set",
        "decode.max_tokens=4",
    ]);
    out
}

#[test]
fn train_generate_evaluate_and_hash_checks() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("toy.jsonl");
    ok(&["transform", "--input", p(&toy()), "--output", p(&data)]);
    let run = tiny_run(d, &data);
    let ckpt = run.join("checkpoint.bin");
    let log: Vec<Value> = records(&run.join("train_log.jsonl"));
    assert_eq!(log.last().unwrap()["step"], 5);
    let hash = log[0]["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 16);

    let gen = d.join("gen.jsonl");
    ok(&["generate", "--checkpoint", p(&ckpt), "--input", p(&data), "--output", p(&gen), "-q"]);
    let lines = records(&gen);
    assert_eq!(lines.len(), 20);
    assert!(lines.iter().all(|l| l["config_hash"] == hash.as_str() && l["generated"].as_array().unwrap().len() == 1));
    assert_eq!(lines[0]["id"], "toy-0");

    let report = d.join("report.json");
    let stdout = ok(&["evaluate", "--generations", p(&gen), "--checkpoint", p(&ckpt), "--output", p(&report)]);
    assert!(stdout.contains("BLEU-4:"), "{stdout}");
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["config_hash"], hash.as_str());
    assert_eq!(r["flags"]["variant"], "structured");
    assert_eq!(r["flags"]["collapse_relations"], false);
    assert_eq!(r["metrics"].as_array().unwrap().len(), 4);

    let (code, err) = fails(&["evaluate", "--generations", p(&gen), "--expect-hash", "0000000000000000"]);
    assert_eq!(code, 7, "{err}");
    assert!(err.contains("hash mismatch"), "{err}");
    ok(&["evaluate", "--generations", p(&gen), "--expect-hash", "0000000000000000", "--allow-hash-mismatch"]);

    let (code, _) =
        fails(&["generate", "--checkpoint", p(&ckpt), "--input", p(&data), "--output", p(&gen), "--set", "train.lr=1"]);
    assert_eq!(code, 2);

    let (code, err) = fails(&[
        "train",
        "--train",
        p(&data),
        "--out",
        p(&d.join("again")),
        "--resume",
        p(&ckpt),
        "-q",
        "--set",
        "model.d_model=16",
        "--set",
        "model.heads=2",
        "--set",
        "model.layers=1",
        "--set",
        "train.steps=9",
        "--set",
        "train.eval_interval=5",
        "--set",
        "decode.max_tokens=4",
    ]);
    assert_eq!(code, 7, "{err}");

    let a = d.join("a.json");
    fs::copy(&report, &a).unwrap();
    let stdout = ok(&["evaluate", "--aggregate", p(&report), p(&a)]);
    assert!(stdout.contains("over 2 runs"), "{stdout}");
}

#[test]
fn synth_and_subsample_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (a, b) = (d.join("a.jsonl"), d.join("b.jsonl"));
    ok(&["synth", "--n", "50", "--seed", "4", "--output", p(&a)]);
    ok(&["synth", "--n", "50", "--seed", "4", "--output", p(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let stdout =
        ok(&["subsample", "--input", p(&a), "--spec", "10%", "--seed", "1", "--output", p(&d.join("s.jsonl"))]);
    assert_eq!(stdout.trim(), "5 selected of 50 (5 / 10%)");
}
