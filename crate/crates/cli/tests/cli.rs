use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn sumlens(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sumlens"))
        .current_dir(dir)
        .env_remove("SUMLENS_JOBS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "status {:?}\nstderr:\n{}", out.status, String::from_utf8_lossy(&out.stderr));
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, content).unwrap();
    p
}

fn jsonl(dir: &Path, name: &str, rows: &[Value]) -> PathBuf {
    let body: String = rows.iter().map(|r| format!("{r}\n")).collect();
    write(dir, name, &body)
}

/// Records of an output file plus its header and summary lines.
fn read_output(path: &Path) -> (Value, Vec<Value>, Option<Value>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let header = lines.remove(0)["header"].clone();
    let summary = match lines.last() {
        Some(v) if v.get("summary").is_some_and(Value::is_object) => Some(lines.pop().unwrap()["summary"].clone()),
        _ => None,
    };
    (header, lines, summary)
}

fn cond_len(len: usize) -> Value {
    json!({"kind": "prefix_len", "len": len})
}

fn key_visible() -> Value {
    json!({"kind": "token_visible", "token": "key"})
}

/// Four summary steps planted in the LM, CTX, FT and PT regions.
fn region_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let all = |a: Value, b: Value| json!({"kind": "all", "of": [a, b]});
    let oracle = json!({
        "summarizer": {
            "default": {"other": 1.0},
            "rules": [
                {"when": cond_len(1), "target": "t1", "prob": 0.9},
                {"when": all(cond_len(2), key_visible()), "target": "t2", "prob": 0.9},
                {"when": cond_len(3), "target": "t3", "prob": 0.9},
                {"when": all(cond_len(4), key_visible()), "target": "t4", "prob": 0.9}
            ]
        },
        "lm": {
            "default": {"other": 1.0},
            "rules": [
                {"when": cond_len(1), "target": "t1", "prob": 0.9},
                {"when": cond_len(4), "target": "t4", "prob": 0.9}
            ]
        }
    });
    let o = write(dir, "regions.json", &oracle.to_string());
    let c = jsonl(
        dir,
        "regions.jsonl",
        &[
            json!({"id": "d1", "text": "a key b . c d .", "summary": "t1 t2 t3 t4"}),
            json!({"id": "d2", "text": "e f . key g h .", "summary": "t1 t2 t3 t4"}),
        ],
    );
    (o, c)
}

fn key_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let oracle = json!({"summarizer": {"default": {"target": 0.1}, "rules": [{"when": key_visible(), "target": "target", "prob": 0.9}]}});
    let o = write(dir, "key.json", &oracle.to_string());
    let c = jsonl(dir, "key.jsonl", &[json!({"id": "k", "text": "a key b . c d . e f .", "summary": "target"})]);
    (o, c)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn map_recovers_planted_regions() {
    let dir = tempfile::tempdir().unwrap();
    let (o, c) = region_fixture(dir.path());
    let out = sumlens(dir.path(), &["--oracle", s(&o), "--corpus", s(&c), "--svg", "map"]);
    ok(&out);
    let (header, records, summary) = read_output(&dir.path().join("out/map.jsonl"));
    assert_eq!(header["kind"], "map");
    let regions: Vec<&str> = records.iter().map(|r| r["region"].as_str().unwrap()).collect();
    assert_eq!(regions, ["LM", "CTX", "FT", "PT", "LM", "CTX", "FT", "PT"]);
    let summary = summary.unwrap();
    let total: f64 = summary["frequencies"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 100.0).abs() < 1e-9);
    assert_eq!(summary["counts"]["CTX"], 2);
    assert!(dir.path().join("out/map.svg").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (o, c) = region_fixture(dir.path());
    let args = ["--oracle", s(&o), "--corpus", s(&c), "map"];
    ok(&sumlens(dir.path(), &args));
    let first = std::fs::read(dir.path().join("out/map.jsonl")).unwrap();
    ok(&sumlens(dir.path(), &[&args[..], &["--jobs", "1"]].concat()));
    assert_eq!(first, std::fs::read(dir.path().join("out/map.jsonl")).unwrap());
}

#[test]
fn key_oracle_through_attribute_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let (o, c) = key_fixture(dir.path());
    let base = ["--oracle", s(&o), "--corpus", s(&c)];
    ok(&sumlens(dir.path(), &[&base[..], &["attribute", "--method", "occlusion"]].concat()));
    let attr = dir.path().join("out/attributions-occlusion.jsonl");
    let (_, records, _) = read_output(&attr);
    let scores: Vec<f64> = records[0]["scores"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((scores[1] - 0.8).abs() < 1e-12);
    assert!(scores.iter().enumerate().all(|(i, v)| i == 1 || v.abs() < 1e-12));

    ok(&sumlens(dir.path(), &[&base[..], &["evaluate", "--attributions", s(&attr)]].concat()));
    let (_, curves, _) = read_output(&dir.path().join("out/curves.jsonl"));
    let settings: Vec<&str> = curves.iter().map(|c| c["setting"].as_str().unwrap()).collect();
    assert_eq!(settings, ["DISP_TOK", "RM_TOK", "DISP_SENT", "RM_SENT"]);
    let at = |c: &Value, b: u64| c["points"].as_array().unwrap().iter().find(|p| p["budget"] == b).unwrap()["mean_nll"].as_f64().unwrap();
    assert!((at(&curves[0], 1) - 0.105).abs() < 1e-3);
    assert!((at(&curves[1], 1) - 2.303).abs() < 1e-3);
    let csv = std::fs::read_to_string(dir.path().join("out/curves.csv")).unwrap();
    assert!(csv.starts_with("# sumlens "));
    assert!(csv.lines().nth(1).unwrap().starts_with("method,setting,budget"));
}

#[test]
fn two_stage_records_preselected_sentences() {
    let dir = tempfile::tempdir().unwrap();
    let (o, c) = key_fixture(dir.path());
    let out = sumlens(dir.path(), &["--oracle", s(&o), "--corpus", s(&c), "attribute", "--method", "occlusion", "--two-stage", "1"]);
    ok(&out);
    let (_, records, summary) = read_output(&dir.path().join("out/attributions-occlusion-s1.jsonl"));
    assert_eq!(records[0]["preselected_sentences"], json!([0]));
    assert!(records[0]["scores"][4].is_null());
    assert_eq!(summary.unwrap()["two_stage_k"], 1);
}

#[test]
fn every_method_name_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let (o, c) = key_fixture(dir.path());
    for m in ["random", "lead", "occlusion"] {
        ok(&sumlens(dir.path(), &["--oracle", s(&o), "--corpus", s(&c), "attribute", "--method", m]));
    }
    // The scripted oracle has neither gradients nor attention.
    for m in ["attention", "inpgrad", "intgrad"] {
        assert_eq!(code(&sumlens(dir.path(), &["--oracle", s(&o), "--corpus", s(&c), "attribute", "--method", m])), 3);
    }
    assert_eq!(code(&sumlens(dir.path(), &["--oracle", s(&o), "--corpus", s(&c), "attribute", "--method", "saliency"])), 2);
}

#[test]
fn empty_attribution_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (o, c) = key_fixture(dir.path());
    let empty = write(dir.path(), "empty.jsonl", "{\"header\":{\"tool\":\"sumlens\",\"version\":\"0\",\"config_hash\":\"x\",\"kind\":\"attribute\"}}\n");
    let out = sumlens(dir.path(), &["--oracle", s(&o), "--corpus", s(&c), "evaluate", "--attributions", s(&empty)]);
    assert_eq!(code(&out), 4);
}

#[test]
fn fuse_flags_the_planted_pair() {
    let dir = tempfile::tempdir().unwrap();
    let pair = json!({"kind": "all", "of": [{"kind": "sentence_visible", "sentence": 2}, {"kind": "sentence_visible", "sentence": 5}]});
    let oracle = json!({"summarizer": {"default": {"target": 0.1, "other": 0.9}, "rules": [{"when": pair, "target": "target", "prob": 0.9}]}});
    let o = write(dir.path(), "pair.json", &oracle.to_string());
    let c = jsonl(dir.path(), "pair.jsonl", &[json!({"id": "p", "text": "a . b . c . d . e . f .", "summary": "target"})]);
    ok(&sumlens(dir.path(), &["--oracle", s(&o), "--corpus", s(&c), "fuse"]));
    let (_, records, summary) = read_output(&dir.path().join("out/fusion.jsonl"));
    assert_eq!(records.len(), 1);
    assert_eq!((records[0]["best_pair"]["i"].as_u64(), records[0]["best_pair"]["j"].as_u64()), (Some(2), Some(5)));
    assert_eq!(records[0]["is_fusion"], true);
    assert_eq!(summary.unwrap()["fused"], 1);
}

#[test]
fn overlap_threshold_is_strict() {
    let dir = tempfile::tempdir().unwrap();
    let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
    let summaries = jsonl(
        dir.path(),
        "sums.jsonl",
        &[json!({"id": "four", "text": "x", "summary": words.join(" ")}), json!({"id": "three", "text": "x", "summary": words.iter().map(|w| format!("{w}b")).collect::<Vec<_>>().join(" ")})],
    );
    let four = format!("pad {} pad", words[..10].join(" "));
    let three = format!("pad {} pad", words[..9].iter().map(|w| format!("{w}b")).collect::<Vec<_>>().join(" "));
    let docs = write(dir.path(), "docs.txt", &format!("{four}\n{three}\nnothing shared here\n"));
    ok(&sumlens(dir.path(), &["scan-overlap", "--docs", s(&docs), "--summaries", s(&summaries)]));
    let (_, hits, summary) = read_output(&dir.path().join("out/overlap.jsonl"));
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0]["example_id"], "four");
    assert_eq!(hits[0]["count"], 4);
    assert_eq!(summary.unwrap()["docs_scanned"], 3);

    let none = write(dir.path(), "none.txt", "");
    ok(&sumlens(dir.path(), &["scan-overlap", "--docs", s(&none), "--summaries", s(&summaries)]));
    let (_, hits, _) = read_output(&dir.path().join("out/overlap.jsonl"));
    assert!(hits.is_empty());
}

#[test]
fn bigrams_handle_empty_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.txt", "");
    let b = write(dir.path(), "b.txt", "");
    let pairs = write(dir.path(), "pairs.txt", "letters from\n");
    let out = sumlens(dir.path(), &["bigrams", "--counts", &format!("a={}", s(&a)), "--counts", &format!("b={}", s(&b)), "--pairs", s(&pairs)]);
    ok(&out);
    let (_, stats, summary) = read_output(&dir.path().join("out/bigrams.jsonl"));
    assert_eq!(stats[0]["zero_denominator"], json!([true, true]));
    assert_eq!(summary.unwrap()["mean"], json!([0.0, 0.0]));
    let one = sumlens(dir.path(), &["bigrams", "--counts", &format!("a={}", s(&a)), "--pairs", s(&pairs)]);
    assert_eq!(code(&one), 2);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (o, c) = key_fixture(dir.path());
    let both = json!({"backend": {"scripted": {"oracle": "key.json"}, "remote": {"vocab": "v.txt", "summarizer": "http://127.0.0.1:1"}}, "corpus": "key.jsonl"});
    let cfg = write(dir.path(), "both.json", &both.to_string());
    assert_eq!(code(&sumlens(dir.path(), &["--config", s(&cfg), "map"])), 2);
    assert_eq!(code(&sumlens(dir.path(), &["--corpus", s(&c), "map"])), 2);
    assert_eq!(code(&sumlens(dir.path(), &["--oracle", s(&o), "--corpus", "missing.jsonl", "map"])), 2);
    assert_eq!(code(&sumlens(dir.path(), &["--oracle", s(&o), "--corpus", s(&c), "--jobs", "0", "map"])), 2);
    let env = Command::new(env!("CARGO_BIN_EXE_sumlens"))
        .current_dir(dir.path())
        .env("SUMLENS_JOBS", "0")
        .args(["--oracle", s(&o), "--corpus", s(&c), "map"])
        .output()
        .unwrap();
    assert_eq!(code(&env), 2);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (o, c) = key_fixture(dir.path());
    let cfg = write(
        dir.path(),
        "run.json",
        &json!({"backend": {"scripted": {"oracle": "key.json"}}, "corpus": "key.jsonl", "out_dir": "from_config", "settings": ["RM_TOK"]}).to_string(),
    );
    ok(&sumlens(dir.path(), &["--config", s(&cfg), "attribute", "--method", "lead"]));
    let attr = dir.path().join("from_config/attributions-lead.jsonl");
    assert!(attr.exists());
    ok(&sumlens(dir.path(), &["--config", s(&cfg), "--out", "flagged", "evaluate", "--attributions", s(&attr)]));
    let (_, curves, _) = read_output(&dir.path().join("flagged/curves.jsonl"));
    assert_eq!(curves.len(), 1);
    assert_eq!(curves[0]["setting"], "RM_TOK");
    let _ = (o, c);
}

#[test]
fn unreachable_remote_is_a_backend_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, c) = key_fixture(dir.path());
    let vocab = write(dir.path(), "vocab.txt", "");
    // An empty vocabulary file is rejected before any request is made.
    let out = sumlens(dir.path(), &["--endpoint", "http://127.0.0.1:9", "--vocab", s(&vocab), "--corpus", s(&c), "map"]);
    assert_eq!(code(&out), 2);

    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let trained = dir.path().join("toy");
    let small = write(
        dir.path(),
        "small.json",
        &json!({
            "model": {"layers": 1, "heads": 1, "embed_dim": 4, "ffn_dim": 4, "max_len": 32, "seed": 0},
            "train": {"epochs": 1, "batch_size": 4, "learning_rate": 0.002, "clip_norm": 1.0,
                      "augment": {"empty_source": 0.0, "sentence_subset": 0.0, "piece_subset": 0.0, "piece_keep": 1.0, "token_mask": 0.0, "mask_rate": 0.0}},
            "corpus": "key.jsonl",
            "out_dir": "toy"
        })
        .to_string(),
    );
    ok(&sumlens(dir.path(), &["--config", s(&small), "train-toy"]));
    let url = format!("http://127.0.0.1:{port}");
    let out = sumlens(dir.path(), &["--endpoint", &url, "--vocab", s(&trained.join("vocab.txt")), "--corpus", s(&c), "map"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_toy_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "model": {"layers": 1, "heads": 1, "embed_dim": 8, "ffn_dim": 8, "max_len": 64, "seed": 3},
        "train": {"epochs": 1, "batch_size": 8, "learning_rate": 0.002, "clip_norm": 1.0,
                  "augment": {"empty_source": 0.15, "sentence_subset": 0.25, "piece_subset": 0.15, "piece_keep": 0.5, "token_mask": 0.1, "mask_rate": 0.15}},
        "synthetic": {"train": 12, "dev": 3, "min_sentences": 3, "max_sentences": 4, "words_per_sentence": 4, "content_words": 24, "seed": 7}
    });
    let p = write(dir.path(), "run.json", &cfg.to_string());
    ok(&sumlens(dir.path(), &["--config", s(&p), "--out", "a", "train-toy"]));
    ok(&sumlens(dir.path(), &["--config", s(&p), "--out", "b", "train-toy"]));
    for f in ["summarizer.ckpt", "lm.ckpt", "vocab.txt"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    // The header hash covers the output directory, so only the records are compared.
    let (_, dev_a, _) = read_output(&dir.path().join("a/synthetic_dev.jsonl"));
    let (_, dev_b, _) = read_output(&dir.path().join("b/synthetic_dev.jsonl"));
    assert_eq!(dev_a.len(), 3);
    assert_eq!(dev_a, dev_b);
    let (header, records, _) = read_output(&dir.path().join("a/train.jsonl"));
    assert_eq!(header["kind"], "train-toy");
    assert_eq!(header["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(records.len(), 2);

    // The trained pair serves as a backend for the synthetic dev split.
    ok(&sumlens(dir.path(), &["--toy-dir", "a", "--corpus", "a/synthetic_dev.jsonl", "--out", "a", "map"]));
    ok(&sumlens(dir.path(), &["--toy-dir", "a", "--corpus", "a/synthetic_dev.jsonl", "--out", "a", "attribute", "--method", "intgrad", "--ig-steps", "4"]));

    let missing = sumlens(dir.path(), &["--config", s(&p), "--corpus", "nope.jsonl", "train-toy"]);
    assert_eq!(code(&missing), 2);
}
