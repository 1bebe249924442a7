//! End-to-end pipeline smoke tests through the CLI binary.

use std::path::Path;
use std::process::{Command, Output};

fn dcsr(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcsr"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcsr(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("train"));
    assert!(text.contains("eval"));
}

#[test]
fn version_prints_format_versions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcsr(&["--version"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("checkpoint format v1"));
    assert!(text.contains("index format v1"));
}

#[test]
fn missing_required_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcsr(&["eval", "--dataset", "x.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("--index"), "stderr should name the flag: {text}");
}

#[test]
fn missing_file_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcsr(
        &["stats", "--dataset", "does-not-exist.jsonl"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path();

    let out = dcsr(
        &[
            "synth", "--passages", "60", "--sentences", "3", "--topics", "3", "--qpp", "3:1.0",
            "--seed", "5", "--out-passages", "passages.jsonl", "--out-dataset", "dataset.jsonl",
        ],
        path,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let out = dcsr(
        &[
            "stats", "--dataset", "dataset.jsonl", "--dev", "dataset.jsonl",
        ],
        path,
    );
    assert_eq!(out.status.code(), Some(0));
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["average"], 3.0);
    assert_eq!(stats["title_overlap_fraction"], 1.0);

    let out = dcsr(
        &[
            "train", "--train", "dataset.jsonl", "--dev", "dataset.jsonl", "--epochs", "6",
            "--lr", "0.7", "--batch-size", "16", "--strategy", "inpassage+bm25", "--seed", "5",
            "--dim", "32", "--feature-space", "4096", "--out", "run",
        ],
        path,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(path.join("run/final.ckpt").exists());
    assert!(path.join("run/best.ckpt").exists());
    assert!(path.join("run/report.jsonl").exists());

    let out = dcsr(
        &[
            "index", "--passages", "passages.jsonl", "--checkpoint", "run/final.ckpt",
            "--out", "corpus.didx",
        ],
        path,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let out = dcsr(
        &[
            "eval", "--index", "corpus.didx", "--dataset", "dataset.jsonl", "--checkpoint",
            "run/final.ckpt", "--passages", "passages.jsonl", "--ks", "1,5,20,100",
            "--json", "eval.json",
        ],
        path,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["questions"], 180);
    assert_eq!(report["corpus_sentences"], 180);
    // accuracy non-decreasing in k
    let at = |k: &str| report["k"][k].as_f64().unwrap();
    assert!(at("1") <= at("5") && at("5") <= at("20") && at("20") <= at("100"));

    let out = dcsr(
        &[
            "search", "--index", "corpus.didx", "--checkpoint", "run/final.ckpt",
            "--query", "Which passage mentions something?", "--top", "10",
        ],
        path,
    );
    assert_eq!(out.status.code(), Some(0));
    let ranked: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!ranked["entries"].as_array().unwrap().is_empty());

    let out = dcsr(
        &[
            "mine-negatives", "--index", "corpus.didx", "--dataset", "dataset.jsonl",
            "--checkpoint", "run/final.ckpt", "--passages", "passages.jsonl",
            "--per-question", "2", "--out", "mined.jsonl",
        ],
        path,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    // mined dataset re-ingests and trains
    let out = dcsr(
        &[
            "train", "--train", "mined.jsonl", "--epochs", "2", "--lr", "0.7",
            "--batch-size", "16", "--strategy", "bm25x1", "--seed", "5", "--dim", "32",
            "--feature-space", "4096", "--out", "run2",
        ],
        path,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn identical_seeds_reproduce_output_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path();
    for run in ["a", "b"] {
        let out = dcsr(
            &[
                "synth", "--passages", "30", "--seed", "9",
                "--out-passages", &format!("passages_{run}.jsonl"),
                "--out-dataset", &format!("dataset_{run}.jsonl"),
            ],
            path,
        );
        assert_eq!(out.status.code(), Some(0));
        let out = dcsr(
            &[
                "train", "--train", &format!("dataset_{run}.jsonl"), "--epochs", "3",
                "--lr", "0.5", "--batch-size", "8", "--strategy", "bm25x1", "--seed", "9",
                "--dim", "16", "--feature-space", "1024", "--out", &format!("run_{run}"),
            ],
            path,
        );
        assert_eq!(out.status.code(), Some(0));
        let out = dcsr(
            &[
                "index", "--passages", &format!("passages_{run}.jsonl"),
                "--checkpoint", &format!("run_{run}/final.ckpt"),
                "--out", &format!("corpus_{run}.didx"),
            ],
            path,
        );
        assert_eq!(out.status.code(), Some(0));
    }
    for file in ["passages", "dataset"] {
        assert_eq!(
            std::fs::read(path.join(format!("{file}_a.jsonl"))).unwrap(),
            std::fs::read(path.join(format!("{file}_b.jsonl"))).unwrap()
        );
    }
    assert_eq!(
        std::fs::read(path.join("run_a/final.ckpt")).unwrap(),
        std::fs::read(path.join("run_b/final.ckpt")).unwrap()
    );
    assert_eq!(
        std::fs::read(path.join("corpus_a.didx")).unwrap(),
        std::fs::read(path.join("corpus_b.didx")).unwrap()
    );
}
