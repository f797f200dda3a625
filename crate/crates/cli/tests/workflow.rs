use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TOPICS: [(&str, &str); 10] = [
    ("database", "Postgres"),
    ("message queue", "RabbitMQ"),
    ("test runner", "Jest"),
    ("package manager", "Yarn"),
    ("container registry", "Harbor"),
    ("logging stack", "Loki"),
    ("feature flag service", "Unleash"),
    ("API gateway", "Kong"),
    ("secrets store", "Vault"),
    ("CI system", "GitHub Actions"),
];

fn draft(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_draft"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "draft {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_adrs(dir: &Path) {
    let adrs = dir.join("adrs");
    fs::create_dir_all(&adrs).unwrap();
    for (i, (topic, choice)) in TOPICS.iter().enumerate() {
        let md = format!(
            "# {i}. Choose a {topic}\n\n## Status\n\nAccepted\n\n## Context\n\nThe team needs a {topic} that is easy to operate.\n\n## Decision\n\nWe will use {choice} as our {topic}.\n"
        );
        fs::write(adrs.join(format!("{i:04}-{}.md", topic.replace(' ', "-"))), md).unwrap();
    }
    fs::write(adrs.join("notes.md"), "## Status\n\nnothing here\n").unwrap();
}

#[test]
fn end_to_end_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_adrs(dir);

    let stats: serde_json::Value = serde_json::from_str(&stdout(&draft(
        dir,
        &["corpus", "build", "adrs", "--out", "corpus.jsonl"],
    )))
    .unwrap();
    assert_eq!(stats["count"], 10);
    assert_eq!(stats["rejected_unparseable"], 1);

    let split = stdout(&draft(
        dir,
        &[
            "corpus",
            "split",
            "corpus.jsonl",
            "--seed",
            "7",
            "--out-prefix",
            "data/",
        ],
    ));
    assert!(split.contains("train\t6\t"), "{split}");
    for name in ["train", "val", "test"] {
        assert!(dir.join(format!("data/{name}.jsonl")).exists());
    }

    draft(
        dir,
        &[
            "vstore",
            "build",
            "corpus.jsonl",
            "--out",
            "store",
            "--embedder",
            "hashed_local",
            "--dim",
            "64",
        ],
    );
    assert!(dir.join("store/manifest.json").exists());

    draft(
        dir,
        &["export-train", "--store", "store", "--k", "3", "--out", "train.jsonl"],
    );
    let lines: Vec<serde_json::Value> = fs::read_to_string(dir.join("train.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 10);
    for ex in &lines {
        let shots = ex["shot_ids"].as_array().unwrap();
        assert_eq!(shots.len(), 3);
        assert!(!shots.contains(&ex["source_id"]));
        // decisions are unique here, so the target can only leak via self-retrieval
        let target = ex["target"].as_str().unwrap();
        assert!(target.starts_with("We will use"));
        assert!(!ex["prompt"].as_str().unwrap().contains(target));
    }

    fs::write(dir.join("ctx.md"), "The team needs a database that is easy to operate.").unwrap();
    let decision = stdout(&draft(
        dir,
        &[
            "infer",
            "--mode",
            "draft_fewshot",
            "--k",
            "2",
            "--context-file",
            "ctx.md",
            "--backend",
            "mock_echo",
        ],
    ));
    assert_eq!(decision.trim(), "We will use Postgres as our database.");
    let zero = stdout(&draft(
        dir,
        &[
            "infer",
            "--mode",
            "zero_shot",
            "--context-file",
            "ctx.md",
            "--backend",
            "mock_echo",
        ],
    ));
    assert_eq!(zero.trim(), "NO-SHOT");

    let config = serde_json::json!({
        "corpus_path": "data/test.jsonl",
        "store_path": "store",
        "output_dir": "ignored",
        "frozen_clock": "2026-01-01T00:00:00Z",
        "candidates": [
            {"name": "echo", "mode": "rag_fewshot", "backend": {"kind": "mock_echo"}, "k": 2},
            {"name": "zero", "mode": "zero_shot", "backend": {"kind": "mock_constant", "text": "We will do nothing."}, "k": 0}
        ]
    });
    fs::write(dir.join("bench.json"), config.to_string()).unwrap();
    let table = stdout(&draft(
        dir,
        &[
            "bench",
            "--config",
            "bench.json",
            "--out",
            "results",
            "--format",
            "markdown",
        ],
    ));
    assert!(table.contains("| Approach | Model | rouge-1 |"), "{table}");
    assert!(table.contains("| echo | mock_echo | 1.000 |"), "{table}");
    assert!(table.contains("Response Time (s)"), "{table}");
    assert!(dir.join("results/report.json").exists());
    assert!(dir.join("results/samples.jsonl").exists());
    assert!(!dir.join("ignored").exists());
}

#[test]
fn bad_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_draft"))
        .current_dir(tmp.path())
        .args(["vstore", "build", "missing.jsonl", "--out", "store"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
}
