use std::path::Path;
use std::process::{Command, Output};

fn ma4div(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ma4div"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run ma4div")
}

fn ok(args: &[&str]) -> String {
    let out = ma4div(args);
    assert!(
        out.status.success(),
        "ma4div {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn generate(dir: &Path) -> String {
    let data = dir.join("data");
    ok(&[
        "generate",
        "--out",
        data.to_str().unwrap(),
        "--seed",
        "4",
        "--queries",
        "12",
        "--docs",
        "5",
        "--subtopics",
        "3",
        "--embed-dim",
        "6",
    ]);
    data.join("dataset.jsonl").to_str().unwrap().to_string()
}

#[test]
fn generate_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = generate(dir.path());
    let config = dir.path().join("train.json");
    std::fs::write(
        &config,
        r#"{"trainer": {"batch_size": 8, "model": {"attn_dim": 8, "heads": 2, "hidden": [16]}}}"#,
    )
    .unwrap();
    let train_out = dir.path().join("train");
    let text = ok(&[
        "train",
        "--dataset",
        &dataset,
        "--out",
        train_out.to_str().unwrap(),
        "--epochs",
        "2",
        "--config",
        config.to_str().unwrap(),
    ]);
    assert!(text.contains("ma4div"));
    for f in ["config.json", "train_log.jsonl", "curve.tsv", "eval.jsonl", "eval.txt", "checkpoint.bin"] {
        assert!(train_out.join(f).exists(), "missing {f}");
    }
    let effective: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(train_out.join("config.json")).unwrap()).unwrap();
    assert_eq!(effective["trainer"]["batch_size"], 8);
    assert_eq!(effective["trainer"]["epochs"], 2);
    let log = std::fs::read_to_string(train_out.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let eval_out = dir.path().join("eval");
    let table = ok(&[
        "evaluate",
        "--dataset",
        &dataset,
        "--out",
        eval_out.to_str().unwrap(),
        "--checkpoint",
        train_out.join("checkpoint.bin").to_str().unwrap(),
    ]);
    let methods: Vec<&str> = table.lines().skip(1).filter_map(|l| l.split_whitespace().next()).collect();
    assert_eq!(methods, vec!["ma4div", "oracle", "xquad", "mmr", "random"]);
    let header = table.lines().next().unwrap();
    for col in ["alpha_ndcg@5", "alpha_ndcg@10", "err_ia@5", "err_ia@10", "s_recall@5", "s_recall@10"] {
        assert!(header.contains(col), "{header}");
    }
}

#[test]
fn reinforce_policy_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = generate(dir.path());
    let out = dir.path().join("rf");
    ok(&[
        "train",
        "--dataset",
        &dataset,
        "--out",
        out.to_str().unwrap(),
        "--method",
        "mdpdiv",
        "--epochs",
        "2",
    ]);
    let table = ok(&[
        "evaluate",
        "--dataset",
        &dataset,
        "--out",
        dir.path().join("e").to_str().unwrap(),
        "--checkpoint",
        out.join("policy.bin").to_str().unwrap(),
        "--method",
        "mdpdiv,oracle",
    ]);
    assert!(table.contains("mdpdiv") && table.contains("oracle"));
}

#[test]
fn errors_are_one_line_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let out = ma4div(&[
        "evaluate",
        "--dataset",
        dir.path().join("missing.jsonl").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error:"));

    let dataset = generate(dir.path());
    let out = ma4div(&["evaluate", "--dataset", &dataset, "--out", "x", "--method", "ma4div"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"generator": {"docs": "many"}}"#).unwrap();
    let out = ma4div(&["generate", "--out", "x", "--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn bench_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = generate(dir.path());
    let out = dir.path().join("bench");
    let text = ok(&[
        "bench",
        "--dataset",
        &dataset,
        "--out",
        out.to_str().unwrap(),
        "--max-epochs",
        "1",
        "--method",
        "mdpdiv,mmr",
        "--latency-sizes",
        "3,6",
        "--latency-repeats",
        "2",
    ]);
    assert!(text.contains("oracle-greedy"));
    let lines = std::fs::read_to_string(out.join("bench.jsonl")).unwrap();
    let kinds: Vec<String> = lines
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds.iter().filter(|k| *k == "convergence").count(), 1);
    assert_eq!(kinds.iter().filter(|k| *k == "latency").count(), 4);
    assert_eq!(kinds.iter().filter(|k| *k == "latency_fit").count(), 2);
}
