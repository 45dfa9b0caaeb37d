use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn setseq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_setseq"))
        .args(args)
        .current_dir(dir)
        .env("SETSEQ_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap();
    serde_json::from_str(line).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(&setseq(
        dir.path(),
        &[
            "generate",
            "--out",
            "d.jsonl",
            "--users",
            "30",
            "--sessions-per-user",
            "4",
        ],
    ));
    ok(&setseq(
        dir.path(),
        &[
            "train",
            "--data",
            "d.jsonl",
            "--out",
            "m.ckpt",
            "--log",
            "log.csv",
            "--steps",
            "6",
            "--batch",
            "8",
            "--eval-every",
            "3",
            "--layers",
            "1",
            "--heads",
            "2",
            "--inducing",
            "4",
            "--hidden",
            "8",
            "--ff-hidden",
            "16",
        ],
    ));
    dir
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = setseq(dir.path(), &["eval", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");
    let out = setseq(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = setseq(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn missing_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = setseq(dir.path(), &["analyze", "--data", "absent.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "missing_input");
    assert!(err["message"].as_str().unwrap().contains("absent.jsonl"));
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.jsonl", "b.jsonl"] {
        ok(&setseq(
            dir.path(),
            &["generate", "--out", name, "--users", "5", "--seed", "11"],
        ));
    }
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    let m: Value = serde_json::from_slice(&std::fs::read(dir.path().join("a.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["sessions"], 50);
    assert_eq!(m["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn full_pipeline() {
    let dir = workspace();
    let d = dir.path();

    let log = std::fs::read_to_string(d.join("log.csv")).unwrap();
    assert!(log.starts_with("step,loss,val_ndcg5_sat\n"));
    assert_eq!(log.lines().count(), 7);

    let csv = ok(&setseq(
        d,
        &[
            "eval",
            "--model",
            "m.ckpt",
            "--data",
            "d.jsonl",
            "--methods",
            "setrank,mostra,wtsum",
            "--grid",
            "grid.json",
        ],
    ));
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("method,ndcg5_sat,ndcg5_boost,ndcg5_exposure,ndcg5_discovery,"));
    assert!(rows[1].starts_with("setrank,") && rows[2].starts_with("mostra,") && rows[3].starts_with("wtsum,"));
    let grid: Value = serde_json::from_slice(&std::fs::read(d.join("grid.json")).unwrap()).unwrap();
    assert_eq!(grid["cells"].as_array().unwrap().len(), 9);

    let out = setseq(d, &["eval", "--data", "d.jsonl", "--methods", "relevance"]);
    assert!(ok(&out).lines().nth(1).unwrap().starts_with("relevance,"));
    let out = setseq(d, &["eval", "--data", "d.jsonl", "--methods", "setrank"]);
    assert_eq!(out.status.code(), Some(2));

    let sweep = ok(&setseq(
        d,
        &[
            "sweep",
            "--model",
            "m.ckpt",
            "--data",
            "d.jsonl",
            "--epsilons",
            "0.01,0.05,0.1",
            "--json",
            "plot.json",
        ],
    ));
    let rows: Vec<&str> = sweep.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("epsilon,") && rows[0].ends_with(",mean_candidates"));
    assert!(rows[1].starts_with("0.01,") && rows[3].starts_with("0.1,"));
    let plot: Value = serde_json::from_slice(&std::fs::read(d.join("plot.json")).unwrap()).unwrap();
    assert_eq!(plot["series"]["ndcg5_boost"].as_array().map(|a| a.len()), Some(3));

    let analysis: Value = serde_json::from_str(&ok(&setseq(d, &["analyze", "--data", "d.jsonl"]))).unwrap();
    assert_eq!(analysis["sessions"], 120);
    assert_eq!(analysis["composition"].as_array().unwrap().len(), 8);

    let first: Value = serde_json::from_str(
        std::fs::read_to_string(d.join("d.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    let id = first["session_id"].as_str().unwrap();
    let seq: Value = serde_json::from_str(&ok(&setseq(
        d,
        &[
            "sequence",
            "--model",
            "m.ckpt",
            "--data",
            "d.jsonl",
            "--session",
            id,
            "--epsilon",
            "0.05",
            "--beam",
            "4",
            "--explain",
        ],
    )))
    .unwrap();
    assert_eq!(seq["session_id"], id);
    assert_eq!(seq["config"]["epsilon"], 0.05);
    let n = first["tracks"].as_array().unwrap().len();
    assert_eq!(seq["ranking"].as_array().unwrap().len(), n);
    assert_eq!(seq["steps"].as_array().unwrap().len(), n);
    for key in ["delta", "masked", "candidates", "bonus"] {
        assert!(!seq["steps"][0][key].is_null(), "{}", key);
    }

    let out = setseq(
        d,
        &[
            "sequence",
            "--model",
            "m.ckpt",
            "--data",
            "d.jsonl",
            "--session",
            "nope",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "not_found");
    let out = setseq(
        d,
        &[
            "sequence",
            "--model",
            "m.ckpt",
            "--data",
            "d.jsonl",
            "--session",
            id,
            "--epsilon",
            "1.5",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}
