use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use ctsne_core::{EmbeddingMatrix, RunMetadata};
use ctsne_server::{router, AppState, ServerConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn ctsne(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctsne"))
        .args(args)
        .env_remove("CTSNE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = ctsne(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `synth` into `dir`, returns the data path.
fn synth(dir: &Path, n: usize) -> PathBuf {
    ok(&["synth", "--n", &n.to_string(), "--seed", "3", "--out-dir", s(dir)]);
    dir.join("data.tsv")
}

#[test]
fn out_of_range_beta_prime_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 60);
    let out = ctsne(&["embed", "--data", s(&data), "--beta-prime", "1.5", "--out", s(&dir.path().join("e.tsv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta'"));
    assert!(!dir.path().join("e.tsv").exists());
}

#[test]
fn exit_codes() {
    assert_eq!(ctsne(&["embed", "--bogus"]).status.code(), Some(1));
    assert_eq!(ctsne(&["embed"]).status.code(), Some(1));
    assert_eq!(ctsne(&["nope"]).status.code(), Some(1));
    assert_eq!(ctsne(&["embed", "--help"]).status.code(), Some(0));
    let missing = ctsne(&["embed", "--data", "/nonexistent/d.tsv", "--out", "/tmp/never.tsv"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/d.tsv"));
}

#[test]
fn help_shows_defaults() {
    let help = String::from_utf8(ok(&["embed", "--help"]).stdout).unwrap();
    for want in [
        "[default: 0.01]",
        "[default: 30]",
        "[default: 0.5]",
        "[default: 1000]",
        "[default: 200]",
        "[default: bh]",
        "[default: standard]",
        "[default: 1]",
        "CTSNE_THREADS",
    ] {
        assert!(help.contains(want), "embed --help lacks {want}");
    }
    let help = String::from_utf8(ok(&["score", "--help"]).stdout).unwrap();
    assert!(help.contains("[default: 10:100:10]"));
    let help = String::from_utf8(ok(&["baseline-cca", "--help"]).stdout).unwrap();
    assert!(help.contains("nullspace") && help.contains("mincorr"));
}

#[test]
fn unlabeled_embed_is_plain_tsne() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 80);
    let e = dir.path().join("e.tsv");
    ok(&["embed", "--data", s(&data), "--iters", "100", "--perplexity", "10", "--out", s(&e)]);
    let meta = RunMetadata::load_json(RunMetadata::sidecar_path(&e)).unwrap();
    assert_eq!((meta.alpha_prime, meta.beta_prime), (1.0, 1.0));
    assert_eq!(meta.num_classes, 1);
    assert_eq!(EmbeddingMatrix::load_tsv(&e).unwrap().n(), 80);
}

#[test]
fn synth_embed_score_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 300);
    let f14 = dir.path().join("f14.tsv");
    let e = dir.path().join("e.tsv");
    ok(&["embed", "--data", s(&data), "--labels", s(&f14), "--beta-prime", "0.01", "--iters", "300", "--out", s(&e)]);
    let meta = RunMetadata::load_json(RunMetadata::sidecar_path(&e)).unwrap();
    assert_eq!(meta.num_classes, 5);
    assert_eq!(meta.beta_prime, 0.01);
    assert!(meta.alpha_prime > 1.0);

    let scores = dir.path().join("scores.tsv");
    ok(&["score", "--embedding", s(&e), "--labels", s(&f14), "--out", s(&scores)]);
    let text = std::fs::read_to_string(&scores).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k\tscore"));
    let rows: Vec<(usize, f64)> = lines
        .map(|l| {
            let (k, v) = l.split_once('\t').unwrap();
            (k.parse().unwrap(), v.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), (1..=10).map(|k| 10 * k).collect::<Vec<_>>());
    assert!(rows.iter().all(|r| r.1.is_finite() && r.1 >= 0.0));
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 200);
    let labels = dir.path().join("f56.tsv");
    let run = |name: &str, seed: &str, extra: &[&str]| -> Vec<u8> {
        let e = dir.path().join(name);
        let mut args = vec!["embed", "--data", s(&data), "--labels", s(&labels), "--iters", "200", "--seed", seed];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", s(&e)]);
        ok(&args);
        std::fs::read(e).unwrap()
    };
    let a = run("a.tsv", "7", &["--deterministic"]);
    let b = run("b.tsv", "7", &["--deterministic"]);
    assert_eq!(a, b);
    // Reductions run in a fixed order, so the thread count does not matter.
    assert_eq!(a, run("c.tsv", "7", &["--threads", "4"]));
    assert_ne!(a, run("d.tsv", "8", &["--deterministic"]));
}

#[test]
fn beta_grid_writes_one_run_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 100);
    let f14 = dir.path().join("f14.tsv");
    let e = dir.path().join("sweep.tsv");
    ok(&["embed", "--data", s(&data), "--labels", s(&f14), "--beta-prime-grid", "0.1,0.5,1", "--iters", "80", "--out", s(&e)]);
    for b in ["0.1", "0.5", "1"] {
        let p = dir.path().join(format!("sweep.beta{b}.tsv"));
        let meta = RunMetadata::load_json(RunMetadata::sidecar_path(&p)).unwrap();
        assert_eq!(meta.beta_prime, b.parse::<f64>().unwrap());
    }
    assert!(!e.exists());
    let bad = ctsne(&["embed", "--data", s(&data), "--beta-prime-grid", "0.1,2", "--out", s(&e)]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn combined_label_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 200);
    let e = dir.path().join("e.tsv");
    let (f14, f56) = (dir.path().join("f14.tsv"), dir.path().join("f56.tsv"));
    ok(&["embed", "--data", s(&data), "--labels", s(&f14), "--labels", s(&f56), "--iters", "50", "--out", s(&e)]);
    let meta = RunMetadata::load_json(RunMetadata::sidecar_path(&e)).unwrap();
    assert!(meta.num_classes > 5 && meta.num_classes <= 20);
}

#[test]
fn rank_puts_cluster_attribute_first() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 400);
    let f14 = std::fs::read_to_string(dir.path().join("f14.tsv")).unwrap();
    let first = f14.lines().nth(1).unwrap().to_string();
    let sel: String = f14
        .lines()
        .skip(1)
        .enumerate()
        .filter(|(_, l)| *l == first)
        .map(|(i, _)| format!("{i}\n"))
        .collect();
    let sel_file = dir.path().join("sel.txt");
    std::fs::write(&sel_file, format!("# one f14 cluster\n{sel}")).unwrap();
    let out = String::from_utf8(ok(&["rank", "--data", s(&data), "--selection-file", s(&sel_file)]).stdout).unwrap();
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("attribute\tweight"));
    let top = lines.next().unwrap().split('\t').next().unwrap();
    assert!(["x1", "x2", "x3", "x4"].contains(&top), "top attribute {top}");
    assert_eq!(out.lines().count(), 11);
}

#[test]
fn cca_output_chains_into_embed() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--generator", "cca5", "--seed", "1", "--out-dir", s(dir.path())]);
    let (data, big) = (dir.path().join("data.tsv"), dir.path().join("big.tsv"));
    // d = 5 and L = 10: removing every canonical direction leaves nothing,
    // so null-space runs cap the removal.
    let runs: [(&str, &[&str]); 2] = [("nullspace", &["--max-directions", "3"]), ("mincorr", &[])];
    for (variant, extra) in runs {
        let proj = dir.path().join(format!("{variant}.tsv"));
        let mut args = vec!["baseline-cca", "--data", s(&data), "--labels", s(&big), "--variant", variant];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", s(&proj)]);
        ok(&args);
        let e = dir.path().join(format!("{variant}-e.tsv"));
        ok(&["embed", "--data", s(&proj), "--iters", "50", "--out", s(&e)]);
        assert_eq!(EmbeddingMatrix::load_tsv(&e).unwrap().n(), 1000);
    }
    let out = ctsne(&["baseline-cca", "--data", s(&data), "--labels", s(&big), "--out", s(&dir.path().join("x.tsv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("null space exhausted"));
}

async fn call(app: &axum::Router, method: Method, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

#[tokio::test]
async fn server_job_matches_cli_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 250);
    let f14 = dir.path().join("f14.tsv");
    let e = dir.path().join("cli.tsv");
    ok(&[
        "embed", "--data", s(&data), "--labels", s(&f14), "--beta-prime", "0.05", "--perplexity", "15",
        "--iters", "300", "--seed", "11", "--deterministic", "--out", s(&e),
    ]);

    let state = AppState::start(&ServerConfig {
        data_dir: dir.path().join("server"),
        workers: 1,
    })
    .unwrap();
    let app = router(state);
    let (st, body) = call(&app, Method::POST, "/datasets", std::fs::read(&data).unwrap()).await;
    assert_eq!(st, StatusCode::CREATED);
    let dataset_id = serde_json::from_slice::<Value>(&body).unwrap()["id"].as_str().unwrap().to_string();
    // Same partition as the label file, built from selection sets.
    let codes: Vec<String> = std::fs::read_to_string(&f14).unwrap().lines().skip(1).map(str::to_string).collect();
    let first = codes[0].clone();
    let mut names: Vec<&String> = Vec::new();
    for c in &codes {
        if *c != first && !names.contains(&c) {
            names.push(c);
        }
    }
    let sets: Vec<Vec<usize>> = names
        .iter()
        .map(|name| (0..codes.len()).filter(|&i| &codes[i] == *name).collect())
        .collect();
    let (st, body) = call(
        &app,
        Method::POST,
        "/priors",
        serde_json::to_vec(&json!({ "dataset_id": dataset_id, "source": { "type": "selections", "sets": sets } })).unwrap(),
    )
    .await;
    assert_eq!(st, StatusCode::CREATED);
    let prior_id = serde_json::from_slice::<Value>(&body).unwrap()["id"].clone();
    let job = json!({
        "dataset_id": dataset_id,
        "prior_id": prior_id,
        "params": { "beta_prime": 0.05, "perplexity": 15.0, "optimizer": { "iterations": 300, "seed": 11 } },
    });
    let (st, body) = call(&app, Method::POST, "/jobs", serde_json::to_vec(&job).unwrap()).await;
    assert_eq!(st, StatusCode::ACCEPTED);
    let job_id = serde_json::from_slice::<Value>(&body).unwrap()["id"].as_str().unwrap().to_string();
    loop {
        let (_, body) = call(&app, Method::GET, &format!("/jobs/{job_id}"), Vec::new()).await;
        let v: Value = serde_json::from_slice(&body).unwrap();
        match v["state"].as_str().unwrap() {
            "finished" => break,
            "failed" => panic!("{v}"),
            _ => tokio::time::sleep(std::time::Duration::from_millis(20)).await,
        }
    }
    let (st, tsv) = call(&app, Method::GET, &format!("/jobs/{job_id}/embedding?format=tsv"), Vec::new()).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(tsv, std::fs::read(&e).unwrap());
}
