use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use tower::ServiceExt;

use fundaml::pipeline::{RunStore, ScoredCase};
use fundaml::service::{router, ServiceConfig};
use fundaml::synthgen::GroundTruth;

fn fundaml(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fundaml"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fundaml(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/fund_a_weeks.csv");

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fundaml(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(fundaml(dir.path(), &["--version"]).status.code(), Some(0));
    assert_eq!(fundaml(dir.path(), &["ingest", "--bogus"]).status.code(), Some(1));
    assert_eq!(fundaml(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(fundaml(dir.path(), &["ingest", "--in", "missing.csv"]).status.code(), Some(1));
    assert_eq!(
        fundaml(dir.path(), &["screen", "--in", FIXTURE, "--s", "1.5", "-o", "x.csv"]).status.code(),
        Some(1)
    );
    assert_eq!(fundaml(dir.path(), &["features", "--in", FIXTURE, "--k", "11", "-o", "p.csv"]).status.code(), Some(1));

    fs::write(dir.path().join("empty.csv"), "customer_id,fund_id,sub_fund_id,date,direction,amount,shares_value,customer_type\n").unwrap();
    let out = fundaml(dir.path(), &["run-batch", "--in", "empty.csv", "--out", "runs"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no aggregates"));
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let report = ok(d, &["ingest", "--in", FIXTURE, "-o", "clean.csv", "--partition-dir", "parts", "--rejections", "rej.csv"]);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["records_accepted"], 12);
    assert!(d.join("parts/individual.csv").is_file() && d.join("parts/corporate.csv").is_file());
    let csv_report = ok(d, &["ingest", "--in", FIXTURE, "--format", "csv"]);
    assert!(csv_report.lines().nth(1).unwrap().starts_with("12,12,0,0"));

    ok(d, &["features", "--in", "clean.csv", "--granularity", "week", "--k", "0", "-o", "points.csv"]);
    let points = fs::read_to_string(d.join("points.csv")).unwrap();
    assert_eq!(points.lines().count(), 7);
    assert!(points.starts_with("customer_id,fund_id,granularity,period_index,alpha,beta,theta,delta1,delta2,lookback_k,flag\n"));

    ok(d, &["screen", "--in", "points.csv", "--s", "0.4", "--S", "0.4", "-o", "screened.csv"]);
    let screened = fs::read_to_string(d.join("screened.csv")).unwrap();
    assert_eq!(screened.lines().filter(|l| l.ends_with(",true")).count(), 3);

    let summary = ok(d, &["cluster", "--in", "points.csv", "--clusters", "2", "-o", "assign.csv"]);
    let summary: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(summary["sizes"].as_array().unwrap().len(), 2);
    let assign = fs::read_to_string(d.join("assign.csv")).unwrap();
    assert!(assign.starts_with("point_id,cluster\n"));
    assert_eq!(assign.lines().count(), 7);
}

#[test]
fn generate_batch_investigate_score() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen", "--customers", "300", "--inject", "rapid:5", "--inject", "exchange:2", "--seed", "3", "-o", "data"]);
    let truth: GroundTruth = serde_json::from_str(&fs::read_to_string(d.join("data/ground_truth.json")).unwrap()).unwrap();
    assert_eq!(truth.customers.len(), 7);

    let run = ok(
        d,
        &["run-batch", "--in", "data/tx.csv", "--out", "runs", "--s", "0.4", "--S", "0.4", "--k", "3", "--cycles", "400"],
    );
    let run = run.trim();
    for g in ["day", "week", "month"] {
        assert!(d.join("runs").join(run).join("models").join(format!("{g}.json")).is_file());
    }

    let target = &truth.customers[0];
    let date = target.dates.last().unwrap().to_string();
    let args = ["investigate", "--store", "runs", "--run", run, "--customer", &target.customer_id, "--fund", &target.fund_id, "--date", &date];
    let cli_case: ScoredCase = serde_json::from_str(&ok(d, &args)).unwrap();
    assert_eq!(cli_case.degrees.len(), 3);
    let csv = ok(d, &[&args[..], &["--format", "csv"]].concat());
    assert_eq!(csv.lines().count(), 4);

    // Same question through the HTTP API.
    let store = Arc::new(RunStore::open(d.join("runs")).unwrap());
    let body = serde_json::json!({"customer_id": target.customer_id, "fund_id": target.fund_id, "date": date});
    let req = Request::post(format!("/runs/{run}/investigate"))
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let bytes = rt.block_on(async {
        let resp = router(store, ServiceConfig::default()).oneshot(req).await.unwrap();
        assert!(resp.status().is_success());
        resp.into_body().collect().await.unwrap().to_bytes()
    });
    let api_case: ScoredCase = serde_json::from_slice(&bytes).unwrap();
    assert!(api_case.same_scoring(&cli_case));
    for (g, v) in &cli_case.degrees {
        assert_eq!(v.to_bits(), api_case.degrees[g].to_bits());
    }

    let ranked = ok(d, &["score-all", "--store", "runs", "--run", run, "--granularities", "day,week", "--customers"]);
    let mut lines = ranked.lines();
    assert_eq!(lines.next(), Some("rank,customer_id,fund_id,granularity,period_start,degree"));
    let top: Vec<&str> = lines.take(15).map(|l| l.split(',').nth(1).unwrap()).collect();
    let hits = truth.customers.iter().filter(|c| top.contains(&c.customer_id.as_str())).count();
    assert!(hits >= 6, "{hits} of 7 injected customers in the top 15");

    let all = ok(d, &["score-all", "--store", "runs", "--run", run, "-o", "scores.csv"]);
    assert!(all.is_empty());
    let scores = fs::read_to_string(d.join("scores.csv")).unwrap();
    assert!(scores.starts_with("rank,customer_id,fund_id,granularity,period_index,period_start,delta1,delta2,degree\n"));

    assert_eq!(fundaml(d, &["investigate", "--store", "runs", "--run", "run-missing", "--customer", "C1", "--date", "2000-01-01"]).status.code(), Some(1));
}
