use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use panelguard_cli::args::DataArgs;
use panelguard_cli::serve::{router, Snapshot};
use serde_json::{json, Value};
use tower::ServiceExt;

const DATA: &str = "id,base,value,state\n\
    01001,54571,55601,01\n\
    01003,182265,226535,01\n\
    01005,27457,24674,01\n\
    01007,22915,22580,01\n\
    02013,3703,3389,02\n\
    02016,5561,5059,02\n\
    04001,71518,73115,04\n\
    04003,131346,126427,04\n\
    05001,19019,17477,05\n\
    06001,1510271,1671329,06\n\
    06003,1175,1129,06\n\
    06005,38091,40474,06\n";

fn data_args() -> DataArgs {
    DataArgs {
        id_col: "id".into(),
        base_col: "base".into(),
        value_col: "value".into(),
        time_col: None,
        time_spacing: None,
        zero_policy: "auto".into(),
    }
}

fn app() -> Router {
    router(Arc::new(Snapshot::load(DATA.as_bytes(), &data_args()).unwrap()))
}

async fn call(app: Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn cli_csv(args: &[&str]) -> String {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    std::fs::write(&input, DATA).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_panelguard"))
        .args(args)
        .arg("-i")
        .arg(&input)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Asserts the JSON records equal the CLI rows field by field, exactly.
fn assert_same(records: &[Value], csv: &str) {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(records.len(), rows.len());
    for (rec, row) in records.iter().zip(&rows) {
        for (name, cell) in header.iter().zip(row) {
            let v = &rec[*name];
            match *name {
                "id" => assert_eq!(v.as_str().unwrap(), *cell),
                "rank" => assert_eq!(v.as_u64().unwrap().to_string(), *cell),
                "flagged" => assert_eq!(v.as_bool().unwrap().to_string(), *cell),
                "t" => assert!(v.is_null() && cell.is_empty()),
                "state" => {}
                _ => assert_eq!(v.as_f64().unwrap(), cell.parse::<f64>().unwrap(), "{name}"),
            }
        }
    }
}

#[tokio::test]
async fn meta_describes_the_snapshot() {
    let (status, v) = call(app(), "GET", "/api/meta", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["n"], 12);
    assert_eq!(v["columns"], json!(["id", "base", "value", "state"]));
    assert_eq!(v["range"].as_f64().unwrap(), 1_671_329.0 - 1129.0);
    let expect = (1_671_329f64 - 1129.0).log10() / 25.0 - 1.0;
    assert!((v["bryan_q"].as_f64().unwrap() - expect).abs() < 1e-12);
    assert_eq!(v["default_q"].as_f64().unwrap(), -0.5);
    assert_eq!(v["q_step"].as_f64().unwrap(), 0.1);
}

#[tokio::test]
async fn score_matches_cli_output() {
    for q in ["-0.5", "-0.4", "-1", "0"] {
        let (status, v) = call(
            app(),
            "POST",
            "/api/score",
            Some(json!({ "q": q.parse::<f64>().unwrap() })),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        assert!(v["thresholds"].is_null());
        assert_same(v["records"].as_array().unwrap(), &cli_csv(&["score", "--q", q]));
    }
}

#[tokio::test]
async fn flagged_scores_match_cli_output() {
    let cases = [
        (
            json!({ "q": -0.3, "rule": { "kind": "tukey_fence", "k": 1.5 } }),
            vec!["flag", "--q", "-0.3", "--fence", "1.5"],
        ),
        (
            json!({ "q": -0.5, "rule": { "kind": "quantile", "alpha": 0.75 } }),
            vec!["flag", "--quantile", "0.75"],
        ),
        (
            json!({ "q": -0.5, "signed": true, "rule": { "kind": "signed_fixed", "c_minus": -5, "c_plus": 3 } }),
            vec!["flag", "--signed", "--signed-bounds", "-5,3"],
        ),
        (
            json!({ "q": -0.5, "p": 2, "rule": { "kind": "fixed", "c": 100 } }),
            vec!["flag", "--p", "2", "--critical", "100"],
        ),
    ];
    for (body, args) in cases {
        let (status, v) = call(app(), "POST", "/api/score", Some(body.clone())).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        let csv = cli_csv(&args);
        assert_same(v["records"].as_array().unwrap(), &csv);
        let cli_flags = csv.lines().skip(1).filter(|l| l.contains(",true")).count();
        assert_eq!(v["flagged_count"].as_u64().unwrap() as usize, cli_flags, "{body}");
    }
}

#[tokio::test]
async fn score_rejects_bad_requests() {
    let bad = [
        json!({ "q": -0.5, "rule": { "kind": "signed_fence", "k": 1.5 } }),
        json!({ "q": -0.5, "signed": true, "rule": { "kind": "fixed", "c": 1 } }),
        json!({ "q": -0.5, "p": 0 }),
        json!({ "q": -0.5, "rule": { "kind": "quantile", "alpha": 1.5 } }),
        json!({ "q": -0.5, "time_invariant": true }),
        json!({ "q": "x" }),
        json!({ "q": -0.5, "bogus": 1 }),
    ];
    for body in bad {
        let (status, v) = call(app(), "POST", "/api/score", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert!(v["error"].is_string());
    }
}

fn table1_rows() -> Value {
    let csv =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/table1.csv")).unwrap();
    let rows: Vec<Value> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            let opt = |s: &str| {
                if s.is_empty() {
                    Value::Null
                } else {
                    json!(s.parse::<f64>().unwrap())
                }
            };
            json!({
                "class_min": c[0].parse::<u64>().unwrap(),
                "class_max": if c[1].is_empty() { Value::Null } else { json!(c[1].parse::<u64>().unwrap()) },
                "ratio": c[2].parse::<f64>().unwrap(),
                "b_mid": opt(c[3]),
                "eps_mid": opt(c[4]),
            })
        })
        .collect();
    Value::Array(rows)
}

#[tokio::test]
async fn fit_endpoint_compiles_tables() {
    let body = json!({ "mode": "size-class", "table": table1_rows(), "exclusions": ["ratio=0.40"] });
    let (status, v) = call(app(), "POST", "/api/fit", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert!((v["exponent"].as_f64().unwrap() + 0.32675).abs() < 1e-3);
    assert!((v["critical"].as_f64().unwrap() - 222.61).abs() < 0.25);
    assert_eq!(v["violations"].as_array().unwrap().len(), 2);
    assert!(v["rule_file"].as_str().unwrap().contains("rule=fixed"));

    let t2 =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/table2.csv")).unwrap();
    let body = json!({ "mode": "reference", "table": t2, "endpoint": true, "round_b": "-1/3" });
    let (status, v) = call(app(), "POST", "/api/fit", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["critical"].as_f64().unwrap(), 80.0);
    assert_eq!(v["comparison"], "at_least");

    let body = json!({ "mode": "reference", "table": t2 });
    let (_, v) = call(app(), "POST", "/api/fit", Some(body)).await;
    assert!((v["critical"].as_f64().unwrap() - 132.8879).abs() < 0.05);

    let body = json!({ "mode": "size-class", "table": [{ "class_min": 1, "class_max": 9, "ratio": 1.0 }] });
    let (status, v) = call(app(), "POST", "/api/fit", Some(body)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["kind"], "fit");

    let body = json!({ "mode": "triangle", "table": [] });
    assert_eq!(
        call(app(), "POST", "/api/fit", Some(body)).await.0,
        StatusCode::BAD_REQUEST
    );
}

#[test]
fn serve_binary_answers_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    std::fs::write(&input, DATA).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_panelguard"))
        .args(["serve", "--addr", "127.0.0.1:0", "-i"])
        .arg(&input)
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let addr = loop {
        let mut line = String::new();
        if stderr.read_line(&mut line).unwrap() == 0 {
            let _ = child.kill();
            panic!("server exited before listening");
        }
        if let Some(a) = line.trim().strip_prefix("panelguard: info: listening on http://") {
            break a.to_string();
        }
    };
    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(
        stream,
        "GET /api/meta HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    let _ = child.kill();
    let _ = child.wait();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    let body = &resp[resp.find("\r\n\r\n").unwrap() + 4..];
    let v: Value = serde_json::from_str(body).unwrap();
    assert_eq!(v["n"], 12);
}
