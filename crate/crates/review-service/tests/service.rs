use std::collections::BTreeMap;
use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use lgsa_core::adjudication::{
    calibrate, compute_agreement, read_annotations, AnnotationRecord, ReviewItem,
};
use lgsa_review_service::{router, AppState, NextResponse, RatingAck};
use serde_json::{json, Value};
use tower::ServiceExt;

const TOKEN: &str = "secret";

fn queue(n: usize) -> Vec<ReviewItem> {
    (0..n)
        .map(|i| ReviewItem {
            candidate_id: format!("c{i:02}"),
            original_text: format!("he paid with cash {i}"),
            candidate_text: format!("she paid with cash {i}"),
            target_attribute: "female".into(),
            partition_id: format!("lgsa/p{}", i % 2),
        })
        .collect()
}

fn app(n: usize, log: &Path) -> (Router, AppState) {
    let state = AppState::with_queue(queue(n), log, TOKEN.into()).unwrap();
    (router(state.clone()), state)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, "GET", uri, None, Some(TOKEN)).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn rate(app: &Router, item: &str, rater: &str, violated: bool, fluency: i64, flag: bool) -> (StatusCode, Value) {
    let body = json!({
        "rater_id": rater,
        "label_fidelity": if violated { "violated" } else { "preserved" },
        "fluency": fluency,
        "stereotype_flag": flag,
    });
    let (s, b) = call(app, "POST", &format!("/review/{item}/rating"), Some(body), Some(TOKEN)).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

#[tokio::test]
async fn requests_without_the_token_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(3, &dir.path().join("log.jsonl"));
    for uri in ["/review/next?rater=a", "/review/agreement", "/review/export", "/review/calibration"] {
        assert_eq!(call(&app, "GET", uri, None, None).await.0, StatusCode::UNAUTHORIZED);
        assert_eq!(call(&app, "GET", uri, None, Some("wrong")).await.0, StatusCode::UNAUTHORIZED);
    }
    let (s, _) = call(
        &app,
        "POST",
        "/review/c00/rating",
        Some(json!({"rater_id": "a", "label_fidelity": "preserved", "fluency": 3, "stereotype_flag": false})),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn next_walks_the_queue_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(3, &dir.path().join("log.jsonl"));
    let (s, v) = get_json(&app, "/review/next?rater=a").await;
    assert_eq!(s, StatusCode::OK);
    let next: NextResponse = serde_json::from_value(v).unwrap();
    assert_eq!(next.item.unwrap().candidate_id, "c00");
    assert_eq!(next.progress.rated, 0);

    for item in ["c00", "c01", "c02"] {
        let (s, _) = rate(&app, item, "a", false, 4, false).await;
        assert_eq!(s, StatusCode::OK);
    }
    let (_, v) = get_json(&app, "/review/next?rater=a").await;
    let next: NextResponse = serde_json::from_value(v).unwrap();
    assert!(next.done && next.item.is_none());
    assert_eq!(next.progress.rated, 3);
}

#[tokio::test]
async fn interleaved_raters_each_see_every_item_once() {
    let dir = tempfile::tempdir().unwrap();
    let (app, state) = app(5, &dir.path().join("log.jsonl"));
    let mut served: BTreeMap<(String, String), usize> = BTreeMap::new();
    loop {
        let mut any = false;
        for rater in ["a", "b"] {
            let (_, v) = get_json(&app, &format!("/review/next?rater={rater}")).await;
            let next: NextResponse = serde_json::from_value(v).unwrap();
            if let Some(item) = next.item {
                any = true;
                *served.entry((item.candidate_id.clone(), rater.into())).or_default() += 1;
                rate(&app, &item.candidate_id, rater, false, 5, false).await;
            }
        }
        if !any {
            break;
        }
    }
    assert_eq!(served.len(), 10);
    assert!(served.values().all(|&n| n == 1));
    // oracle: count (item, rater) pairs in the request log
    let mut from_log: BTreeMap<(String, String), usize> = BTreeMap::new();
    for r in state.records() {
        *from_log.entry((r.item_id, r.rater_id)).or_default() += 1;
    }
    assert_eq!(served, from_log);
}

#[tokio::test]
async fn rating_validation_and_unknown_items() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(2, &dir.path().join("log.jsonl"));
    assert_eq!(rate(&app, "c00", "a", false, 6, false).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(rate(&app, "c00", "a", false, 0, false).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(rate(&app, "c00", "", false, 3, false).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(rate(&app, "nope", "a", false, 3, false).await.0, StatusCode::NOT_FOUND);
    let (s, _) = call(
        &app,
        "POST",
        "/review/c00/rating",
        Some(json!({"rater_id": "a", "label_fidelity": "maybe", "fluency": 3, "stereotype_flag": false})),
        Some(TOKEN),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, v) = rate(&app, "c00", "a", false, 3, false).await;
    assert_eq!(s, StatusCode::OK);
    let ack: RatingAck = serde_json::from_value(v).unwrap();
    assert_eq!(ack.progress.rated, 1);
    assert_eq!(ack.progress.total, 2);
}

#[tokio::test]
async fn resubmission_keeps_only_the_latest_rating() {
    let dir = tempfile::tempdir().unwrap();
    let (app, state) = app(2, &dir.path().join("log.jsonl"));
    rate(&app, "c00", "a", false, 4, false).await;
    rate(&app, "c00", "b", false, 4, false).await;
    rate(&app, "c01", "a", false, 4, false).await;
    rate(&app, "c01", "b", false, 4, false).await;
    let (_, before) = get_json(&app, "/review/agreement").await;
    assert_eq!(before["label_fidelity"]["percent"], 1.0);

    let (_, ack) = rate(&app, "c00", "b", true, 4, false).await;
    assert_eq!(ack["progress"]["rated"], 2);
    let (_, after) = get_json(&app, "/review/agreement").await;
    assert_eq!(after["label_fidelity"]["percent"], 0.5);

    // oracle: recompute from the exported records
    let (_, body) = call(&app, "GET", "/review/export", None, Some(TOKEN)).await;
    let exported: Vec<AnnotationRecord> = String::from_utf8(body)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(exported, state.records());
    let stats = compute_agreement(&exported).unwrap();
    assert_eq!(serde_json::to_value(&stats).unwrap(), after);
}

#[tokio::test]
async fn agreement_needs_two_raters() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(2, &dir.path().join("log.jsonl"));
    assert_eq!(get_json(&app, "/review/agreement").await.0, StatusCode::CONFLICT);
    rate(&app, "c00", "a", false, 4, false).await;
    assert_eq!(get_json(&app, "/review/agreement").await.0, StatusCode::CONFLICT);
    rate(&app, "c00", "b", false, 4, true).await;
    rate(&app, "c01", "a", true, 4, false).await;
    rate(&app, "c01", "b", true, 4, true).await;
    let (s, v) = get_json(&app, "/review/agreement").await;
    assert_eq!(s, StatusCode::OK);
    // label fidelity agrees on both items with both classes present
    assert_eq!(v["label_fidelity"]["kappa"], 1.0);
    assert_eq!(v["n_raters"], 2);
}

#[tokio::test]
async fn calibration_flips_when_the_error_rate_exceeds_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(10, &dir.path().join("log.jsonl"));
    assert_eq!(get_json(&app, "/review/calibration").await.0, StatusCode::CONFLICT);
    for i in 0..10 {
        rate(&app, &format!("c{i:02}"), "a", false, 4, false).await;
    }
    rate(&app, "c03", "a", true, 4, false).await;
    let (s, v) = get_json(&app, "/review/calibration?tolerance=0.10").await;
    assert_eq!(s, StatusCode::OK);
    // 1 of 10 flagged: equal to the tolerance, not above it
    assert_eq!(v["decision"], "pass");
    rate(&app, "c04", "a", false, 4, true).await;
    let (_, v) = get_json(&app, "/review/calibration?tolerance=0.10").await;
    assert_eq!(v["decision"], "regenerate");
    assert_eq!(v["affected_partitions"], json!(["lgsa/p0", "lgsa/p1"]));
    assert_eq!(get_json(&app, "/review/calibration?tolerance=1.5").await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn restart_replays_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("review/annotations.jsonl");
    let exported_before;
    {
        let (app, _) = app(4, &log);
        rate(&app, "c00", "a", false, 4, false).await;
        rate(&app, "c00", "b", true, 2, true).await;
        rate(&app, "c01", "a", false, 5, false).await;
        rate(&app, "c00", "b", false, 3, false).await;
        exported_before = call(&app, "GET", "/review/export", None, Some(TOKEN)).await.1;
    }
    let (app, state) = app(4, &log);
    let exported_after = call(&app, "GET", "/review/export", None, Some(TOKEN)).await.1;
    assert_eq!(exported_before, exported_after);
    let (_, next) = get_json(&app, "/review/next?rater=a").await;
    assert_eq!(next["item"]["candidate_id"], "c02");

    // the log is importable by the file interface with nothing lost
    let from_file = read_annotations(&log).unwrap();
    assert_eq!(from_file, state.records());
    let partitions: BTreeMap<String, String> =
        queue(4).into_iter().map(|i| (i.candidate_id, i.partition_id)).collect();
    let (_, via_http) = get_json(&app, "/review/calibration").await;
    assert_eq!(
        serde_json::to_value(calibrate(&from_file, 0.10, &partitions).unwrap()).unwrap(),
        via_http
    );
}

#[tokio::test]
async fn log_rating_unknown_item_is_refused_at_startup() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    std::fs::write(
        &log,
        "{\"item_id\":\"zz\",\"rater_id\":\"a\",\"label_fidelity\":\"preserved\",\"fluency\":3,\"stereotype_flag\":false,\"timestamp\":1}\n",
    )
    .unwrap();
    assert!(AppState::with_queue(queue(2), &log, TOKEN.into()).is_err());
    assert!(AppState::with_queue(queue(2), &dir.path().join("other.jsonl"), String::new()).is_err());
}
