use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use roizoom_service::store::{JobKind, JobRecord, JobResult, JobState, JobStore};
use roizoom_service::{router, AppState, ServiceConfig};

fn app(workers: usize) -> Router {
    let cfg = ServiceConfig {
        workers,
        ..ServiceConfig::default()
    };
    router(AppState::new(&cfg).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
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

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn scan(seed: u64) -> Value {
    json!({ "phantom": "shepp_logan", "preset": "tiny", "seed": seed, "q": 2, "measurement": "inverse_crime" })
}

async fn session(app: &Router, seed: u64) -> String {
    let (s, v) = call_json(app, "POST", "/sessions", Some(scan(seed))).await;
    assert!(s.is_success(), "{s} {v}");
    v["id"].as_str().unwrap().to_string()
}

async fn submit(app: &Router, session: &str, body: Value) -> String {
    let (s, v) = call_json(app, "POST", &format!("/sessions/{session}/jobs"), Some(body)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["state"], "queued");
    v["id"].as_str().unwrap().to_string()
}

/// Polls until terminal, asserting every observation is monotone.
async fn wait(app: &Router, job: &str) -> JobRecord {
    let start = Instant::now();
    let (mut rank, mut progress) = (0u8, 0.0f64);
    loop {
        let (s, v) = call_json(app, "GET", &format!("/jobs/{job}"), None).await;
        assert_eq!(s, StatusCode::OK);
        let rec: JobRecord = serde_json::from_value(v).unwrap();
        assert!(rec.state.rank() >= rank, "state went back to {:?}", rec.state);
        assert!(rec.progress >= progress, "progress went back {progress} -> {}", rec.progress);
        rank = rec.state.rank();
        progress = rec.progress;
        if rec.state.is_terminal() {
            return rec;
        }
        assert!(start.elapsed() < Duration::from_secs(120), "job {job} did not finish");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

async fn reconstructed(app: &Router, seed: u64) -> String {
    let ses = session(app, seed).await;
    let job = submit(app, &ses, json!({ "kind": "reconstruct", "lambda": 0.01 })).await;
    let rec = wait(app, &job).await;
    assert_eq!(rec.state, JobState::Done, "{:?}", rec.error);
    ses
}

fn png_size(bytes: &[u8]) -> (u32, u32) {
    assert_eq!(&bytes[1..4], b"PNG");
    let w = u32::from_be_bytes(bytes[16..20].try_into().unwrap());
    let h = u32::from_be_bytes(bytes[20..24].try_into().unwrap());
    (w, h)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn lifecycle_reconstruct_then_zoom() {
    let app = app(2);
    assert_eq!(call(&app, "GET", "/healthz", None).await.0, StatusCode::OK);
    let ses = reconstructed(&app, 3).await;
    let (_, view) = call_json(&app, "GET", &format!("/sessions/{ses}"), None).await;
    assert!(view["reconstruction"]["image"].is_string());
    assert_eq!(view["width"], 32);

    let roi = json!({ "row0": 8, "col0": 10, "h": 8, "w": 6, "q": 2 });
    let job = submit(&app, &ses, json!({ "kind": "zoom", "roi": roi, "method": "lzfg-tv" })).await;
    let rec = wait(&app, &job).await;
    assert_eq!(rec.state, JobState::Done, "{:?}", rec.error);
    assert_eq!(rec.progress, 1.0);
    let result = rec.result.unwrap();
    assert_eq!(result.images.len(), 1);
    assert!(result.psnr[0].is_some());

    let (s, png) = call(&app, "GET", &format!("/images/{}?format=png", result.images[0]), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(png_size(&png), (12, 16));
    let (s, raw) = call(&app, "GET", &format!("/images/{}?format=raw", result.images[0]), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&raw[..4], b"RZF1");
    let (s, _) = call(&app, "GET", &format!("/images/{}?format=tiff", result.images[0]), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, csv) = call(&app, "GET", &format!("/traces/{}", result.traces[0]), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(String::from_utf8(csv).unwrap().starts_with("iter,objective"));

    let (s, v) = call_json(&app, "POST", &format!("/jobs/{job}/cancel"), None).await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn path_returns_one_image_per_strength_in_order() {
    let app = app(2);
    let ses = reconstructed(&app, 4).await;
    let grid = [0.001, 0.01, 0.03, 0.1, 0.3];
    let roi = json!({ "row0": 4, "col0": 4, "h": 6, "w": 6, "q": 2 });
    let body = json!({ "kind": "path", "roi": roi, "lambda_grid": grid, "solver": { "max_iters": 15 } });
    let rec = wait(&app, &submit(&app, &ses, body).await).await;
    assert_eq!(rec.state, JobState::Done, "{:?}", rec.error);
    let result = rec.result.unwrap();
    assert_eq!(result.images.len(), 5);
    assert_eq!(result.strengths, grid.map(Some).to_vec());
    let mut ids = result.images.clone();
    ids.dedup();
    assert_eq!(ids.len(), 5);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn same_payload_same_session() {
    let app = app(1);
    let (s1, v1) = call_json(&app, "POST", "/sessions", Some(scan(9))).await;
    let (s2, v2) = call_json(&app, "POST", "/sessions", Some(scan(9))).await;
    assert_eq!((s1, s2), (StatusCode::CREATED, StatusCode::OK));
    assert_eq!(v1["id"], v2["id"]);
    assert_eq!(v1["ground_truth_image"], v2["ground_truth_image"]);
    let (_, v3) = call_json(&app, "POST", "/sessions", Some(scan(10))).await;
    assert_ne!(v1["id"], v3["id"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn error_statuses() {
    let app = app(1);
    let (s, _) = call_json(&app, "GET", "/jobs/job-nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call_json(&app, "POST", "/jobs/job-nope/cancel", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call_json(&app, "GET", "/sessions/ses-nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call_json(&app, "GET", "/images/img-nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let mut bad = scan(1);
    bad["phantom"] = "teapot".into();
    let (s, v) = call_json(&app, "POST", "/sessions", Some(bad)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("teapot"));

    let ses = session(&app, 1).await;
    let path = format!("/sessions/{ses}/jobs");
    let (s, v) = call_json(&app, "POST", &path, Some(json!({ "kind": "zoom", "roi": { "row0": 0, "col0": 0, "h": 4, "w": 4, "q": 2 } }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["field"], "source");

    let job = submit(&app, &ses, json!({ "kind": "reconstruct", "lambda": 0.01 })).await;
    wait(&app, &job).await;
    let outside = json!({ "kind": "zoom", "roi": { "row0": 30, "col0": 0, "h": 8, "w": 4, "q": 2 } });
    let (s, v) = call_json(&app, "POST", &path, Some(outside)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["field"], "roi");
    let (s, v) = call_json(&app, "POST", &path, Some(json!({ "kind": "reconstruct" }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["field"], "lambda");
    let (s, v) = call_json(&app, "POST", &path, Some(json!({ "kind": "teleport" }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["field"], "kind");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_jobs_all_complete() {
    let app = app(2);
    let ses = reconstructed(&app, 5).await;
    let mut jobs = Vec::new();
    for i in 0..6 {
        let roi = json!({ "row0": 2 + 3 * i, "col0": 6, "h": 6, "w": 6, "q": 2 });
        let method = if i % 2 == 0 { "lzfg-tv" } else { "naive" };
        jobs.push(submit(&app, &ses, json!({ "kind": "zoom", "roi": roi, "method": method })).await);
    }
    for j in &jobs {
        let rec = wait(&app, j).await;
        assert_eq!(rec.state, JobState::Done, "{:?}", rec.error);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn cancel_queued_job() {
    // one worker, busy with a long reconstruction
    let app = app(1);
    let ses = session(&app, 6).await;
    let long = submit(&app, &ses, json!({ "kind": "reconstruct", "lambda_grid": [0.001, 0.01, 0.1], "solver": { "max_iters": 400 } })).await;
    let queued = submit(&app, &ses, json!({ "kind": "reconstruct", "lambda": 0.01 })).await;
    let (s, v) = call_json(&app, "POST", &format!("/jobs/{queued}/cancel"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["state"], "failed");
    assert_eq!(v["error"], "cancelled");
    let (s, _) = call_json(&app, "POST", &format!("/jobs/{long}/cancel"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(wait(&app, &long).await.error.as_deref(), Some("cancelled"));
    assert_eq!(wait(&app, &queued).await.state, JobState::Failed);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn finished_jobs_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        workers: 1,
        data_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    };
    let first = router(AppState::new(&cfg).unwrap());
    let ses = session(&first, 7).await;
    let job = submit(&first, &ses, json!({ "kind": "reconstruct", "lambda": 0.01 })).await;
    let rec = wait(&first, &job).await;
    let image = rec.result.unwrap().images[0].clone();

    let second = router(AppState::new(&cfg).unwrap());
    let (s, v) = call_json(&second, "GET", &format!("/jobs/{job}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["state"], "done");
    assert_eq!(call(&second, "GET", &format!("/images/{image}"), None).await.0, StatusCode::OK);
}

mod lifecycle_props {
    use super::*;
    use proptest::prelude::*;

    #[derive(Debug, Clone)]
    enum Op {
        Start,
        Progress(f64),
        Finish(bool),
        Cancel,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            Just(Op::Start),
            (-0.5f64..1.5).prop_map(Op::Progress),
            any::<bool>().prop_map(Op::Finish),
            Just(Op::Cancel),
        ]
    }

    proptest! {
        #[test]
        fn any_update_sequence_is_monotone(ops in proptest::collection::vec(op(), 0..40)) {
            let store = JobStore::new();
            store.insert(JobRecord::new("j".into(), "s".into(), JobKind::Zoom));
            let mut last = store.get("j").unwrap();
            for o in ops {
                match o {
                    Op::Start => { store.start("j"); }
                    Op::Progress(p) => store.progress("j", p),
                    Op::Finish(ok) => {
                        let outcome = if ok { Ok(JobResult::default()) } else { Err("boom".to_string()) };
                        store.finish("j", outcome);
                    }
                    Op::Cancel => { let _ = store.cancel("j"); }
                }
                let now = store.get("j").unwrap();
                prop_assert!(now.state.rank() >= last.state.rank());
                prop_assert!(now.progress >= last.progress);
                prop_assert!((0.0..=1.0).contains(&now.progress));
                if last.state.is_terminal() {
                    prop_assert_eq!(&now, &last);
                }
                last = now;
            }
        }
    }
}

