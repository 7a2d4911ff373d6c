use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use memscore::protocol::ProtocolConfig;
use memscore::simulator::{simulate_study, SimConfig};
use memscore::{ManualClock, SurveyService};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, String) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

fn setup(media: Option<std::path::PathBuf>) -> (Router, Arc<ManualClock>, Value) {
    let protocol = ProtocolConfig::default();
    let bundle = simulate_study(&SimConfig { n_videos: 20, n_participants: 10, ..SimConfig::default() }, &protocol).unwrap();
    let clock = Arc::new(ManualClock::new(1_000_000));
    let service = Arc::new(SurveyService::new(clock.clone()));
    let create = json!({ "id": "s1", "protocol": protocol, "study": bundle.study, "assignment_cap": 2 });
    (memscore_cli::server::router(service, media), clock, create)
}

#[tokio::test]
async fn full_session_over_http() {
    let (app, clock, create) = setup(None);
    let (st, body) = call(&app, "POST", "/studies", Some(create)).await;
    assert_eq!(st, StatusCode::CREATED, "{body}");
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["id"], "s1");

    let (st, _) = call(&app, "GET", "/studies/s1/session?participant=p1", None).await;
    assert_eq!(st, StatusCode::CONFLICT, "draft study must not assign");
    assert_eq!(call(&app, "POST", "/studies/s1/open", None).await.0, StatusCode::OK);

    let (st, body) = call(&app, "GET", "/studies/s1/session?participant=p1", None).await;
    assert_eq!(st, StatusCode::OK, "{body}");
    let a: Value = serde_json::from_str(&body).unwrap();
    let sid = a["session_id"].as_str().unwrap().to_owned();
    assert!(!a["playlist"].as_array().unwrap().is_empty());
    assert_eq!(call(&app, "GET", "/studies/s1/session?participant=p1", None).await.0, StatusCode::CONFLICT);

    let (st, _) = call(&app, "POST", &format!("/sessions/{sid}/focus-loss"), Some(json!({"detail": "blur"}))).await;
    assert_eq!(st, StatusCode::NO_CONTENT);

    let mut questions = 0;
    for _ in 0..1000 {
        let (st, body) = call(&app, "GET", &format!("/sessions/{sid}/next"), None).await;
        assert_eq!(st, StatusCode::OK, "{body}");
        let item: Value = serde_json::from_str(&body).unwrap();
        match item["kind"].as_str().unwrap() {
            "rest" => clock.advance(item["remaining_ms"].as_u64().unwrap()),
            "flash" => clock.advance(item["flash_ms"].as_u64().unwrap()),
            "question" => {
                questions += 1;
                clock.advance(1500);
                let r = json!({"question_id": item["question_id"], "answer": "no", "client_latency_ms": 1400});
                let (st, body) = call(&app, "POST", &format!("/sessions/{sid}/responses"), Some(r)).await;
                assert_eq!(st, StatusCode::OK, "{body}");
            }
            "done" => break,
            other => panic!("unexpected item {other}"),
        }
    }
    assert!(questions > 0);
    let (st, body) = call(&app, "GET", &format!("/sessions/{sid}/next"), None).await;
    assert_eq!((st, body.contains("done")), (StatusCode::OK, true));

    let (st, csv) = call(&app, "GET", "/studies/s1/scores.csv", None).await;
    assert_eq!(st, StatusCode::OK, "{csv}");
    assert!(csv.starts_with("video_id,score,hit_rate,n_participants"));

    assert_eq!(call(&app, "POST", "/studies/s1/close", None).await.0, StatusCode::OK);
    assert_eq!(call(&app, "GET", "/studies/s1/session?participant=p2", None).await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn error_statuses() {
    let (app, _, create) = setup(None);
    assert_eq!(call(&app, "GET", "/studies/nope", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/sessions/nope/next", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", "/studies", Some(create.clone())).await.0, StatusCode::CREATED);
    let (st, body) = call(&app, "POST", "/studies", Some(create)).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert!(serde_json::from_str::<Value>(&body).unwrap()["error"].is_string());
    call(&app, "POST", "/studies/s1/open", None).await;
    let (_, body) = call(&app, "GET", "/studies/s1/session?participant=p1", None).await;
    let sid = serde_json::from_str::<Value>(&body).unwrap()["session_id"].as_str().unwrap().to_owned();
    let r = json!({"question_id": "q_missing", "answer": "yes", "client_latency_ms": 10});
    let (st, _) = call(&app, "POST", &format!("/sessions/{sid}/responses"), Some(r)).await;
    assert!(st == StatusCode::UNPROCESSABLE_ENTITY || st == StatusCode::CONFLICT, "{st}");
}

#[tokio::test]
async fn over_cap_assignments_are_flagged() {
    let (app, _, create) = setup(None);
    call(&app, "POST", "/studies", Some(create)).await;
    call(&app, "POST", "/studies/s1/open", None).await;
    let study: Value = serde_json::from_str(&call(&app, "GET", "/studies/s1", None).await.1).unwrap();
    assert_eq!(study["id"], "s1");
    let mut flagged = 0;
    for p in 0..60 {
        let (st, body) = call(&app, "GET", &format!("/studies/s1/session?participant=p{p}"), None).await;
        assert_eq!(st, StatusCode::OK, "{body}");
        flagged += serde_json::from_str::<Value>(&body).unwrap()["over_cap"].as_bool().unwrap() as usize;
    }
    assert!(flagged > 0);
}

#[tokio::test]
async fn media_is_served_from_the_data_dir() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("videos")).unwrap();
    std::fs::write(dir.path().join("videos/clip.mp4"), b"fake video").unwrap();
    let (app, _, _) = setup(Some(dir.path().to_path_buf()));
    let (st, body) = call(&app, "GET", "/media/videos/clip.mp4", None).await;
    assert_eq!((st, body.as_str()), (StatusCode::OK, "fake video"));
    assert_eq!(call(&app, "GET", "/media/videos/missing.mp4", None).await.0, StatusCode::NOT_FOUND);
}
