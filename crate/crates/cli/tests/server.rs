mod common;

use std::io::{self, Write};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use audit_cli::server::{router, SurveyServer};
use audit_core::ingest::{ImageKey, ParseMode, Split};
use audit_core::survey::{build_queue, read_event_log, QueueEntry, SurveyState};

/// An event log the test can read back.
#[derive(Clone, Default)]
struct SharedLog(Arc<Mutex<Vec<u8>>>);

impl Write for SharedLog {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap().write(buf)
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

struct BrokenLog;

impl Write for BrokenLog {
    fn write(&mut self, _: &[u8]) -> io::Result<usize> {
        Err(io::Error::other("disk full"))
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

fn entries() -> Vec<QueueEntry> {
    [("n02837789", "bikini", 0.8, "a.JPEG"), ("n02837789", "bikini", 0.8, "b.JPEG"), ("n03710637", "maillot", 0.7, "c.JPEG")]
        .into_iter()
        .map(|(w, l, m, f)| QueueEntry {
            image: ImageKey::new(w, Split::Train, format!("{w}_{f}")),
            class_label: l.into(),
            mean_nsfw_train: m,
        })
        .collect()
}

fn state(quorum: usize) -> SurveyState {
    SurveyState::new(build_queue(&entries()).unwrap(), quorum).unwrap()
}

fn clock() -> audit_cli::server::Clock {
    Arc::new(|| Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap())
}

fn app_with(log: Box<dyn Write + Send>, image_root: Option<std::path::PathBuf>) -> (Arc<SurveyServer>, Router) {
    let server = Arc::new(SurveyServer::new(state(2), log, clock(), image_root));
    (server.clone(), router(server, None))
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>, Option<String>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let ct = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string());
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body, ct)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, body, _) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

async fn post_raw(app: &Router, body: &str) -> (StatusCode, Value) {
    let req = Request::post("/api/labels")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, body, _) = send(app, req).await;
    (s, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

async fn label(app: &Router, annotator: &str, item: &str, category: &str) -> (StatusCode, Value) {
    post_raw(app, &json!({"annotator": annotator, "item_id": item, "category": category}).to_string()).await
}

const A: &str = "n02837789:train:n02837789_a.JPEG";
const B: &str = "n02837789:train:n02837789_b.JPEG";
const C: &str = "n03710637:train:n03710637_c.JPEG";

#[tokio::test]
async fn next_item_follows_queue_order_per_annotator() {
    let (_, app) = app_with(Box::new(SharedLog::default()), None);
    let (s, v) = get(&app, "/api/queue/next?annotator=x").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["item"]["item_id"], A);
    assert_eq!(v["labeled"], 0);
    label(&app, "x", A, "upskirt").await;
    let (_, v) = get(&app, "/api/queue/next?annotator=x").await;
    assert_eq!(v["item"]["item_id"], B);
    assert_eq!(v["labeled"], 1);
    // someone else still starts at the top
    let (_, v) = get(&app, "/api/queue/next?annotator=y").await;
    assert_eq!(v["item"]["item_id"], A);
    for id in [B, C] {
        label(&app, "x", id, "none_of_these").await;
    }
    let (_, v) = get(&app, "/api/queue/next?annotator=x").await;
    assert_eq!(v["item"], Value::Null);
    assert_eq!(v["labeled"], 3);
}

#[tokio::test]
async fn next_item_requires_an_annotator() {
    let (_, app) = app_with(Box::new(SharedLog::default()), None);
    for uri in ["/api/queue/next", "/api/queue/next?annotator=", "/api/queue/next?annotator=%20"] {
        let (s, v) = get(&app, uri).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{uri}");
        assert!(v["error"].is_string());
    }
}

#[tokio::test]
async fn labels_reach_consensus_and_close_items() {
    let log = SharedLog::default();
    let (server, app) = app_with(Box::new(log.clone()), None);
    let (s, v) = label(&app, "x", A, "beach_voyeur").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], json!({"state": "open"}));
    assert_eq!(v["changed"], true);
    let (_, v) = label(&app, "y", A, "beach_voyeur").await;
    assert_eq!(v["status"], json!({"state": "consensus", "category": "beach_voyeur"}));
    let (s, v) = label(&app, "z", A, "upskirt").await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(v["error"].as_str().unwrap().contains("closed"));

    // disagreement stays open until someone changes their mind
    label(&app, "x", B, "none_of_these").await;
    let (_, v) = label(&app, "y", B, "upskirt").await;
    assert_eq!(v["status"]["state"], "open");
    let (_, v) = label(&app, "y", B, "none_of_these").await;
    assert_eq!(v["status"]["state"], "exhausted");

    let (s, p) = get(&app, "/api/progress").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(p["total_items"], 3);
    assert_eq!(p["consensus"], 1);
    assert_eq!(p["exhausted"], 1);
    assert_eq!(p["open"], 1);
    assert_eq!(p["by_category"]["beach_voyeur"], 1);
    assert_eq!(p["total_labels"], 4);

    let (_, c) = get(&app, "/api/consensus").await;
    assert_eq!(c.as_array().unwrap().len(), 1);
    assert_eq!(c[0]["item_id"], A);
    assert_eq!(c[0]["n_annotators"], 2);

    // the log holds every accepted label, and replaying it rebuilds the state
    let events = read_event_log(&log.0.lock().unwrap()[..]).unwrap();
    assert_eq!(events.len(), 5);
    let replayed = SurveyState::replay(build_queue(&entries()).unwrap(), 2, &events).unwrap();
    server.read(|live| {
        assert_eq!(live.progress(), replayed.progress());
        assert_eq!(live.consensus(), replayed.consensus());
    });
}

#[tokio::test]
async fn bad_label_requests_are_rejected() {
    let log = SharedLog::default();
    let (_, app) = app_with(Box::new(log.clone()), None);
    let (s, _) = label(&app, "x", "n0:train:nope", "upskirt").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = label(&app, " ", A, "upskirt").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = label(&app, "x", A, "racy").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post_raw(&app, "{not json").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post_raw(&app, &json!({"annotator": "x", "item_id": A, "category": "upskirt", "extra": 1}).to_string()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let req = Request::post("/api/labels").body(Body::from("{}")).unwrap();
    let (s, _, _) = send(&app, req).await;
    assert!(s.is_client_error());
    assert!(log.0.lock().unwrap().is_empty(), "rejected labels must not be logged");
}

#[tokio::test]
async fn a_failed_log_write_leaves_state_untouched() {
    let (server, app) = app_with(Box::new(BrokenLog), None);
    let (s, v) = label(&app, "x", A, "upskirt").await;
    assert_eq!(s, StatusCode::INTERNAL_SERVER_ERROR);
    assert!(v["error"].is_string());
    server.read(|st| {
        assert!(st.events().is_empty());
        assert_eq!(st.progress().total_labels, 0);
    });
}

#[tokio::test]
async fn export_is_csv() {
    let (_, app) = app_with(Box::new(SharedLog::default()), None);
    for who in ["x", "y"] {
        label(&app, who, C, "exposed_private_parts").await;
    }
    let (s, body, ct) = send(&app, Request::get("/api/export.csv").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ct.as_deref(), Some("text/csv; charset=utf-8"));
    assert_eq!(
        String::from_utf8(body).unwrap(),
        "wordnet_id,label,mean_nsfw_train,category,file_names\n\
         n03710637,maillot,0.7,exposed_private_parts,n03710637_c.JPEG\n"
    );
}

#[tokio::test]
async fn images_are_served_from_the_root_only() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("train/n02837789");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("n02837789_a.JPEG"), b"\xff\xd8jpeg").unwrap();
    let (_, app) = app_with(Box::new(SharedLog::default()), Some(root.path().to_path_buf()));

    let (s, body, ct) = send(&app, Request::get(format!("/api/items/{A}/image")).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ct.as_deref(), Some("image/jpeg"));
    assert_eq!(body, b"\xff\xd8jpeg");

    // queued but missing on disk
    let (s, _, _) = send(&app, Request::get(format!("/api/items/{B}/image")).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    // not in the queue at all, including traversal attempts
    for id in ["n0:train:x.JPEG", "..%2F..%2Fetc%2Fpasswd", "n02837789:train:..%2F..%2Fsecret"] {
        let (s, _, _) = send(&app, Request::get(format!("/api/items/{id}/image")).body(Body::empty()).unwrap()).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{id}");
    }

    let (_, no_root) = app_with(Box::new(SharedLog::default()), None);
    let (s, _, _) = send(&no_root, Request::get(format!("/api/items/{A}/image")).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn static_files_fall_back_to_the_ui_directory() {
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<h1>review</h1>").unwrap();
    let server = Arc::new(SurveyServer::new(state(2), Box::new(SharedLog::default()), clock(), None));
    let app = router(server, Some(ui.path()));
    let (s, body, _) = send(&app, Request::get("/index.html").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, b"<h1>review</h1>");
    let (s, _) = get(&app, "/api/progress").await;
    assert_eq!(s, StatusCode::OK);
}

/// The fixture's survey, served: the live export equals the batch export
/// and relabeling through the API is logged like any other label.
#[tokio::test]
async fn fixture_survey_served_matches_batch_export() {
    let cfg = audit_cli::Config::load(&common::fixture_dir().join("audit.toml")).unwrap();
    let ctx = audit_cli::Context::new(cfg, ParseMode::Strict);
    let state = ctx.load_survey().unwrap();
    let server = Arc::new(SurveyServer::new(state, Box::new(SharedLog::default()), clock(), None));
    let app = router(server, None);
    let (_, body, _) = send(&app, Request::get("/api/export.csv").body(Body::empty()).unwrap()).await;
    let golden = std::fs::read(common::golden_dir().join("survey_export.csv")).unwrap();
    assert!(body == golden);
    let (_, p) = get(&app, "/api/progress").await;
    assert_eq!(p["consensus"], 61);
    assert_eq!(p["annotators"].as_object().unwrap().len(), 5);
}
