mod common;

use std::path::Path;
use std::sync::Arc;

use common::instance;
use mmdial::server::{router, AnnotationService, Batch, Progress};
use mmdial_core::calibrate::read_annotations;
use mmdial_core::{Instance, Split};
use serde_json::{json, Value};

fn sample(n: usize) -> Vec<Instance> {
    (0..n)
        .map(|k| {
            instance(
                k,
                ("persona", "flickr"),
                Split::Test,
                &["hi there", "we went hiking"],
                "the view was amazing.",
                Some("nice"),
                0.5,
            )
        })
        .collect()
}

struct Running {
    base: String,
    task: tokio::task::JoinHandle<()>,
}

async fn start(items: Vec<Instance>, log: &Path, ui: Option<&Path>) -> anyhow::Result<Running> {
    let svc = Arc::new(AnnotationService::open(items, log)?);
    let app = router(svc, ui);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    let task = tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    Ok(Running { base, task })
}

fn answer(id: &str, who: &str, q: [i64; 3]) -> Value {
    json!({ "instance_id": id, "annotator_id": who, "q1": q[0], "q2": q[1], "q3": q[2], "q4": 2 })
}

#[tokio::test]
async fn fresh_annotator_gets_sample_order_and_progress() {
    let dir = tempfile::tempdir().unwrap();
    let items = sample(12);
    let srv = start(items.clone(), &dir.path().join("log.csv"), None).await.unwrap();
    let c = reqwest::Client::new();

    let batch: Batch = c
        .get(format!("{}/api/batch?annotator=a&limit=5", srv.base))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let ids: Vec<&str> = batch.items.iter().map(|i| i.instance_id.as_str()).collect();
    let want: Vec<&str> = items[..5].iter().map(|i| i.instance_id.as_str()).collect();
    assert_eq!(ids, want);
    let first = &batch.items[0];
    assert_eq!(first.image_ref, format!("flickr/{}", items[0].image_id));
    assert_eq!(first.context.len(), 2);
    assert_eq!(first.questions.q3, "5-point");
    assert_eq!(first.questions.q4, "choice-4");

    let r = c
        .post(format!("{}/api/answer", srv.base))
        .json(&answer(&items[0].instance_id, "a", [1, 2, 3]))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 200);
    assert_eq!(r.json::<Value>().await.unwrap(), json!({ "accepted": true }));

    let p: Progress = c
        .get(format!("{}/api/progress?annotator=a", srv.base))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(p, Progress { answered: 1, total: 12 });

    let batch: Batch = c
        .get(format!("{}/api/batch?annotator=a&limit=2", srv.base))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(batch.items[0].instance_id, items[1].instance_id);

    // another annotator still starts at the top
    let batch: Batch = c
        .get(format!("{}/api/batch?annotator=b&limit=1", srv.base))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(batch.items[0].instance_id, items[0].instance_id);
    srv.task.abort();
}

#[tokio::test]
async fn error_statuses_carry_json_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let items = sample(3);
    let log = dir.path().join("log.csv");
    let srv = start(items.clone(), &log, None).await.unwrap();
    let c = reqwest::Client::new();
    let post = |body: String| {
        c.post(format!("{}/api/answer", srv.base))
            .header("content-type", "application/json")
            .body(body)
            .send()
    };
    let id = items[0].instance_id.clone();

    let cases = [
        (answer(&id, "a", [1, 1, 1]).to_string(), 200),
        (answer(&id, "a", [2, 2, 2]).to_string(), 409),
        (answer(&id, "b", [4, 1, 1]).to_string(), 422),
        (answer(&id, "b", [1, 1, 0]).to_string(), 422),
        (answer(&id, "b", [1, -3, 1]).to_string(), 422),
        (json!({ "instance_id": id, "annotator_id": "b", "q1": 1, "q2": 1, "q3": 1, "q4": 5 }).to_string(), 422),
        (answer("nope#1#x", "b", [1, 1, 1]).to_string(), 404),
        ("{not json".to_owned(), 400),
        (json!({ "instance_id": id, "annotator_id": "b" }).to_string(), 400),
        (json!({ "instance_id": id, "annotator_id": "b", "q1": "x", "q2": 1, "q3": 1 }).to_string(), 400),
        (answer(&id, "", [1, 1, 1]).to_string(), 400),
    ];
    for (body, status) in cases {
        let r = post(body.clone()).await.unwrap();
        assert_eq!(r.status().as_u16(), status, "{body}");
        let v: Value = r.json().await.unwrap();
        if status == 200 {
            assert_eq!(v["accepted"], true);
        } else {
            assert!(v["error"].is_string(), "{body}: {v}");
        }
    }

    for url in ["/api/batch", "/api/progress", "/api/batch?annotator=a&limit=x"] {
        let r = c.get(format!("{}{url}", srv.base)).send().await.unwrap();
        assert_eq!(r.status(), 400, "{url}");
        assert!(r.json::<Value>().await.unwrap()["error"].is_string());
    }
    let r = c.get(format!("{}/", srv.base)).send().await.unwrap();
    assert_eq!(r.status(), 404);

    // only the accepted answer reached the log
    assert_eq!(read_annotations(&log).unwrap().len(), 1);
    srv.task.abort();
}

#[tokio::test]
async fn log_is_replayed_and_torn_tail_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let items = sample(4);
    let log = dir.path().join("log.csv");
    let srv = start(items.clone(), &log, None).await.unwrap();
    let c = reqwest::Client::new();
    for it in &items[..2] {
        let r = c
            .post(format!("{}/api/answer", srv.base))
            .json(&answer(&it.instance_id, "a", [3, 3, 5]))
            .send()
            .await
            .unwrap();
        assert_eq!(r.status(), 200);
    }
    srv.task.abort();

    // an unacknowledged half row, as after a crash mid-write
    let mut bytes = std::fs::read(&log).unwrap();
    bytes.extend_from_slice(format!("{},a,1,", items[2].instance_id).as_bytes());
    std::fs::write(&log, bytes).unwrap();

    let srv = start(items.clone(), &log, None).await.unwrap();
    let p: Progress = c
        .get(format!("{}/api/progress?annotator=a", srv.base))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(p.answered, 2);
    let r = c
        .post(format!("{}/api/answer", srv.base))
        .json(&answer(&items[1].instance_id, "a", [1, 1, 1]))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 409);
    let r = c
        .post(format!("{}/api/answer", srv.base))
        .json(&answer(&items[2].instance_id, "a", [1, 1, 1]))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 200);
    srv.task.abort();
    assert_eq!(read_annotations(&log).unwrap().len(), 3);
}

#[tokio::test]
async fn open_rejects_foreign_logs_and_duplicate_samples() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    std::fs::write(&log, "instance_id,annotator_id,q1,q2,q3,q4\nghost#1#x,a,1,1,1,\n").unwrap();
    assert!(AnnotationService::open(sample(2), &log).is_err());

    std::fs::write(&log, "id,who\n").unwrap();
    assert!(AnnotationService::open(sample(2), &log).is_err());

    let mut twice = sample(2);
    twice.push(twice[0].clone());
    assert!(AnnotationService::open(twice, &dir.path().join("other.csv")).is_err());
}

#[tokio::test]
async fn ui_assets_are_served_at_root() {
    let dir = tempfile::tempdir().unwrap();
    let ui = dir.path().join("ui");
    std::fs::create_dir(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<html>annotate</html>").unwrap();
    let srv = start(sample(1), &dir.path().join("log.csv"), Some(&ui)).await.unwrap();
    let body = reqwest::get(format!("{}/", srv.base)).await.unwrap().text().await.unwrap();
    assert!(body.contains("annotate"));
    let r = reqwest::get(format!("{}/api/progress?annotator=z", srv.base)).await.unwrap();
    assert_eq!(r.status(), 200);
    srv.task.abort();
}
