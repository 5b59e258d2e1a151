//! HTTP annotation service.
//!
//! The sample is immutable and read without locking. Answers go through one
//! writer: each accepted row is appended to the CSV log and synced before the
//! request is acknowledged, and the log is replayed on start.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context};
use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mmdial_core::calibrate::{parse_annotations, AnnotationRecord, ANNOTATION_HEADER};
use mmdial_core::{Instance, Turn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

pub const DEFAULT_BATCH: usize = 10;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Questions {
    pub q1: String,
    pub q2: String,
    pub q3: String,
    pub q4: String,
}

impl Default for Questions {
    fn default() -> Self {
        Self {
            q1: "3-point".into(),
            q2: "3-point".into(),
            q3: "5-point".into(),
            q4: "choice-4".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BatchItem {
    pub instance_id: String,
    pub target: String,
    pub context: Vec<Turn>,
    /// `image_source/image_id`, passed through untouched.
    pub image_ref: String,
    pub questions: Questions,
}

impl BatchItem {
    fn from_instance(i: &Instance) -> Self {
        Self {
            instance_id: i.instance_id.clone(),
            target: i.target.clone(),
            context: i.context.clone(),
            image_ref: format!("{}/{}", i.image_source, i.image_id),
            questions: Questions::default(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct Progress {
    pub answered: usize,
    pub total: usize,
}

/// Body of `POST /api/answer`. Scores are read wide so range errors are
/// reported as such rather than as malformed JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Answer {
    pub instance_id: String,
    pub annotator_id: String,
    pub q1: i64,
    pub q2: i64,
    pub q3: i64,
    #[serde(default)]
    pub q4: Option<i64>,
}

struct AnswerLog {
    file: File,
    len: u64,
    answered: HashSet<(String, String)>,
    per_annotator: HashMap<String, usize>,
}

#[derive(Debug)]
enum AppendError {
    Duplicate,
    Io(std::io::Error),
}

pub struct AnnotationService {
    items: Vec<Instance>,
    index: HashMap<String, usize>,
    log_path: PathBuf,
    log: Mutex<AnswerLog>,
}

impl AnnotationService {
    /// Opens (or creates) the answer log for `items` and replays it.
    ///
    /// A trailing partial row is cut off: it was never acknowledged.
    pub fn open(items: Vec<Instance>, log_path: &Path) -> anyhow::Result<Self> {
        let mut index = HashMap::new();
        for (pos, i) in items.iter().enumerate() {
            if index.insert(i.instance_id.clone(), pos).is_some() {
                bail!("sample lists instance `{}` twice", i.instance_id);
            }
        }

        let existing = match std::fs::read(log_path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e).with_context(|| format!("reading {}", log_path.display())),
        };
        let complete = existing
            .iter()
            .rposition(|&b| b == b'\n')
            .map_or(0, |p| p + 1);

        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(log_path)
            .with_context(|| format!("opening {}", log_path.display()))?;
        if complete < existing.len() {
            file.set_len(complete as u64)?;
        }

        let mut answered = HashSet::new();
        let mut per_annotator: HashMap<String, usize> = HashMap::new();
        if complete == 0 {
            file.set_len(0)?;
            file.write_all(format!("{}\n", ANNOTATION_HEADER.join(",")).as_bytes())?;
            file.sync_all()?;
        } else {
            let records = parse_annotations(&existing[..complete])
                .with_context(|| format!("replaying {}", log_path.display()))?;
            for r in records {
                if !index.contains_key(&r.instance_id) {
                    bail!(
                        "log {} answers `{}`, which is not in the sample",
                        log_path.display(),
                        r.instance_id
                    );
                }
                *per_annotator.entry(r.annotator_id.clone()).or_default() += 1;
                answered.insert((r.instance_id, r.annotator_id));
            }
        }
        let len = file.metadata()?.len();
        Ok(Self {
            items,
            index,
            log_path: log_path.to_owned(),
            log: Mutex::new(AnswerLog {
                file,
                len,
                answered,
                per_annotator,
            }),
        })
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    pub fn total(&self) -> usize {
        self.items.len()
    }

    /// The first `limit` instances the annotator has not answered, in sample order.
    pub fn batch(&self, annotator: &str, limit: usize) -> Vec<BatchItem> {
        let log = self.log.lock().expect("answer log lock");
        self.items
            .iter()
            .filter(|i| {
                !log.answered
                    .contains(&(i.instance_id.clone(), annotator.to_owned()))
            })
            .take(limit)
            .map(BatchItem::from_instance)
            .collect()
    }

    pub fn progress(&self, annotator: &str) -> Progress {
        let log = self.log.lock().expect("answer log lock");
        Progress {
            answered: log.per_annotator.get(annotator).copied().unwrap_or(0),
            total: self.items.len(),
        }
    }

    fn append(&self, record: &AnnotationRecord) -> Result<(), AppendError> {
        let mut row = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        row.serialize(record)
            .map_err(|e| AppendError::Io(std::io::Error::other(e)))?;
        let row = row
            .into_inner()
            .map_err(|e| AppendError::Io(std::io::Error::other(e.to_string())))?;

        let mut log = self.log.lock().expect("answer log lock");
        let key = (record.instance_id.clone(), record.annotator_id.clone());
        if log.answered.contains(&key) {
            return Err(AppendError::Duplicate);
        }
        let written = log
            .file
            .write_all(&row)
            .and_then(|_| log.file.flush())
            .and_then(|_| log.file.sync_data());
        if let Err(e) = written {
            // Drop whatever part of the row made it out.
            let _ = log.file.set_len(log.len);
            return Err(AppendError::Io(e));
        }
        log.len += row.len() as u64;
        *log.per_annotator.entry(key.1.clone()).or_default() += 1;
        log.answered.insert(key);
        Ok(())
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

#[derive(Debug, Deserialize)]
struct BatchQuery {
    annotator: Option<String>,
    limit: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct ProgressQuery {
    annotator: Option<String>,
}

fn annotator(a: Option<String>) -> Option<String> {
    a.filter(|a| !a.trim().is_empty())
}

fn missing_annotator() -> Response {
    error(StatusCode::BAD_REQUEST, "missing `annotator` query parameter")
}

async fn get_batch(
    State(svc): State<Arc<AnnotationService>>,
    q: Result<Query<BatchQuery>, QueryRejection>,
) -> Response {
    let Query(q) = match q {
        Ok(q) => q,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let Some(who) = annotator(q.annotator) else {
        return missing_annotator();
    };
    let items = svc.batch(&who, q.limit.unwrap_or(DEFAULT_BATCH));
    Json(Batch { items }).into_response()
}

async fn get_progress(
    State(svc): State<Arc<AnnotationService>>,
    q: Result<Query<ProgressQuery>, QueryRejection>,
) -> Response {
    let Query(q) = match q {
        Ok(q) => q,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    match annotator(q.annotator) {
        Some(who) => Json(svc.progress(&who)).into_response(),
        None => missing_annotator(),
    }
}

async fn post_answer(State(svc): State<Arc<AnnotationService>>, body: Bytes) -> Response {
    let answer: Answer = match serde_json::from_slice(&body) {
        Ok(a) => a,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed answer: {e}")),
    };
    if answer.instance_id.is_empty() || answer.annotator_id.is_empty() {
        return error(StatusCode::BAD_REQUEST, "instance_id and annotator_id are required");
    }
    if !svc.index.contains_key(&answer.instance_id) {
        return error(
            StatusCode::NOT_FOUND,
            format!("instance `{}` is not in the sample", answer.instance_id),
        );
    }
    let narrow = |v: i64| u8::try_from(v).unwrap_or(u8::MAX);
    let record = AnnotationRecord {
        instance_id: answer.instance_id,
        annotator_id: answer.annotator_id,
        q1: narrow(answer.q1),
        q2: narrow(answer.q2),
        q3: narrow(answer.q3),
        q4: answer.q4.map(narrow),
    };
    if let Err(e) = record.validate() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string());
    }

    let worker = Arc::clone(&svc);
    let result = tokio::task::spawn_blocking(move || worker.append(&record)).await;
    match result {
        Ok(Ok(())) => Json(json!({ "accepted": true })).into_response(),
        Ok(Err(AppendError::Duplicate)) => error(StatusCode::CONFLICT, "already answered"),
        Ok(Err(AppendError::Io(e))) => {
            error(StatusCode::INTERNAL_SERVER_ERROR, format!("log write failed: {e}"))
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn not_found() -> Response {
    error(StatusCode::NOT_FOUND, "no such route")
}

pub fn router(svc: Arc<AnnotationService>, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/batch", get(get_batch))
        .route("/api/progress", get(get_progress))
        .route("/api/answer", post(post_answer))
        .with_state(svc);
    match ui_dir {
        Some(dir) if dir.is_dir() => api.fallback_service(ServeDir::new(dir)),
        _ => api.fallback(not_found),
    }
}
