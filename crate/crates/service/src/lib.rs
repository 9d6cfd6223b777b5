//! HTTP annotation backend for authoring negation edits.
//!
//! Every mutation is an [`Event`] appended to a JSONL log by one writer
//! thread; the in-memory state is the replay of that log.

mod store;

use std::collections::BTreeMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State as AxState};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};

use semfaith::corpus::{AnswerType, Corpus, QaItem, Record, Span};
use semfaith::intervene::{negated_item, validate_negation_edit, NegationValidationReport};
use semfaith::model::{Predictor, QaModel};
use semfaith::{Error, Result};

pub use store::{apply, replay, AnnotationRecord, AnnotationStore, AppendError, Event, State, StateError, Status};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
struct Failure(StatusCode, &'static str, String);

impl Failure {
    fn not_found(id: &str) -> Self {
        Failure(StatusCode::NOT_FOUND, "not_found", format!("no item {id}"))
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Failure(StatusCode::BAD_REQUEST, "bad_request", message.into())
    }

    fn internal(message: impl Into<String>) -> Self {
        Failure(StatusCode::INTERNAL_SERVER_ERROR, "internal", message.into())
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let body = ApiError {
            code: self.1.to_string(),
            message: self.2,
        };
        (self.0, Json(body)).into_response()
    }
}

type Reply = oneshot::Sender<std::result::Result<AnnotationRecord, AppendError>>;

enum Command {
    Append(Event, Reply),
    Close,
}

#[derive(Clone)]
struct AppState {
    items: Arc<BTreeMap<String, QaItem>>,
    model: Option<Arc<QaModel>>,
    records: Arc<RwLock<State>>,
    writer: mpsc::UnboundedSender<Command>,
}

/// A loaded corpus, optional model and open store, ready to be served.
pub struct Service {
    state: AppState,
    writer: Option<std::thread::JoinHandle<Result<()>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ItemSummary {
    pub id: String,
    pub question: String,
    pub gold: String,
    pub status: Status,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ItemView {
    pub id: String,
    pub story: String,
    pub rationale: Span,
    pub question: String,
    pub gold: String,
    pub answer_type: AnswerType,
    pub history: Vec<(String, String)>,
    pub status: Status,
    pub record: Option<AnnotationRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EditRequest {
    pub edited_story: String,
    pub new_gold: String,
    pub annotator: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EditResponse {
    pub report: NegationValidationReport,
    pub record: AnnotationRecord,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub status: Status,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub unannotated: usize,
    pub draft: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub skipped: usize,
}

#[derive(Deserialize)]
struct ListQuery {
    status: Option<String>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

impl Service {
    /// Replays the log at `store_path` and starts the writer thread.
    pub fn open(corpus: &Corpus, model: Option<QaModel>, store_path: impl Into<PathBuf>) -> Result<Service> {
        let mut store = AnnotationStore::open(store_path.into())?;
        let items: BTreeMap<String, QaItem> = corpus.items.iter().map(|i| (i.id.clone(), i.clone())).collect();
        if let Some(id) = store.state().keys().find(|id| !items.contains_key(*id)) {
            return Err(Error::Integrity(format!("log refers to item {id}, which is not in the corpus")));
        }
        let records = Arc::new(RwLock::new(store.state().clone()));
        let (tx, mut rx) = mpsc::unbounded_channel::<Command>();
        let shared = Arc::clone(&records);
        let writer = std::thread::spawn(move || -> Result<()> {
            while let Some(cmd) = rx.blocking_recv() {
                match cmd {
                    Command::Append(event, reply) => {
                        let result = store.append(&event);
                        if let Ok(record) = &result {
                            shared
                                .write()
                                .expect("state lock")
                                .insert(record.item_id.clone(), record.clone());
                        }
                        let _ = reply.send(result);
                    }
                    Command::Close => break,
                }
            }
            store.flush()
        });
        Ok(Service {
            state: AppState {
                items: Arc::new(items),
                model: model.map(Arc::new),
                records,
                writer: tx,
            },
            writer: Some(writer),
        })
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/items", get(list_items))
            .route("/items/{id}", get(get_item))
            .route("/items/{id}/edit", post(submit_edit))
            .route("/items/{id}/decision", post(decide))
            .route("/export", get(export))
            .route("/progress", get(progress))
            .with_state(self.state.clone())
    }

    /// Snapshot of the materialized state.
    pub fn records(&self) -> State {
        self.state.records.read().expect("state lock").clone()
    }

    /// Stops the writer after pending events and syncs the log.
    pub fn close(mut self) -> Result<()> {
        let _ = self.state.writer.send(Command::Close);
        match self.writer.take().map(|h| h.join()) {
            Some(Ok(result)) => result,
            Some(Err(_)) => Err(Error::Integrity("annotation writer panicked".into())),
            None => Ok(()),
        }
    }

    /// Serves until `shutdown` resolves, then flushes the log.
    pub async fn run(self, listener: TcpListener, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<()> {
        axum::serve(listener, self.router())
            .with_graceful_shutdown(shutdown)
            .await?;
        tokio::task::spawn_blocking(move || self.close())
            .await
            .map_err(|e| Error::Integrity(format!("shutdown task failed: {e}")))?
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        if let Some(handle) = self.writer.take() {
            let _ = self.state.writer.send(Command::Close);
            let _ = handle.join();
        }
    }
}

/// The NEG records of all accepted annotations, sorted by item id, as corpus JSONL.
pub fn export_jsonl(items: &BTreeMap<String, QaItem>, records: &State) -> Result<String> {
    let mut out = String::new();
    for record in records.values().filter(|r| r.status == Status::Accepted) {
        let item = items
            .get(&record.item_id)
            .ok_or_else(|| Error::Integrity(format!("accepted record for unknown item {}", record.item_id)))?;
        let (Some(story), Some(gold)) = (&record.edited_story, &record.new_gold) else {
            return Err(Error::Integrity(format!("accepted record {} has no edit", record.item_id)));
        };
        let neg = negated_item(item, story, gold)?;
        out.push_str(&serde_json::to_string(&Record::from(&neg))?);
        out.push('\n');
    }
    Ok(out)
}

impl AppState {
    fn item(&self, id: &str) -> std::result::Result<&QaItem, Failure> {
        self.items.get(id).ok_or_else(|| Failure::not_found(id))
    }

    fn status(&self, id: &str) -> Status {
        self.records
            .read()
            .expect("state lock")
            .get(id)
            .map_or(Status::Unannotated, |r| r.status)
    }

    async fn append(&self, event: Event) -> std::result::Result<AnnotationRecord, Failure> {
        let (tx, rx) = oneshot::channel();
        self.writer
            .send(Command::Append(event, tx))
            .map_err(|_| Failure::internal("annotation store is closed"))?;
        match rx.await {
            Ok(Ok(record)) => Ok(record),
            Ok(Err(AppendError::State(e))) => Err(Failure(StatusCode::CONFLICT, "state", e.0)),
            Ok(Err(AppendError::Io(e))) => Err(Failure::internal(e.to_string())),
            Err(_) => Err(Failure::internal("annotation store is closed")),
        }
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> std::result::Result<T, Failure> {
    serde_json::from_slice(body).map_err(|e| Failure::bad_request(format!("invalid request body: {e}")))
}

async fn list_items(
    AxState(app): AxState<AppState>,
    Query(q): Query<ListQuery>,
) -> std::result::Result<Json<Vec<ItemSummary>>, Failure> {
    let wanted = q
        .status
        .as_deref()
        .map(str::parse::<Status>)
        .transpose()
        .map_err(|e| Failure::bad_request(e.to_string()))?;
    let records = app.records.read().expect("state lock");
    let list = app
        .items
        .values()
        .filter(|i| i.answer_type.is_yes_no())
        .map(|i| ItemSummary {
            id: i.id.clone(),
            question: i.question.clone(),
            gold: i.gold_answer.clone(),
            status: records.get(&i.id).map_or(Status::Unannotated, |r| r.status),
        })
        .filter(|s| wanted.is_none_or(|w| w == s.status))
        .collect();
    Ok(Json(list))
}

async fn get_item(AxState(app): AxState<AppState>, Path(id): Path<String>) -> std::result::Result<Json<ItemView>, Failure> {
    let item = app.item(&id)?;
    let record = app.records.read().expect("state lock").get(&id).cloned();
    Ok(Json(ItemView {
        id: item.id.clone(),
        story: item.story.clone(),
        rationale: item.rationale,
        question: item.question.clone(),
        gold: item.gold_answer.clone(),
        answer_type: item.answer_type,
        history: item.history.clone(),
        status: record.as_ref().map_or(Status::Unannotated, |r| r.status),
        record,
    }))
}

async fn submit_edit(
    AxState(app): AxState<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> std::result::Result<Json<EditResponse>, Failure> {
    let req: EditRequest = parse_body(&body)?;
    let item = app.item(&id)?.clone();
    if !item.answer_type.is_yes_no() {
        return Err(Failure(
            StatusCode::UNPROCESSABLE_ENTITY,
            "domain",
            format!("item {id} has answer type {}, only yes/no items can be negated", item.answer_type.as_str()),
        ));
    }
    if app.status(&id) == Status::Accepted {
        return Err(Failure(StatusCode::CONFLICT, "state", format!("item {id} is already accepted")));
    }
    let model = app.model.clone();
    let (story, gold) = (req.edited_story.clone(), req.new_gold.clone());
    let report = tokio::task::spawn_blocking(move || {
        validate_negation_edit(&item, &story, &gold, model.as_deref().map(|m| m as &dyn Predictor))
    })
    .await
    .map_err(|e| Failure::internal(format!("validation task failed: {e}")))?;
    let record = app
        .append(Event::Edit {
            item_id: id,
            annotator: req.annotator,
            edited_story: req.edited_story,
            new_gold: req.new_gold.trim().to_string(),
            validation: report.clone(),
            at: now_ms(),
        })
        .await?;
    Ok(Json(EditResponse { report, record }))
}

async fn decide(
    AxState(app): AxState<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> std::result::Result<Json<AnnotationRecord>, Failure> {
    let req: DecisionRequest = parse_body(&body)?;
    app.item(&id)?;
    if matches!(req.status, Status::Unannotated | Status::Draft) {
        return Err(Failure::bad_request(format!("{} is not a decision", req.status.as_str())));
    }
    let record = app
        .append(Event::Decision {
            item_id: id,
            status: req.status,
            at: now_ms(),
        })
        .await?;
    Ok(Json(record))
}

async fn export(AxState(app): AxState<AppState>) -> std::result::Result<Response, Failure> {
    let records = app.records.read().expect("state lock").clone();
    let body = export_jsonl(&app.items, &records).map_err(|e| Failure::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn progress(AxState(app): AxState<AppState>) -> Json<Progress> {
    let records = app.records.read().expect("state lock");
    let mut p = Progress::default();
    for item in app.items.values().filter(|i| i.answer_type.is_yes_no()) {
        p.total += 1;
        match records.get(&item.id).map_or(Status::Unannotated, |r| r.status) {
            Status::Unannotated => p.unannotated += 1,
            Status::Draft => p.draft += 1,
            Status::Accepted => p.accepted += 1,
            Status::Rejected => p.rejected += 1,
            Status::Skipped => p.skipped += 1,
        }
    }
    Json(p)
}
