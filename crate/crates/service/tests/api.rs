use std::path::{Path, PathBuf};

use reqwest::StatusCode;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use semfaith::corpus::{char_slice, load_corpus, AnswerType, Corpus, SourceFormat, Span, Split, Variant};
use semfaith::metrics::evaluate_negation;
use semfaith::model::{ModelConfig, QaModel};
use semfaith::synth::{generate_story_corpus, StoryConfig};
use semfaith::training::fresh_model;
use semfaith_service::{AnnotationRecord, ApiError, EditResponse, Progress, Service, Status};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn corpus() -> Corpus {
    let mut items = load_corpus(fixture("negation_coqa.jsonl"), SourceFormat::Coqa).unwrap().items;
    items.extend(load_corpus(fixture("walkthrough_coqa.jsonl"), SourceFormat::Coqa).unwrap().items);
    items.extend(generate_story_corpus(60, 5, &StoryConfig::default()).unwrap().items);
    Corpus::new(items, SourceFormat::Coqa, Split::Dev).unwrap()
}

fn model(corpus: &Corpus) -> QaModel {
    let config = ModelConfig {
        d_model: 16,
        layers: 1,
        heads: 2,
        ffn_width: 24,
        max_len: 320,
        vocab_size: 0,
        seed: 11,
    };
    fresh_model(config, std::slice::from_ref(corpus), 1, Default::default()).unwrap()
}

struct Server {
    base: String,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<semfaith::Result<()>>,
}

impl Server {
    async fn start(corpus: &Corpus, model: Option<QaModel>, log: &Path) -> Server {
        let service = Service::open(corpus, model, log).unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (stop, rx) = oneshot::channel();
        let task = tokio::spawn(service.run(listener, async {
            let _ = rx.await;
        }));
        Server {
            base,
            stop: Some(stop),
            task,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn shutdown(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        self.task.await.unwrap().unwrap();
    }

    async fn kill(self) {
        self.task.abort();
        let _ = self.task.await;
    }
}

fn flip(gold: &str) -> &'static str {
    if gold == "yes" {
        "no"
    } else {
        "yes"
    }
}

/// An edit that replaces the rationale text and flips the gold.
fn rationale_edit(corpus: &Corpus, id: &str) -> Value {
    let item = corpus.get(id).unwrap();
    let before = char_slice(&item.story, Span::new(0, item.rationale.start));
    let after = char_slice(&item.story, Span::new(item.rationale.end, item.story.chars().count()));
    json!({
        "edited_story": format!("{before}Nobody could say for sure.{after}"),
        "new_gold": flip(&item.gold_answer),
        "annotator": "ann-1",
    })
}

fn yes_no_ids(corpus: &Corpus) -> Vec<String> {
    let mut ids: Vec<String> = corpus
        .items
        .iter()
        .filter(|i| i.answer_type.is_yes_no())
        .map(|i| i.id.clone())
        .collect();
    ids.sort();
    ids
}

async fn edit(client: &reqwest::Client, server: &Server, id: &str, body: &Value) -> EditResponse {
    let resp = client.post(server.url(&format!("/items/{id}/edit"))).json(body).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK, "{id}");
    resp.json().await.unwrap()
}

async fn decide(client: &reqwest::Client, server: &Server, id: &str, status: &str) -> reqwest::Response {
    client
        .post(server.url(&format!("/items/{id}/decision")))
        .json(&json!({ "status": status }))
        .send()
        .await
        .unwrap()
}

async fn error_of(resp: reqwest::Response, status: StatusCode) -> ApiError {
    assert_eq!(resp.status(), status);
    resp.json().await.unwrap()
}

fn doorbell_edit() -> Value {
    let corpus = corpus();
    let story = corpus.get("neg-dallas").unwrap().story.replace(
        "a door was apparently kicked in",
        "a door was open, leaving the possibility that the killers had been invited in",
    );
    json!({ "edited_story": story, "new_gold": "no", "annotator": "ann-1" })
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn empty_store_lists_every_yes_no_item_unannotated() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus();
    let server = Server::start(&corpus, None, &dir.path().join("log.jsonl")).await;
    let items: Vec<Value> = reqwest::get(server.url("/items")).await.unwrap().json().await.unwrap();
    let ids: Vec<String> = items.iter().map(|v| v["id"].as_str().unwrap().to_string()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(sorted, yes_no_ids(&corpus));
    assert!(items.iter().all(|v| v["status"] == "unannotated"));

    let progress: Progress = reqwest::get(server.url("/progress")).await.unwrap().json().await.unwrap();
    assert_eq!(progress.total, ids.len());
    assert_eq!(progress.unannotated, ids.len());

    let export = reqwest::get(server.url("/export")).await.unwrap();
    assert_eq!(export.status(), StatusCode::OK);
    assert_eq!(export.text().await.unwrap(), "");
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn doorbell_edit_is_accepted_and_exported() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus();
    let server = Server::start(&corpus, Some(model(&corpus)), &dir.path().join("log.jsonl")).await;
    let client = reqwest::Client::new();

    let view: Value = client.get(server.url("/items/neg-dallas")).send().await.unwrap().json().await.unwrap();
    assert_eq!(view["rationale"], json!([62, 155]));
    assert_eq!(view["gold"], "yes");
    assert_eq!(view["status"], "unannotated");

    let resp = edit(&client, &server, "neg-dallas", &doorbell_edit()).await;
    assert_eq!(resp.report.verdict, semfaith::intervene::Verdict::Accept);
    let flip = resp.report.model_flip.as_ref().expect("model loaded");
    assert!(flip.error.is_none());
    assert!(!flip.pred_before.is_empty() && !flip.pred_after.is_empty());
    assert_eq!(resp.record.status, Status::Draft);
    assert_eq!(resp.record.annotator.as_deref(), Some("ann-1"));

    let accepted: AnnotationRecord = decide(&client, &server, "neg-dallas", "accepted").await.json().await.unwrap();
    assert_eq!(accepted.status, Status::Accepted);

    let text = client.get(server.url("/export")).send().await.unwrap().text().await.unwrap();
    assert_eq!(text.lines().count(), 1);
    let record: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(record["id"], "neg-dallas");
    assert_eq!(record["variant"], "NEG");
    assert_eq!(record["answer"], "no");
    assert_eq!(record["original_answer"], "yes");
    assert!(record["story"].as_str().unwrap().contains("invited in"));
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn state_errors_are_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus();
    let server = Server::start(&corpus, None, &dir.path().join("log.jsonl")).await;
    let client = reqwest::Client::new();
    let story = corpus.get("neg-dallas").unwrap().story.clone();

    let err = error_of(decide(&client, &server, "neg-dallas", "accepted").await, StatusCode::CONFLICT).await;
    assert_eq!(err.code, "state");

    let same = json!({ "edited_story": story, "new_gold": "no", "annotator": "a" });
    let resp = edit(&client, &server, "neg-dallas", &same).await;
    assert_eq!(resp.report.verdict, semfaith::intervene::Verdict::Reject);
    assert!(resp.report.model_flip.is_none());
    let err = error_of(decide(&client, &server, "neg-dallas", "accepted").await, StatusCode::CONFLICT).await;
    assert_eq!(err.code, "state");

    let rejected: AnnotationRecord = decide(&client, &server, "neg-dallas", "rejected").await.json().await.unwrap();
    assert_eq!(rejected.status, Status::Rejected);
    error_of(decide(&client, &server, "neg-dallas", "skipped").await, StatusCode::CONFLICT).await;

    edit(&client, &server, "neg-dallas", &doorbell_edit()).await;
    assert_eq!(decide(&client, &server, "neg-dallas", "accepted").await.status(), StatusCode::OK);
    let resp = client
        .post(server.url("/items/neg-dallas/edit"))
        .json(&doorbell_edit())
        .send()
        .await
        .unwrap();
    assert_eq!(error_of(resp, StatusCode::CONFLICT).await.code, "state");

    let skipped: AnnotationRecord = decide(&client, &server, "a5b-earl", "skipped").await.json().await.unwrap();
    assert_eq!(skipped.status, Status::Skipped);
    assert!(skipped.validation.is_none());

    let progress: Progress = client.get(server.url("/progress")).send().await.unwrap().json().await.unwrap();
    assert_eq!((progress.accepted, progress.skipped, progress.draft, progress.rejected), (1, 1, 0, 0));
    let accepted: Vec<Value> = client
        .get(server.url("/items?status=accepted"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(accepted.len(), 1);
    assert_eq!(accepted[0]["id"], "neg-dallas");
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn request_errors_carry_code_and_message() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus();
    let server = Server::start(&corpus, None, &dir.path().join("log.jsonl")).await;
    let client = reqwest::Client::new();

    let err = error_of(client.get(server.url("/items/nope")).send().await.unwrap(), StatusCode::NOT_FOUND).await;
    assert_eq!(err.code, "not_found");
    let resp = client.post(server.url("/items/nope/edit")).json(&doorbell_edit()).send().await.unwrap();
    assert_eq!(error_of(resp, StatusCode::NOT_FOUND).await.code, "not_found");

    let span = corpus.items.iter().find(|i| i.answer_type == AnswerType::Span).unwrap();
    let resp = client
        .post(server.url(&format!("/items/{}/edit", span.id)))
        .json(&json!({ "edited_story": "changed.", "new_gold": "no", "annotator": "a" }))
        .send()
        .await
        .unwrap();
    let err = error_of(resp, StatusCode::UNPROCESSABLE_ENTITY).await;
    assert_eq!(err.code, "domain");
    assert!(err.message.contains(&span.id));

    let resp = client.get(server.url("/items?status=bogus")).send().await.unwrap();
    assert_eq!(error_of(resp, StatusCode::BAD_REQUEST).await.code, "bad_request");
    let resp = client
        .post(server.url("/items/neg-dallas/edit"))
        .header("content-type", "application/json")
        .body("{\"edited_story\": 3")
        .send()
        .await
        .unwrap();
    assert_eq!(error_of(resp, StatusCode::BAD_REQUEST).await.code, "bad_request");
    let resp = decide(&client, &server, "neg-dallas", "draft").await;
    assert_eq!(error_of(resp, StatusCode::BAD_REQUEST).await.code, "bad_request");
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn restart_replays_three_accepts() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let corpus = corpus();
    let ids: Vec<String> = yes_no_ids(&corpus).into_iter().filter(|id| id.starts_with("st")).take(4).collect();
    let client = reqwest::Client::new();

    let server = Server::start(&corpus, None, &log).await;
    for id in &ids[..3] {
        edit(&client, &server, id, &rationale_edit(&corpus, id)).await;
        assert_eq!(decide(&client, &server, id, "accepted").await.status(), StatusCode::OK);
    }
    edit(&client, &server, &ids[3], &rationale_edit(&corpus, &ids[3])).await;
    let mut before = Vec::new();
    for id in &ids {
        let v: Value = client.get(server.url(&format!("/items/{id}"))).send().await.unwrap().json().await.unwrap();
        before.push(v);
    }
    let export_before = client.get(server.url("/export")).send().await.unwrap().text().await.unwrap();
    server.kill().await;

    let server = Server::start(&corpus, None, &log).await;
    let progress: Progress = client.get(server.url("/progress")).send().await.unwrap().json().await.unwrap();
    assert_eq!((progress.accepted, progress.draft), (3, 1));
    for (id, old) in ids.iter().zip(&before) {
        let v: Value = client.get(server.url(&format!("/items/{id}"))).send().await.unwrap().json().await.unwrap();
        assert_eq!(&v, old);
    }
    let export_after = client.get(server.url("/export")).send().await.unwrap().text().await.unwrap();
    assert_eq!(export_after, export_before);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submissions_are_all_logged() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let corpus = corpus();
    let ids: Vec<String> = yes_no_ids(&corpus).into_iter().filter(|id| id.starts_with("st")).take(16).collect();
    let server = Server::start(&corpus, Some(model(&corpus)), &log).await;
    let client = reqwest::Client::new();

    let mut tasks = Vec::new();
    for id in ids.clone() {
        let (client, url, body) = (
            client.clone(),
            server.url(&format!("/items/{id}/edit")),
            rationale_edit(&corpus, &id),
        );
        tasks.push(tokio::spawn(async move { client.post(url).json(&body).send().await.unwrap().status() }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    server.shutdown().await;

    let text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().count(), ids.len());
    let logged: std::collections::BTreeSet<String> = text
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["item_id"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(logged, ids.into_iter().collect());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn export_round_trips_through_load_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus();
    let qa = model(&corpus);
    let server = Server::start(&corpus, Some(qa.clone()), &dir.path().join("log.jsonl")).await;
    let client = reqwest::Client::new();
    let ids: Vec<String> = yes_no_ids(&corpus).into_iter().filter(|id| id.starts_with("st")).take(7).collect();
    for id in &ids {
        edit(&client, &server, id, &rationale_edit(&corpus, id)).await;
        decide(&client, &server, id, "accepted").await;
    }
    edit(&client, &server, "neg-dallas", &doorbell_edit()).await;
    decide(&client, &server, "neg-dallas", "accepted").await;

    let text = client.get(server.url("/export")).send().await.unwrap().text().await.unwrap();
    server.shutdown().await;
    let path = dir.path().join("neg.jsonl");
    std::fs::write(&path, &text).unwrap();
    let negated = load_corpus(&path, SourceFormat::Coqa).unwrap();
    assert_eq!(negated.len(), ids.len() + 1);
    let mut exported: Vec<&str> = negated.items.iter().map(|i| i.id.as_str()).collect();
    let sorted = {
        let mut s = exported.clone();
        s.sort();
        s
    };
    assert_eq!(exported, sorted);
    exported.dedup();
    assert_eq!(exported.len(), negated.len());
    for item in &negated.items {
        assert_eq!(item.variant(), Variant::Neg);
        let base = corpus.get(&item.id).unwrap();
        assert_eq!(item.original_answer(), base.gold_answer);
        assert_eq!(item.gold_answer, flip(&base.gold_answer));
    }
    let report = evaluate_negation(&qa, &corpus, &negated).unwrap();
    assert_eq!(report.n, ids.len() + 1);
    assert!(report.comb_acc <= report.org_acc.min(report.mod_acc));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn torn_final_line_is_dropped_on_startup() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let corpus = corpus();
    let client = reqwest::Client::new();
    let server = Server::start(&corpus, None, &log).await;
    edit(&client, &server, "neg-dallas", &doorbell_edit()).await;
    decide(&client, &server, "neg-dallas", "accepted").await;
    server.shutdown().await;

    let intact = std::fs::read_to_string(&log).unwrap();
    std::fs::write(&log, format!("{intact}{{\"event\":\"decision\",\"item_id\":\"a5b-")).unwrap();
    let server = Server::start(&corpus, None, &log).await;
    let accepted: Vec<Value> = client.get(server.url("/items?status=accepted")).send().await.unwrap().json().await.unwrap();
    assert_eq!(accepted.len(), 1);
    assert_eq!(decide(&client, &server, "a5b-earl", "skipped").await.status(), StatusCode::OK);
    server.shutdown().await;

    let text = std::fs::read_to_string(&log).unwrap();
    assert!(text.starts_with(&intact));
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
}

#[test]
fn malformed_inner_line_is_a_startup_error() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    std::fs::write(&log, "not json\n").unwrap();
    let err = Service::open(&corpus(), None, &log).err().unwrap();
    assert_eq!(err.class(), "parse");

    let event = json!({"event": "decision", "item_id": "ghost", "status": "skipped", "at": 1});
    std::fs::write(&log, format!("{event}\n")).unwrap();
    let err = Service::open(&corpus(), None, &log).err().unwrap();
    assert_eq!(err.class(), "integrity");

    let unreadable = dir.path().join("dir-not-file");
    std::fs::create_dir(&unreadable).unwrap();
    assert!(Service::open(&corpus(), None, &unreadable).is_err());
}
