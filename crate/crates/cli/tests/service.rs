use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use crs_cli::{router, AppState};
use crs_core::llm::FnModel;
use crs_core::{AgentDeps, Goal, GoalBackend, KnowledgeBase, KnowledgeTriple, LanguageModel, ScriptedModel};

fn kb() -> Arc<KnowledgeBase> {
    let rows = [
        "Jiong He\tzodiac sign\tTaurus",
        "Jiong He\tstars in\tThe Four Brothers",
        "Jimmy Lin\tstars in\tFlying Dagger",
    ];
    Arc::new(KnowledgeBase::load(&rows.join("\n")).unwrap())
}

fn scripted() -> ScriptedModel {
    ScriptedModel::new("The system response is [Tell me more.]")
        .when_contains("excellent goal planner", "The dialogue goal is Chit-chat about Star")
        .when_matches(
            r"Entity: Jiong He\nCandidate Relations: [^\n]*\nOutput:$",
            "The relation is zodiac sign.",
        )
        .unwrap()
        .when_contains(
            "('Jiong He', 'zodiac sign', 'Taurus')\nOutput: ",
            "The predicted dialogue goal is [Chit-chat about Star], the predicted knowledge is \
             [('Jiong He', 'zodiac sign', 'Taurus')] and the system response is [Jiong He's zodiac sign is Taurus.]",
        )
}

fn deps(model: Arc<dyn LanguageModel>) -> AgentDeps {
    let mut d = AgentDeps::new(Arc::clone(&model));
    d.kb = Some(kb());
    d.goal_backend = Some(GoalBackend::Remote(model));
    d.config.goal_inventory = vec![Goal::new("Chit-chat about Star"), Goal::new("Movie recommendation")];
    d
}

fn app(model: Arc<dyn LanguageModel>) -> Router {
    router(Arc::new(AppState::new(deps(model), "test", None)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn new_session(app: &Router) -> String {
    let (status, v) = call(app, "POST", "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    v["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn message_returns_grounded_reply() {
    let app = app(Arc::new(scripted()));
    let id = new_session(&app).await;
    let (status, v) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/messages"),
        Some(json!({"text": "Do you know Jiong He's zodiac sign?"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["response"], "Jiong He's zodiac sign is Taurus.");
    assert_eq!(v["goals"], json!(["Chit-chat about Star"]));
    assert_eq!(v["knowledge"], json!([["Jiong He", "zodiac sign", ["Taurus"]]]));
    assert_eq!(v["trace"]["per_entity"][0]["entity"], "Jiong He");

    // every returned triple is backed by the KB
    let kb = kb();
    for t in serde_json::from_value::<Vec<KnowledgeTriple>>(v["knowledge"].clone()).unwrap() {
        assert!(t.is_subtriple_of(kb.lookup(t.subject(), t.relation()).unwrap()));
    }
}

#[tokio::test]
async fn histories_only_grow() {
    let app = app(Arc::new(scripted()));
    let id = new_session(&app).await;
    let mut previous: Vec<Value> = Vec::new();
    for text in ["Hello!", "Do you know Jiong He's zodiac sign?", "Nice."] {
        let (s, _) = call(&app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": text}))).await;
        assert_eq!(s, StatusCode::OK);
        let (s, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
        assert_eq!(s, StatusCode::OK);
        let history = v["history"].as_array().unwrap().clone();
        assert_eq!(history.len(), previous.len() + 2);
        assert_eq!(&history[..previous.len()], &previous[..]);
        assert_eq!(history[history.len() - 2]["text"], text);
        previous = history;
    }
}

#[tokio::test]
async fn unknown_ended_and_bad_requests() {
    let app = app(Arc::new(scripted()));
    assert_eq!(call(&app, "GET", "/sessions/nope", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(
        call(&app, "POST", "/sessions/nope/messages", Some(json!({"text": "hi"}))).await.0,
        StatusCode::NOT_FOUND
    );
    let id = new_session(&app).await;
    assert_eq!(
        call(&app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": "  "}))).await.0,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(call(&app, "DELETE", &format!("/sessions/{id}"), None).await.0, StatusCode::NO_CONTENT);
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": "hi"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"]["kind"], "ended");
    let (s, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["ended"], true);
}

#[tokio::test]
async fn agent_failure_is_502_and_keeps_history() {
    let model = Arc::new(FnModel::new("down", |_: &str| String::new()));
    let app = app(model);
    let id = new_session(&app).await;
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": "Hello"}))).await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert!(v["error"]["kind"].is_string() && v["error"]["message"].is_string());
    let (_, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(v["history"], json!([]));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn overlapping_messages_conflict() {
    let (entered_tx, entered_rx) = mpsc::channel::<()>();
    let (release_tx, release_rx) = mpsc::channel::<()>();
    let gate = Mutex::new((entered_tx, release_rx));
    let model = Arc::new(FnModel::new("gated", move |prompt: &str| {
        if prompt.contains("excellent goal planner") {
            let g = gate.lock().unwrap();
            g.0.send(()).unwrap();
            g.1.recv().unwrap();
            return "The dialogue goal is Chit-chat about Star".to_string();
        }
        "The system response is [ok]".to_string()
    }));
    let app = app(model);
    let id = new_session(&app).await;
    let uri = format!("/sessions/{id}/messages");
    let first = {
        let (app, uri) = (app.clone(), uri.clone());
        tokio::spawn(async move { call(&app, "POST", &uri, Some(json!({"text": "first"}))).await })
    };
    tokio::task::spawn_blocking(move || entered_rx.recv().unwrap()).await.unwrap();
    let (s, v) = call(&app, "POST", &uri, Some(json!({"text": "second"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"]["kind"], "busy");
    release_tx.send(()).unwrap();
    assert_eq!(first.await.unwrap().0, StatusCode::OK);
    let (_, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(v["history"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn sessions_are_persisted_as_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::new(deps(Arc::new(scripted())), "test", Some(dir.path().to_path_buf()));
    let app = router(Arc::new(state));
    let id = new_session(&app).await;
    call(&app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": "Do you know Jiong He's zodiac sign?"}))).await;
    call(&app, "DELETE", &format!("/sessions/{id}"), None).await;
    let log = std::fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap();
    let events: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let kinds: Vec<&str> = events.iter().map(|e| e["event"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["created", "turn", "ended"]);
    assert_eq!(events[1]["system"]["knowledge"], json!([["Jiong He", "zodiac sign", ["Taurus"]]]));
}
