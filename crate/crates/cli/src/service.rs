//! HTTP chat sessions backed by the full agent pipeline.
//!
//! | method | path                      | result                                   |
//! |--------|---------------------------|------------------------------------------|
//! | POST   | `/sessions`               | 201 `{id}`                               |
//! | POST   | `/sessions/{id}/messages` | 200 `{response, goals, knowledge, trace}` |
//! | GET    | `/sessions/{id}`          | 200 `{id, created_at, config_ref, ended, history}` |
//! | DELETE | `/sessions/{id}`          | 204; the session stays readable but takes no more messages |
//!
//! A session runs one message at a time; a second message while the first
//! is in flight gets 409. Agent failures come back as 502 with
//! `{"error": {"kind", "message"}}` and leave the history untouched.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crs_core::{
    converse, AgentDeps, AgentError, ConverseMode, DialogueHistory, Goal, KnowledgeTriple,
    RetrievalTrace, TaskKind, Turn,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub config_ref: String,
    pub ended: bool,
    pub history: Vec<Turn>,
}

/// Per-session settings accepted by `POST /sessions`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionOverrides {
    pub seed: Option<u64>,
    pub max_turns: Option<usize>,
}

struct Entry {
    session: Session,
    overrides: SessionOverrides,
    busy: bool,
}

pub struct AppState {
    deps: AgentDeps,
    config_ref: String,
    sessions_dir: Option<PathBuf>,
    sessions: Mutex<HashMap<String, Entry>>,
}

impl AppState {
    pub fn new(deps: AgentDeps, config_ref: impl Into<String>, sessions_dir: Option<PathBuf>) -> Self {
        Self {
            deps,
            config_ref: config_ref.into(),
            sessions_dir,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    fn sessions(&self) -> MutexGuard<'_, HashMap<String, Entry>> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn persist(&self, id: &str, record: serde_json::Value) {
        let Some(dir) = &self.sessions_dir else { return };
        let path = dir.join(format!("{id}.jsonl"));
        let written = std::fs::create_dir_all(dir).and_then(|_| {
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
            writeln!(f, "{record}")
        });
        if let Err(e) = written {
            tracing::warn!(path = %path.display(), error = %e, "session log write failed");
        }
    }
}

#[derive(Debug, Deserialize)]
struct MessageRequest {
    text: String,
}

#[derive(Debug, Serialize)]
pub struct MessageReply {
    pub response: String,
    pub goals: Vec<Goal>,
    pub knowledge: Vec<KnowledgeTriple>,
    pub trace: RetrievalTrace,
}

fn error(status: StatusCode, kind: &str, message: impl std::fmt::Display) -> Response {
    (
        status,
        Json(json!({"error": {"kind": kind, "message": message.to_string()}})),
    )
        .into_response()
}

fn agent_error_kind(e: &AgentError) -> &'static str {
    match e {
        AgentError::Prompt(_) => "prompt",
        AgentError::Llm(_) => "model",
        AgentError::Kb(_) => "knowledge_base",
        AgentError::MissingDependency { .. } => "missing_dependency",
        AgentError::Unparsable { .. } => "unparsable_reply",
        AgentError::EmptyHistory => "empty_history",
        _ => "agent",
    }
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let overrides: SessionOverrides = if body.iter().all(u8::is_ascii_whitespace) {
        SessionOverrides::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(o) => o,
            Err(e) => return error(StatusCode::BAD_REQUEST, "bad_request", e),
        }
    };
    let session = Session {
        id: uuid::Uuid::new_v4().to_string(),
        created_at: Utc::now(),
        config_ref: state.config_ref.clone(),
        ended: false,
        history: Vec::new(),
    };
    let id = session.id.clone();
    state.persist(
        &id,
        json!({"event": "created", "created_at": session.created_at, "config_ref": session.config_ref}),
    );
    state.sessions().insert(
        id.clone(),
        Entry {
            session,
            overrides,
            busy: false,
        },
    );
    (StatusCode::CREATED, Json(json!({"id": id}))).into_response()
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.sessions().get(&id) {
        Some(entry) => Json(&entry.session).into_response(),
        None => error(StatusCode::NOT_FOUND, "not_found", format!("no session {id}")),
    }
}

async fn end_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let mut sessions = state.sessions();
    match sessions.get_mut(&id) {
        Some(entry) => {
            entry.session.ended = true;
            drop(sessions);
            state.persist(&id, json!({"event": "ended"}));
            StatusCode::NO_CONTENT.into_response()
        }
        None => error(StatusCode::NOT_FOUND, "not_found", format!("no session {id}")),
    }
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Response {
    let text = match serde_json::from_slice::<MessageRequest>(&body) {
        Ok(m) => m.text,
        Err(e) => return error(StatusCode::BAD_REQUEST, "bad_request", e),
    };
    if text.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "bad_request", "message text is empty");
    }

    let (mut turns, overrides) = {
        let mut sessions = state.sessions();
        let Some(entry) = sessions.get_mut(&id) else {
            return error(StatusCode::NOT_FOUND, "not_found", format!("no session {id}"));
        };
        if entry.session.ended {
            return error(StatusCode::CONFLICT, "ended", "session has ended");
        }
        if entry.busy {
            return error(StatusCode::CONFLICT, "busy", "a message is already in flight");
        }
        entry.busy = true;
        (entry.session.history.clone(), entry.overrides.clone())
    };

    let user = Turn::user(text);
    turns.push(user.clone());
    let worker = Arc::clone(&state);
    let outcome = tokio::task::spawn_blocking(move || {
        let mut deps = worker.deps.clone();
        if let Some(seed) = overrides.seed {
            deps.config.seed = seed;
        }
        if overrides.max_turns.is_some() {
            deps.config.max_turns = overrides.max_turns;
        }
        converse(
            &DialogueHistory::new(turns),
            TaskKind::ResponseGeneration,
            ConverseMode::ChatCrs,
            &deps,
        )
    })
    .await;

    let mut sessions = state.sessions();
    let entry = sessions.get_mut(&id).expect("sessions are never removed");
    entry.busy = false;
    let out = match outcome {
        Ok(Ok(out)) => out,
        Ok(Err(e)) => return error(StatusCode::BAD_GATEWAY, agent_error_kind(&e), e),
        Err(e) => return error(StatusCode::BAD_GATEWAY, "agent", e),
    };

    let goals = out.used_goal.map(|g| g.goals).unwrap_or_default();
    let reply = MessageReply {
        response: out.response.unwrap_or_default(),
        goals: goals.clone(),
        knowledge: out.used_knowledge.clone(),
        trace: out.trace,
    };
    let system = Turn::system(reply.response.clone())
        .with_goals(goals)
        .with_knowledge(out.used_knowledge);
    entry.session.history.push(user.clone());
    entry.session.history.push(system.clone());
    drop(sessions);
    state.persist(&id, json!({"event": "turn", "user": user, "system": system}));
    Json(reply).into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(end_session))
        .route("/sessions/{id}/messages", post(post_message))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: Arc<AppState>, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
