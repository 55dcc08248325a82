use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use crs_core::llm::{BackoffPolicy, HttpModel, LanguageModel, LlmError, ModelEndpointConfig};

/// Serves one canned `(status, body)` per connection and records each
/// request body.
fn stub(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in responses {
            let Ok((stream, _)) = listener.accept() else { return };
            let request = read_request(&stream);
            log.lock().unwrap().push(request);
            let mut stream = stream;
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn read_request(stream: &TcpStream) -> String {
    let mut reader = BufReader::new(stream);
    let mut len = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" || line.is_empty() {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

fn ok_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn config(base_url: String) -> ModelEndpointConfig {
    ModelEndpointConfig {
        base_url,
        model_name: "stub-model".into(),
        max_retries: 3,
        seed: Some(7),
        backoff: BackoffPolicy {
            base_ms: 5,
            factor: 2.0,
            jitter: 0.2,
        },
        ..Default::default()
    }
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, seen) = stub(vec![
        (500, "{}".into()),
        (503, "{}".into()),
        (200, ok_body("The system response is [hi]")),
    ]);
    let model = HttpModel::new(config(url)).unwrap();
    let c = model.complete("hello prompt").unwrap();
    assert_eq!(c.text, "The system response is [hi]");
    assert_eq!(c.attempt, 3);
    let requests = seen.lock().unwrap();
    assert_eq!(requests.len(), 3);
    let body: serde_json::Value = serde_json::from_str(&requests[0]).unwrap();
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "hello prompt");
    assert_eq!(body["seed"], 7);
    assert_eq!(body["temperature"], 0.0);
}

#[test]
fn retry_bound_is_respected() {
    let (url, seen) = stub(vec![(429, "{}".into()); 6]);
    let mut cfg = config(url);
    cfg.max_retries = 2;
    let model = HttpModel::new(cfg).unwrap();
    match model.complete("p") {
        Err(LlmError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = stub(vec![(400, "bad".into()), (200, ok_body("x"))]);
    let model = HttpModel::new(config(url)).unwrap();
    assert!(matches!(
        model.complete("p"),
        Err(LlmError::Rejected { status: 400, .. })
    ));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn empty_completion_is_an_error() {
    let (url, _) = stub(vec![(200, ok_body("   "))]);
    let model = HttpModel::new(config(url)).unwrap();
    assert!(matches!(model.complete("p"), Err(LlmError::EmptyCompletion)));
}
