//! A tiny single-purpose HTTP server standing in for the external services.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};

use scenecot::pipeline::MockPipelineClients;
use scenecot::vision::Domain;

#[derive(Default)]
pub struct ServerState {
    /// `(path, body)` of every request received.
    pub requests: Mutex<Vec<(String, Value)>>,
    /// The judge answers 503 this many times before succeeding.
    pub judge_failures: AtomicU32,
    /// The image scorer answers with text that is not JSON.
    pub garbage_scores: AtomicBool,
    stop: AtomicBool,
}

pub struct TestServer {
    pub url: String,
    pub state: Arc<ServerState>,
    handle: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let state = Arc::new(ServerState::default());
        let shared = state.clone();
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if shared.stop.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let shared = shared.clone();
                    std::thread::spawn(move || handle(stream, &shared));
                }
            }
        });
        Self { url, state, handle: Some(handle) }
    }

    pub fn paths(&self) -> Vec<String> {
        self.state.requests.lock().unwrap().iter().map(|(p, _)| p.clone()).collect()
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.state.stop.store(true, Ordering::SeqCst);
        // wake the accept loop so it sees the flag
        let _ = TcpStream::connect(self.url.trim_start_matches("http://"));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle(stream: TcpStream, state: &ServerState) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
        return;
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    state.requests.lock().unwrap().push((path.clone(), body.clone()));

    let (status, payload) = route(&path, &body, state);
    let response = format!(
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let mut stream = stream;
    let _ = stream.write_all(response.as_bytes());
}

fn route(path: &str, body: &Value, state: &ServerState) -> (&'static str, String) {
    match path {
        "/judge" => {
            let pending = state.judge_failures.load(Ordering::SeqCst);
            if pending > 0 {
                state.judge_failures.store(pending - 1, Ordering::SeqCst);
                return ("503 Service Unavailable", json!({"error": "busy"}).to_string());
            }
            ("200 OK", json!({"perception": 2, "completeness": 1, "faithfulness": 2}).to_string())
        }
        "/generate" => {
            let prompt = body["prompt"].as_str().unwrap_or_default();
            ("200 OK", json!({ "image_ref": format!("img:{prompt}") }).to_string())
        }
        "/score" => {
            if state.garbage_scores.load(Ordering::SeqCst) {
                return ("200 OK", "<html>not json</html>".to_string());
            }
            ("200 OK", json!({"hps": 0.5, "vlm": 0.25}).to_string())
        }
        "/prompts" => {
            let domain: Domain = serde_json::from_value(body["domain"].clone()).unwrap();
            let n = body["n"].as_u64().unwrap() as usize;
            let prompts: Vec<String> = (0..n).map(|i| MockPipelineClients::prompt_for(domain, i)).collect();
            ("200 OK", json!({ "prompts": prompts }).to_string())
        }
        "/extract" => {
            let state = json!({"entities": [{"id": "e1", "name": "cat", "attributes": [["color", "red"]]}]});
            ("200 OK", json!({ "structured_vision": state }).to_string())
        }
        "/abstract" => ("200 OK", json!({"user_prompt": "a cat", "thinking_text": "the red cat"}).to_string()),
        _ => ("404 Not Found", json!({"error": "no route"}).to_string()),
    }
}
