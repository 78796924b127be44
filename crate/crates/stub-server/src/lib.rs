//! A scripted chat-completions server for tests.
//!
//! The server runs on its own thread and runtime so it can back both async
//! tests and tests that spawn the CLI binary. Every request is recorded and
//! answered by a caller-supplied responder.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use serde_json::{json, Value};

#[derive(Debug, Clone)]
pub struct StubRequest {
    /// 0-based arrival index across all requests.
    pub index: u64,
    pub body: Value,
    pub authorization: Option<String>,
}

impl StubRequest {
    /// Text parts of the first user message, concatenated.
    pub fn prompt_text(&self) -> String {
        let content = &self.body["messages"][0]["content"];
        match content {
            Value::String(s) => s.clone(),
            Value::Array(parts) => parts
                .iter()
                .filter(|p| p["type"] == "text")
                .filter_map(|p| p["text"].as_str())
                .collect::<Vec<_>>()
                .join("\n"),
            _ => String::new(),
        }
    }

    pub fn image_url(&self) -> Option<String> {
        self.body["messages"][0]["content"]
            .as_array()?
            .iter()
            .find(|p| p["type"] == "image_url")
            .and_then(|p| p["image_url"]["url"].as_str())
            .map(str::to_string)
    }

    pub fn has_image(&self) -> bool {
        self.image_url().is_some()
    }
}

#[derive(Debug, Clone)]
pub struct StubResponse {
    pub status: u16,
    pub body: String,
}

impl StubResponse {
    /// A 200 chat-completions reply carrying `text`.
    pub fn completion(text: &str) -> Self {
        let body = json!({
            "id": "stub",
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 11, "completion_tokens": 7, "total_tokens": 18}
        });
        StubResponse { status: 200, body: body.to_string() }
    }

    pub fn status(status: u16, body: &str) -> Self {
        StubResponse { status, body: body.to_string() }
    }
}

type Responder = dyn Fn(&StubRequest) -> StubResponse + Send + Sync;

struct Shared {
    responder: Box<Responder>,
    requests: Mutex<Vec<StubRequest>>,
    counter: AtomicU64,
}

pub struct StubServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

async fn handle(State(shared): State<Arc<Shared>>, headers: HeaderMap, body: Bytes) -> Response {
    let index = shared.counter.fetch_add(1, Ordering::SeqCst);
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let authorization = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let request = StubRequest { index, body, authorization };
    let reply = (shared.responder)(&request);
    shared.requests.lock().unwrap().push(request);
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [("content-type", "application/json")], reply.body).into_response()
}

impl StubServer {
    pub fn start(responder: impl Fn(&StubRequest) -> StubResponse + Send + Sync + 'static) -> StubServer {
        let shared = Arc::new(Shared {
            responder: Box::new(responder),
            requests: Mutex::new(Vec::new()),
            counter: AtomicU64::new(0),
        });
        let listener = std::net::TcpListener::bind("127.0.0.1:0").expect("bind stub listener");
        listener.set_nonblocking(true).expect("nonblocking listener");
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app = Router::new()
            .route("/v1/chat/completions", post(handle))
            .with_state(shared.clone());
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("stub runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("tokio listener");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
                    .expect("stub server");
            });
        });
        StubServer { addr, shared, shutdown: Some(tx), thread: Some(thread) }
    }

    /// Replies with `text` to every request.
    pub fn constant(text: &str) -> StubServer {
        let text = text.to_string();
        Self::start(move |_| StubResponse::completion(&text))
    }

    /// `http://127.0.0.1:<port>/v1`
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn request_count(&self) -> u64 {
        self.shared.counter.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<StubRequest> {
        self.shared.requests.lock().unwrap().clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
