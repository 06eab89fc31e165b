//! In-process mock of an embeddings service.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const DIM: usize = 8;

#[derive(Default)]
pub struct MockState {
    /// Number of texts in every request received, in arrival order.
    pub request_sizes: Vec<usize>,
    /// Status codes to answer with before serving normally.
    pub faults: VecDeque<u16>,
    /// When set, every request fails with this status.
    pub always: Option<u16>,
    pub auth_headers: Vec<Option<String>>,
}

#[derive(Clone)]
pub struct MockServer {
    pub url: String,
    pub state: Arc<Mutex<MockState>>,
}

impl MockServer {
    pub fn start() -> Self {
        let state = Arc::new(Mutex::new(MockState::default()));
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let addr = listener.local_addr().unwrap();
        let app = Router::new()
            .route("/v1/embeddings", post(handle))
            .with_state(state.clone());
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                axum::serve(listener, app).await.unwrap();
            });
        });
        MockServer {
            url: format!("http://{addr}/v1/embeddings"),
            state,
        }
    }

    pub fn push_faults(&self, codes: &[u16]) {
        self.state.lock().unwrap().faults.extend(codes.iter().copied());
    }

    pub fn fail_always(&self, code: u16) {
        self.state.lock().unwrap().always = Some(code);
    }

    pub fn request_sizes(&self) -> Vec<usize> {
        self.state.lock().unwrap().request_sizes.clone()
    }
}

/// The vector the mock returns for a text: unit-free, deterministic.
pub fn expected_embedding(text: &str) -> Vec<f64> {
    let digest = Sha256::digest(text.as_bytes());
    digest[..DIM]
        .iter()
        .map(|b| *b as f64 / 255.0 - 0.5)
        .collect()
}

async fn handle(
    State(state): State<Arc<Mutex<MockState>>>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    let input: Vec<String> = body["input"]
        .as_array()
        .map(|a| a.iter().map(|v| v.as_str().unwrap_or_default().to_string()).collect())
        .unwrap_or_default();
    let fault = {
        let mut s = state.lock().unwrap();
        s.request_sizes.push(input.len());
        s.auth_headers.push(
            headers
                .get("authorization")
                .map(|v| v.to_str().unwrap().to_string()),
        );
        s.always.or_else(|| s.faults.pop_front())
    };
    if let Some(code) = fault {
        return (
            StatusCode::from_u16(code).unwrap(),
            Json(json!({"error": "injected"})),
        );
    }
    // reversed on purpose: clients must order by index
    let data: Vec<Value> = input
        .iter()
        .enumerate()
        .rev()
        .map(|(i, t)| json!({"index": i, "embedding": expected_embedding(t)}))
        .collect();
    (StatusCode::OK, Json(json!({ "data": data })))
}
