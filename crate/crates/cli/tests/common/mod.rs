//! Shared helpers for the CLI tests: a mock embeddings service, a synthetic
//! corpus generator and a wrapper around the built binary.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const REWARD_MODELS: [&str; 3] = ["armo", "skywork_llama", "skywork_gemma"];
pub const TOPICS: usize = 12;
pub const DIM: usize = 16;
/// Fault code that lets a request through untouched.
pub const PASS: u16 = 0;

pub fn zoo_catalog_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/generator_zoo.json")
}

pub fn sftpick(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sftpick"))
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("SFTPICK_API_KEY")
        .args(args)
        .output()
        .expect("run sftpick")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[derive(Default)]
pub struct MockState {
    pub request_sizes: Vec<usize>,
    pub faults: VecDeque<u16>,
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
            .route("/embeddings", post(handle))
            .with_state(state.clone());
        std::thread::spawn(move || {
            tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap()
                .block_on(async move {
                    let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                    axum::serve(listener, app).await.unwrap();
                });
        });
        MockServer {
            url: format!("http://{addr}/embeddings"),
            state,
        }
    }

    pub fn push_faults(&self, codes: &[u16]) {
        self.state.lock().unwrap().faults.extend(codes.iter().copied());
    }

    pub fn request_sizes(&self) -> Vec<usize> {
        self.state.lock().unwrap().request_sizes.clone()
    }
}

/// Texts starting with "topic N:" land near one of `TOPICS` directions.
pub fn mock_embedding(text: &str) -> Vec<f64> {
    let topic: usize = text
        .strip_prefix("topic ")
        .and_then(|r| r.split(':').next())
        .and_then(|n| n.parse().ok())
        .unwrap_or(0);
    let digest = Sha256::digest(text.as_bytes());
    (0..DIM)
        .map(|i| {
            let noise = digest[i] as f64 / 255.0 - 0.5;
            let center = if i == topic % DIM { 4.0 } else { 0.0 };
            center + noise
        })
        .collect()
}

async fn handle(
    State(state): State<Arc<Mutex<MockState>>>,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    let input: Vec<String> = body["input"]
        .as_array()
        .map(|a| a.iter().map(|v| v.as_str().unwrap_or_default().to_string()).collect())
        .unwrap_or_default();
    let fault = {
        let mut s = state.lock().unwrap();
        s.request_sizes.push(input.len());
        s.faults.pop_front()
    };
    if let Some(code) = fault.filter(|&c| c != PASS) {
        return (StatusCode::from_u16(code).unwrap(), Json(json!({"error": "injected"})));
    }
    let data: Vec<Value> = input
        .iter()
        .enumerate()
        .rev()
        .map(|(i, t)| json!({"index": i, "embedding": mock_embedding(t)}))
        .collect();
    (StatusCode::OK, Json(json!({ "data": data })))
}

/// Model ids and sizes of the generator-zoo fixture.
pub fn zoo_models() -> Vec<(String, String, f64)> {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(zoo_catalog_path()).unwrap()).unwrap();
    v["models"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| {
            (
                m["id"].as_str().unwrap().to_string(),
                m["family"].as_str().unwrap().to_string(),
                m["params_b"].as_f64().unwrap(),
            )
        })
        .collect()
}

/// A synthetic dataset in the input JSONL format, without embeddings.
/// Every record is answered by a random subset (2..=19) of the zoo models and
/// scored by three reward models on different scales.
pub fn synthetic_corpus(n: usize, seed: u64) -> String {
    let models = zoo_models();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut out = String::new();
    for i in 0..n {
        let topic = rng.random_range(0..TOPICS);
        let hardness: f64 = noise.sample(&mut rng);
        let words = rng.random_range(3..40);
        let mut instruction = format!("topic {topic}: question {i}");
        for w in 0..words {
            write!(instruction, " w{}", (w * 7 + i) % 97).unwrap();
        }
        let k = rng.random_range(2..=models.len());
        let chosen = rand::seq::index::sample(&mut rng, models.len(), k);
        let responses: Vec<Value> = chosen
            .iter()
            .map(|m| {
                let (id, _, size) = &models[m];
                let skill = size.ln() * 0.3;
                let base = skill - hardness + noise.sample(&mut rng) * 0.8;
                json!({
                    "model": id,
                    "text": format!("Answer to question {i} from {id}."),
                    "rewards": {
                        REWARD_MODELS[0]: ((base * 0.1 + 0.5) * 100.0).round() / 100.0,
                        REWARD_MODELS[1]: base * 4.0 + 2.0 * noise.sample(&mut rng),
                        REWARD_MODELS[2]: base * 7.5 - 3.0,
                    }
                })
            })
            .collect();
        let line = json!({"id": format!("q{i:05}"), "instruction": instruction, "responses": responses});
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

/// `synthetic_corpus` with embeddings already attached, as `embed` would.
pub fn embedded_corpus(n: usize, seed: u64) -> String {
    synthetic_corpus(n, seed)
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            let e = mock_embedding(v["instruction"].as_str().unwrap());
            v["embedding"] = json!(e);
            format!("{v}\n")
        })
        .collect()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn read_jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
