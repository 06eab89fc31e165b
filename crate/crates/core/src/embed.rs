//! Client for an HTTP embeddings service.
//!
//! Wire format: `POST {"input": [text, ...]}` answered by
//! `{"data": [{"index": i, "embedding": [...]}, ...]}`, with an optional
//! bearer token. Items are placed by `index`, never by arrival order.
//! 429, 5xx and transport failures are retried with exponential backoff and
//! full jitter; any other non-success status fails immediately.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::InstructionRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub batch_size: usize,
    pub max_retries: u32,
    pub timeout_s: f64,
    /// Concurrent in-flight requests (one per worker).
    pub workers: usize,
    /// First backoff ceiling in seconds; doubles on every retry.
    pub backoff_base_s: f64,
}

impl EmbedConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        EmbedConfig {
            endpoint: endpoint.into(),
            api_key: None,
            batch_size: 64,
            max_retries: 3,
            timeout_s: 30.0,
            workers: 1,
            backoff_base_s: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.endpoint.is_empty() {
            return Err(Error::invalid("embedding endpoint is empty"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.timeout_s.is_nan() || self.timeout_s <= 0.0 {
            return Err(Error::invalid("timeout must be positive"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        if self.backoff_base_s.is_nan() || self.backoff_base_s < 0.0 {
            return Err(Error::invalid("backoff base must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedItem>,
}

#[derive(Deserialize)]
struct EmbedItem {
    index: usize,
    embedding: Vec<f64>,
}

type BatchResult = Result<Vec<Vec<f64>>>;

pub struct EmbedClient {
    config: EmbedConfig,
    http: Client,
}

enum Attempt {
    Done(Vec<Vec<f64>>),
    Transient(String),
}

impl EmbedClient {
    pub fn new(config: EmbedConfig) -> Result<Self> {
        config.validate()?;
        let http = Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build()
            .map_err(|e| Error::Remote(format!("building HTTP client: {e}")))?;
        Ok(EmbedClient { config, http })
    }

    pub fn config(&self) -> &EmbedConfig {
        &self.config
    }

    /// Embeds every text, batching by `batch_size`. Output is in input order.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Err(Error::invalid("nothing to embed"));
        }
        let chunks: Vec<&[String]> = texts.chunks(self.config.batch_size).collect();
        let results = if self.config.workers == 1 || chunks.len() == 1 {
            chunks.iter().map(|c| self.embed_one(c)).collect::<Result<Vec<_>>>()?
        } else {
            self.embed_parallel(&chunks)?
        };

        let out: Vec<Vec<f64>> = results.into_iter().flatten().collect();
        let dim = out[0].len();
        if let Some(v) = out.iter().find(|v| v.len() != dim) {
            return Err(Error::Remote(format!(
                "inconsistent embedding dimensions across batches ({dim} vs {})",
                v.len()
            )));
        }
        Ok(out)
    }

    fn embed_parallel(&self, chunks: &[&[String]]) -> Result<Vec<Vec<Vec<f64>>>> {
        let next = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);
        let slots: Mutex<Vec<Option<BatchResult>>> =
            Mutex::new((0..chunks.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..self.config.workers.min(chunks.len()) {
                scope.spawn(|| loop {
                    if failed.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= chunks.len() {
                        break;
                    }
                    let res = self.embed_one(chunks[i]);
                    if res.is_err() {
                        failed.store(true, Ordering::Relaxed);
                    }
                    slots.lock().unwrap()[i] = Some(res);
                });
            }
        });
        let slots = slots.into_inner().unwrap();
        let mut out = Vec::with_capacity(slots.len());
        // a `None` slot means a worker stopped early after another batch failed
        for r in slots.into_iter().flatten() {
            out.push(r?);
        }
        if out.len() != chunks.len() {
            return Err(Error::Remote("embedding aborted after a failed batch".into()));
        }
        Ok(out)
    }

    fn embed_one(&self, batch: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            match self.try_request(batch)? {
                Attempt::Done(v) => return Ok(v),
                Attempt::Transient(msg) => {
                    log::warn!("embedding request failed (attempt {}): {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(Error::Remote(format!(
            "giving up after {} retries: {last}",
            self.config.max_retries
        )))
    }

    fn backoff(&self, retry: u32) -> Duration {
        let ceiling = self.config.backoff_base_s * 2f64.powi(retry as i32);
        Duration::from_secs_f64(rand::rng().random::<f64>() * ceiling)
    }

    fn try_request(&self, batch: &[String]) -> Result<Attempt> {
        let mut req = self
            .http
            .post(&self.config.endpoint)
            .json(&EmbedRequest { input: batch });
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Transient(e.to_string())),
        };
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Ok(Attempt::Transient(format!("HTTP {status}")));
        }
        let body = match resp.text() {
            Ok(b) => b,
            Err(e) => return Ok(Attempt::Transient(e.to_string())),
        };
        if !status.is_success() {
            return Err(Error::Remote(format!("HTTP {status}: {}", body.trim())));
        }
        let parsed: EmbedResponse = serde_json::from_str(&body)
            .map_err(|e| Error::Remote(format!("malformed response: {e}")))?;
        order_items(parsed.data, batch.len()).map(Attempt::Done)
    }
}

fn order_items(items: Vec<EmbedItem>, expected: usize) -> Result<Vec<Vec<f64>>> {
    if items.len() != expected {
        return Err(Error::Remote(format!(
            "expected {expected} embeddings, got {}",
            items.len()
        )));
    }
    let mut slots: Vec<Option<Vec<f64>>> = vec![None; expected];
    for item in items {
        let slot = slots
            .get_mut(item.index)
            .ok_or_else(|| Error::Remote(format!("embedding index {} out of range", item.index)))?;
        if slot.replace(item.embedding).is_some() {
            return Err(Error::Remote(format!("duplicate embedding index {}", item.index)));
        }
    }
    let out: Vec<Vec<f64>> = slots.into_iter().map(|s| s.expect("all indices filled")).collect();
    let dim = out[0].len();
    if dim == 0 || out.iter().any(|v| v.len() != dim) {
        return Err(Error::Remote("embedding dimensions differ within a response".into()));
    }
    Ok(out)
}

pub fn embed_batch(texts: &[String], config: &EmbedConfig) -> Result<Vec<Vec<f64>>> {
    EmbedClient::new(config.clone())?.embed(texts)
}

/// Embeds the instructions of records that lack an embedding. Already
/// embedded records are left alone; no request is made when none are missing.
pub fn attach_embeddings(
    records: Vec<InstructionRecord>,
    config: &EmbedConfig,
) -> Result<Vec<InstructionRecord>> {
    let missing: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.embedding.is_none())
        .map(|(i, _)| i)
        .collect();
    if missing.is_empty() {
        return Ok(records);
    }
    attach_with(records, &missing, |texts| embed_batch(texts, config))
}

fn attach_with(
    mut records: Vec<InstructionRecord>,
    missing: &[usize],
    embed: impl FnOnce(&[String]) -> Result<Vec<Vec<f64>>>,
) -> Result<Vec<InstructionRecord>> {
    let mut dim = None;
    for r in &records {
        if let Some(e) = &r.embedding {
            match dim {
                None => dim = Some(e.len()),
                Some(d) if d != e.len() => {
                    return Err(Error::validation(format!(
                        "record {:?}: embedding dimension {} differs from {d}",
                        r.id,
                        e.len()
                    )))
                }
                _ => {}
            }
        }
    }
    let texts: Vec<String> = missing.iter().map(|&i| records[i].instruction.clone()).collect();
    let vectors = embed(&texts)?;
    if let (Some(d), Some(v)) = (dim, vectors.first()) {
        if v.len() != d {
            return Err(Error::validation(format!(
                "service returned dimension {} but existing embeddings have dimension {d}",
                v.len()
            )));
        }
    }
    for (&i, v) in missing.iter().zip(vectors) {
        records[i].embedding = Some(v);
    }
    Ok(records)
}
