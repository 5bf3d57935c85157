//! Blocking HTTP client for a remote embedding service.
//!
//! Wire protocol:
//!
//! * `POST {endpoint}/embed` with `{"model": "...", "inputs": ["...", ...]}`
//! * `POST {endpoint}/embed_image` with `{"inputs": ["<url or base64:...>", ...]}`
//!
//! Both answer `{"dim": N, "vectors": [[...], ...]}`. A non-200 status, a
//! transport failure or an unparsable body is retried with exponential
//! backoff; a well-formed answer of the wrong dim is not.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingProvider, TextVector};
use crate::datamodel::Shard;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
    pub batch_size: usize,
    pub max_retries: usize,
    pub max_in_flight: usize,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://127.0.0.1:8080".into(),
            model: "ViT-L-14/laion2b_s32b_b82k".into(),
            dim: 768,
            batch_size: 100,
            max_retries: 3,
            max_in_flight: 4,
            backoff_base_ms: 200,
            backoff_max_ms: 5_000,
            timeout_ms: 60_000,
        }
    }
}

#[derive(Serialize)]
struct TextRequest<'a> {
    model: &'a str,
    inputs: &'a [&'a str],
}

#[derive(Serialize)]
struct ImageRequest<'a> {
    inputs: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f32>>,
}

enum AttemptError {
    Transient(String),
    Malformed(String),
    Fatal(EmbedError),
}

pub struct RemoteProvider {
    config: RemoteConfig,
    agent: ureq::Agent,
}

type BatchResult = Result<Vec<Vec<f32>>, EmbedError>;

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Self {
        assert!(config.dim >= 1 && config.batch_size >= 1);
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build();
        RemoteProvider { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn url(&self, route: &str) -> String {
        format!("{}/{route}", self.config.endpoint.trim_end_matches('/'))
    }

    fn backoff(&self, attempt: usize) -> Duration {
        let factor = 1u64.checked_shl(attempt as u32).unwrap_or(u64::MAX);
        Duration::from_millis(
            self.config
                .backoff_base_ms
                .saturating_mul(factor)
                .min(self.config.backoff_max_ms),
        )
    }

    fn attempt(
        &self,
        url: &str,
        body: &str,
        expected: usize,
        first_input: usize,
    ) -> Result<Vec<Vec<f32>>, AttemptError> {
        let resp = match self
            .agent
            .post(url)
            .set("Content-Type", "application/json")
            .send_string(body)
        {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) => {
                return Err(AttemptError::Transient(format!("HTTP status {code}")))
            }
            Err(e) => return Err(AttemptError::Transient(e.to_string())),
        };
        if resp.status() != 200 {
            return Err(AttemptError::Transient(format!(
                "HTTP status {}",
                resp.status()
            )));
        }
        let text = resp
            .into_string()
            .map_err(|e| AttemptError::Transient(e.to_string()))?;
        let parsed: EmbedResponse =
            serde_json::from_str(&text).map_err(|e| AttemptError::Malformed(e.to_string()))?;
        if parsed.vectors.len() != expected {
            return Err(AttemptError::Malformed(format!(
                "expected {expected} vectors, got {}",
                parsed.vectors.len()
            )));
        }
        if parsed.dim != self.config.dim {
            return Err(AttemptError::Fatal(EmbedError::DimMismatch {
                expected: self.config.dim,
                got: parsed.dim,
                index: Some(first_input),
            }));
        }
        for (i, v) in parsed.vectors.iter().enumerate() {
            if v.len() != self.config.dim {
                return Err(AttemptError::Fatal(EmbedError::DimMismatch {
                    expected: self.config.dim,
                    got: v.len(),
                    index: Some(first_input + i),
                }));
            }
        }
        Ok(parsed.vectors)
    }

    fn post_with_retry(
        &self,
        url: &str,
        body: &str,
        expected: usize,
        first_input: usize,
    ) -> Result<Vec<Vec<f32>>, EmbedError> {
        let attempts = self.config.max_retries + 1;
        let mut last = AttemptError::Transient(String::new());
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.backoff(attempt - 1));
            }
            match self.attempt(url, body, expected, first_input) {
                Ok(v) => return Ok(v),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(e) => last = e,
            }
        }
        Err(match last {
            AttemptError::Malformed(message) => EmbedError::ProtocolError {
                message,
                first_input,
            },
            AttemptError::Transient(last_error) => EmbedError::RemoteUnavailable {
                attempts,
                last_error,
                first_input,
            },
            AttemptError::Fatal(e) => e,
        })
    }

    /// Splits `inputs` into batches and runs up to `max_in_flight` of them at
    /// once. Output order always matches input order.
    fn run_batches(
        &self,
        route: &str,
        inputs: &[&str],
        encode: impl Fn(&[&str]) -> String + Sync,
    ) -> Result<Vec<Vec<f32>>, EmbedError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let url = self.url(route);
        let batches: Vec<(usize, &[&str])> = inputs
            .chunks(self.config.batch_size)
            .enumerate()
            .map(|(i, c)| (i * self.config.batch_size, c))
            .collect();
        let results: Mutex<Vec<Option<BatchResult>>> = Mutex::new(vec![None; batches.len()]);
        let next = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);
        let workers = self.config.max_in_flight.clamp(1, batches.len());

        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if failed.load(Ordering::Relaxed) {
                        break;
                    }
                    let b = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&(start, chunk)) = batches.get(b) else {
                        break;
                    };
                    let r = self.post_with_retry(&url, &encode(chunk), chunk.len(), start);
                    if r.is_err() {
                        failed.store(true, Ordering::Relaxed);
                    }
                    results.lock().unwrap()[b] = Some(r);
                });
            }
        });

        let mut out = Vec::with_capacity(inputs.len());
        for r in results.into_inner().unwrap() {
            match r {
                Some(Ok(vs)) => out.extend(vs),
                Some(Err(e)) => return Err(e),
                // Skipped after an earlier failure; that failure is reported.
                None => continue,
            }
        }
        debug_assert_eq!(out.len(), inputs.len());
        Ok(out)
    }

    /// Embeds every input as sent, including empty strings.
    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let model = self.config.model.as_str();
        self.run_batches("embed", texts, |chunk| {
            serde_json::to_string(&TextRequest {
                model,
                inputs: chunk,
            })
            .expect("request serializes")
        })
    }

    pub fn embed_image_refs(&self, refs: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        self.run_batches("embed_image", refs, |chunk| {
            serde_json::to_string(&ImageRequest { inputs: chunk }).expect("request serializes")
        })
    }
}

/// Sends `texts` in batches of at most `batch_size`, preserving order.
pub fn batch_embed_remote(
    provider: &RemoteProvider,
    texts: &[&str],
) -> Result<Vec<Vec<f32>>, EmbedError> {
    provider.embed_batch(texts)
}

impl EmbeddingProvider for RemoteProvider {
    fn dim(&self) -> usize {
        self.config.dim
    }

    /// Whitespace-only captions never reach the service.
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<TextVector>, EmbedError> {
        let (idx, send): (Vec<usize>, Vec<&str>) = texts
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.trim().is_empty())
            .map(|(i, t)| (i, *t))
            .unzip();
        let vectors = self.embed_batch(&send).map_err(|e| remap_index(e, &idx))?;
        let mut out = vec![TextVector::Empty; texts.len()];
        for (i, v) in idx.into_iter().zip(vectors) {
            out[i] = TextVector::Vector(v);
        }
        Ok(out)
    }

    fn embed_images(&self, shard: &Shard, rows: &[usize]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let refs = rows
            .iter()
            .map(|&r| {
                shard
                    .samples()
                    .get(r)
                    .and_then(|s| s.url.as_deref())
                    .ok_or(EmbedError::MissingImageRef { row: r })
            })
            .collect::<Result<Vec<&str>, _>>()?;
        self.embed_image_refs(&refs)
            .map_err(|e| remap_index(e, rows))
    }
}

/// Maps an index into the sent list back to the caller's index space.
fn remap_index(e: EmbedError, sent_to_caller: &[usize]) -> EmbedError {
    let map = |i: usize| sent_to_caller.get(i).copied().unwrap_or(i);
    match e {
        EmbedError::RemoteUnavailable {
            attempts,
            last_error,
            first_input,
        } => EmbedError::RemoteUnavailable {
            attempts,
            last_error,
            first_input: map(first_input),
        },
        EmbedError::ProtocolError {
            message,
            first_input,
        } => EmbedError::ProtocolError {
            message,
            first_input: map(first_input),
        },
        EmbedError::DimMismatch {
            expected,
            got,
            index,
        } => EmbedError::DimMismatch {
            expected,
            got,
            index: index.map(map),
        },
        other => other,
    }
}
