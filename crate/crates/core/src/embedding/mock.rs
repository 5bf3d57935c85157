//! In-process mock of the remote embedding service, for conformance tests
//! and offline runs of the remote code path.
//!
//! Each input string maps to [`mock_vector`], so callers can check order
//! preservation. Faults are injected through [`MockBehavior`] and every
//! request is recorded in the log.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};

use super::{fnv1a64, mix64};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockBehavior {
    /// Answer this many requests with HTTP 503 before behaving.
    pub fail_first: usize,
    /// Report and return vectors of this dim instead of the server's.
    pub wrong_dim: Option<usize>,
    /// Answer this many requests with a body that is not JSON.
    pub malformed_first: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedRequest {
    pub path: String,
    pub model: Option<String>,
    pub inputs: Vec<String>,
    pub status: u16,
}

#[derive(Default)]
struct State {
    behavior: MockBehavior,
    log: Vec<LoggedRequest>,
    served: usize,
}

/// Deterministic vector the mock returns for one input.
pub fn mock_vector(input: &str, dim: usize) -> Vec<f32> {
    (0..dim as u64)
        .map(|i| {
            let h = mix64(fnv1a64(&[b"mock\0", input.as_bytes(), &i.to_le_bytes()]));
            // Multiples of 1/1024 in [-1, 1): exact in f32 and in JSON.
            ((h >> 53) as f32 - 1024.0) / 1024.0
        })
        .collect()
}

pub struct MockServer {
    server: Arc<tiny_http::Server>,
    state: Arc<Mutex<State>>,
    addr: SocketAddr,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds to an ephemeral port on 127.0.0.1.
    pub fn start(dim: usize, behavior: MockBehavior) -> std::io::Result<MockServer> {
        Self::bind("127.0.0.1:0", dim, behavior)
    }

    pub fn bind(addr: &str, dim: usize, behavior: MockBehavior) -> std::io::Result<MockServer> {
        let server = tiny_http::Server::http(addr)
            .map(Arc::new)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("not an IP listener"))?;
        let state = Arc::new(Mutex::new(State {
            behavior,
            ..Default::default()
        }));
        let handle = {
            let server = Arc::clone(&server);
            let state = Arc::clone(&state);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle_request(request, dim, &state);
                }
            })
        };
        Ok(MockServer {
            server,
            state,
            addr,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn log(&self) -> Vec<LoggedRequest> {
        self.state.lock().unwrap().log.clone()
    }

    pub fn set_behavior(&self, behavior: MockBehavior) {
        let mut st = self.state.lock().unwrap();
        st.behavior = behavior;
        st.served = 0;
    }

    /// Blocks the calling thread until the server is stopped elsewhere.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle_request(mut request: tiny_http::Request, dim: usize, state: &Mutex<State>) {
    let path = request.url().to_string();
    let mut body = String::new();
    let read_ok = request.as_reader().read_to_string(&mut body).is_ok();
    let parsed: Option<Value> = serde_json::from_str(&body).ok();
    let inputs: Vec<String> = parsed
        .as_ref()
        .and_then(|v| v.get("inputs"))
        .and_then(Value::as_array)
        .map(|a| {
            a.iter()
                .filter_map(|s| s.as_str().map(str::to_string))
                .collect()
        })
        .unwrap_or_default();
    let model = parsed
        .as_ref()
        .and_then(|v| v.get("model"))
        .and_then(Value::as_str)
        .map(str::to_string);

    let (status, payload) = {
        let mut st = state.lock().unwrap();
        let nth = st.served;
        st.served += 1;
        let b = &st.behavior;
        let (status, payload) = if !matches!(path.as_str(), "/embed" | "/embed_image") {
            (404, "not found".to_string())
        } else if !read_ok || parsed.is_none() {
            (400, "bad request".to_string())
        } else if nth < b.fail_first {
            (503, "unavailable".to_string())
        } else if nth < b.fail_first + b.malformed_first {
            (200, "{\"dim\": ".to_string())
        } else {
            let d = b.wrong_dim.unwrap_or(dim);
            let vectors: Vec<Vec<f32>> = inputs.iter().map(|s| mock_vector(s, d)).collect();
            (200, json!({ "dim": d, "vectors": vectors }).to_string())
        };
        st.log.push(LoggedRequest {
            path,
            model,
            inputs,
            status,
        });
        (status, payload)
    };
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
    let response = tiny_http::Response::from_string(payload)
        .with_status_code(status)
        .with_header(header);
    let _ = request.respond(response);
}
