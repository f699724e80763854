//! Minimal OpenAI-compatible stub server with programmable latency.
//!
//! Serves `GET /v1/models` (readiness) and `POST /v1/chat/completions` with
//! a fixed response after a configurable delay; optionally stalls every Nth
//! completion to exercise client timeouts. Used by the test suite and by the
//! `slo-tuner-stub` binary for dry-running the live path without a model
//! server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

/// Stub behavior.
#[derive(Debug, Clone)]
pub struct StubOptions {
    /// Delay before each chat completion responds.
    pub latency: Duration,
    /// Never respond to every Nth chat request (1-based): the connection is
    /// held open until the client gives up.
    pub stall_every: Option<u64>,
    pub model: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Default for StubOptions {
    fn default() -> Self {
        StubOptions {
            latency: Duration::from_millis(50),
            stall_every: None,
            model: "stub-model".into(),
            prompt_tokens: 24,
            completion_tokens: 64,
        }
    }
}

/// A stub server running on a background thread. Dropping it shuts the
/// listener down.
pub struct StubServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    chat_hits: Arc<AtomicU64>,
    accept_thread: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Bind an ephemeral port on localhost and start serving.
    pub fn spawn(opts: StubOptions) -> std::io::Result<StubServer> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let chat_hits = Arc::new(AtomicU64::new(0));
        let accept_thread = {
            let shutdown = shutdown.clone();
            let chat_hits = chat_hits.clone();
            thread::spawn(move || serve(listener, opts, shutdown, chat_hits))
        };
        Ok(StubServer {
            addr,
            shutdown,
            chat_hits,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    /// Chat completions requested so far (including stalled ones).
    pub fn chat_hits(&self) -> u64 {
        self.chat_hits.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // poke the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

/// Accept loop; blocks until `shutdown` is set. Connections are handled on
/// their own threads so concurrent closed-loop workers are never serialized.
pub fn serve(
    listener: TcpListener,
    opts: StubOptions,
    shutdown: Arc<AtomicBool>,
    chat_hits: Arc<AtomicU64>,
) {
    for conn in listener.incoming() {
        if shutdown.load(Ordering::SeqCst) {
            return;
        }
        let Ok(stream) = conn else { continue };
        let opts = opts.clone();
        let shutdown = shutdown.clone();
        let chat_hits = chat_hits.clone();
        thread::spawn(move || {
            let _ = handle_connection(stream, &opts, &shutdown, &chat_hits);
        });
    }
}

fn handle_connection(
    stream: TcpStream,
    opts: &StubOptions,
    shutdown: &AtomicBool,
    chat_hits: &AtomicU64,
) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();

    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim();
        if line.is_empty() {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = v.trim().parse().unwrap_or(0);
        }
    }
    if content_length > 0 {
        let mut body = vec![0u8; content_length.min(1 << 20)];
        reader.read_exact(&mut body)?;
    }

    let mut stream = stream;
    match (method.as_str(), path.as_str()) {
        ("GET", "/v1/models") => {
            let body = format!(
                r#"{{"object":"list","data":[{{"id":"{}","object":"model"}}]}}"#,
                opts.model
            );
            respond(&mut stream, 200, &body)
        }
        ("POST", "/v1/chat/completions") => {
            let n = chat_hits.fetch_add(1, Ordering::SeqCst) + 1;
            if opts.stall_every.is_some_and(|every| n % every == 0) {
                // hold the connection open until shutdown
                while !shutdown.load(Ordering::SeqCst) {
                    thread::sleep(Duration::from_millis(50));
                }
                return Ok(());
            }
            thread::sleep(opts.latency);
            let body = format!(
                concat!(
                    r#"{{"id":"stub-{}","object":"chat.completion","model":"{}","#,
                    r#""choices":[{{"index":0,"message":{{"role":"assistant","content":"ok"}},"#,
                    r#""finish_reason":"stop"}}],"#,
                    r#""usage":{{"prompt_tokens":{},"completion_tokens":{},"total_tokens":{}}}}}"#
                ),
                n,
                opts.model,
                opts.prompt_tokens,
                opts.completion_tokens,
                opts.prompt_tokens + opts.completion_tokens
            );
            respond(&mut stream, 200, &body)
        }
        _ => respond(&mut stream, 404, r#"{"error":"not found"}"#),
    }
}

fn respond(stream: &mut TcpStream, status: u16, body: &str) -> std::io::Result<()> {
    let reason = match status {
        200 => "OK",
        404 => "Not Found",
        _ => "Error",
    };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_answers_readiness_and_chat() {
        let server = StubServer::spawn(StubOptions {
            latency: Duration::from_millis(5),
            ..StubOptions::default()
        })
        .unwrap();
        let client = reqwest::blocking::Client::new();
        let r = client
            .get(format!("{}/v1/models", server.base_url()))
            .send()
            .unwrap();
        assert!(r.status().is_success());
        let r = client
            .post(format!("{}/v1/chat/completions", server.base_url()))
            .json(&serde_json::json!({"model": "stub-model", "messages": [], "max_tokens": 4}))
            .send()
            .unwrap();
        assert!(r.status().is_success());
        let v: serde_json::Value = r.json().unwrap();
        assert_eq!(v["usage"]["completion_tokens"], 64);
        assert_eq!(server.chat_hits(), 1);
    }
}
