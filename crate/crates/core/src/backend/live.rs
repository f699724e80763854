//! Closed-loop HTTP measurement against an OpenAI-compatible server.
//!
//! Each segment optionally launches the server from a user-supplied command
//! template with the selected knobs rendered in, probes the readiness path,
//! runs `concurrency` synchronous workers against the chat-completions path
//! for a warmup period plus a fixed measurement window, then stops the
//! server. Workers re-issue immediately on completion, so exactly
//! `concurrency` requests are in flight at any instant. Responses that
//! complete during warmup are discarded; requests still in flight at window
//! close are awaited up to the request timeout and kept if they finish.

use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Measurement, MeasurementBackend};
use crate::error::{Error, Result};
use crate::knobs::{self, KnobVector};
use crate::metrics::{summarize, RequestTrace};
use crate::scoring::ScoreMode;

/// Environment variable overriding the configured base URL.
pub const BASE_URL_ENV: &str = "SLO_TUNER_BASE_URL";

/// Endpoint, workload, window, and server-lifecycle settings.
///
/// `server_cmd` is a command template rendered per segment with the
/// placeholders `{max_seqs}`, `{spec_tokens}`, `{spec_flags}`, and `{port}`;
/// `{spec_flags}` expands `spec_flags_template` when the speculation toggle
/// is on and to nothing when it is off. Leave `server_cmd` empty to measure
/// an externally managed server. Templates run via `sh -c "exec ..."`, so a
/// single command line is expected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveBackendConfig {
    pub base_url: String,
    pub port: u16,
    pub model: String,
    pub prompt: String,
    pub max_tokens: u64,
    pub warmup_s: f64,
    pub window_s: f64,
    pub request_timeout_s: f64,
    pub server_cmd: String,
    pub spec_flags_template: String,
    pub readiness_path: String,
    pub chat_path: String,
    pub startup_timeout_s: f64,
    pub bearer_token: String,
}

impl Default for LiveBackendConfig {
    fn default() -> Self {
        LiveBackendConfig {
            base_url: "http://127.0.0.1:8000".into(),
            port: 8000,
            model: "stub-model".into(),
            prompt: "Summarize the tradeoffs between request batching and tail latency \
                     in a serving system, in one short paragraph."
                .into(),
            max_tokens: 64,
            warmup_s: 10.0,
            window_s: 30.0,
            request_timeout_s: 30.0,
            server_cmd: String::new(),
            spec_flags_template: "--num-speculative-tokens {spec_tokens}".into(),
            readiness_path: "/v1/models".into(),
            chat_path: "/v1/chat/completions".into(),
            startup_timeout_s: 120.0,
            bearer_token: String::new(),
        }
    }
}

impl LiveBackendConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, reason: &str| Error::InvalidConfig {
            field: format!("live.{name}"),
            reason: reason.into(),
        };
        if self.warmup_s < 0.0 {
            return Err(field("warmup_s", "must be >= 0"));
        }
        if self.window_s <= 0.0 {
            return Err(field("window_s", "must be > 0"));
        }
        if self.request_timeout_s <= 0.0 {
            return Err(field("request_timeout_s", "must be > 0"));
        }
        if self.startup_timeout_s <= 0.0 {
            return Err(field("startup_timeout_s", "must be > 0"));
        }
        if !self.server_cmd.is_empty() {
            if !self.server_cmd.contains("{max_seqs}") {
                return Err(field("server_cmd", "template must contain {max_seqs}"));
            }
            if !self.server_cmd.contains("{spec_flags}")
                && !self.server_cmd.contains("{spec_tokens}")
            {
                return Err(field(
                    "server_cmd",
                    "template must contain {spec_flags} or {spec_tokens}",
                ));
            }
        }
        Ok(())
    }

    /// Configured base URL unless overridden by `SLO_TUNER_BASE_URL`.
    pub fn effective_base_url(&self) -> String {
        std::env::var(BASE_URL_ENV).unwrap_or_else(|_| self.base_url.clone())
    }

    /// Render the server command for a knob vector.
    pub fn render_command(&self, k: &KnobVector) -> Result<String> {
        let max_seqs = k
            .get(knobs::DIM_MAX_SEQS)
            .ok_or_else(|| Error::MissingDim(knobs::DIM_MAX_SEQS.into()))?;
        let spec_tokens = k
            .get(knobs::DIM_SPEC_TOKENS)
            .ok_or_else(|| Error::MissingDim(knobs::DIM_SPEC_TOKENS.into()))?;
        let spec_on = k.toggle(knobs::TOGGLE_SPEC).unwrap_or(true);
        let spec_flags = if spec_on {
            self.spec_flags_template
                .replace("{spec_tokens}", &spec_tokens.to_string())
        } else {
            String::new()
        };
        Ok(self
            .server_cmd
            .replace("{max_seqs}", &max_seqs.to_string())
            .replace("{spec_flags}", &spec_flags)
            .replace("{spec_tokens}", &spec_tokens.to_string())
            .replace("{port}", &self.port.to_string()))
    }
}

/// A launched server process. Dropping the handle kills and reaps it, so no
/// segment can leak a server regardless of error paths.
pub struct ServerHandle {
    child: Child,
}

impl ServerHandle {
    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    pub fn stop(mut self) {
        self.kill_and_reap();
    }

    fn kill_and_reap(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.kill_and_reap();
    }
}

/// Traces plus the instrumented in-flight high-water mark.
#[derive(Debug)]
pub struct ClosedLoopResult {
    pub traces: Vec<RequestTrace>,
    pub max_in_flight: usize,
}

#[derive(Deserialize)]
struct ChatResponse {
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Live measurement backend.
pub struct LiveBackend {
    cfg: LiveBackendConfig,
    slo: f64,
}

impl LiveBackend {
    pub fn new(cfg: LiveBackendConfig, slo: f64) -> Result<LiveBackend> {
        cfg.validate()?;
        if slo <= 0.0 {
            return Err(Error::InvalidConfig {
                field: "slo_s".into(),
                reason: "must be > 0".into(),
            });
        }
        Ok(LiveBackend { cfg, slo })
    }

    pub fn config(&self) -> &LiveBackendConfig {
        &self.cfg
    }

    /// Launch the server for this knob vector (when a command template is
    /// configured) and wait until the readiness path answers 2xx.
    ///
    /// Returns `None` in external-server mode, after probing readiness.
    pub fn start_server(&self, k: &KnobVector) -> Result<Option<ServerHandle>> {
        let mut handle = if self.cfg.server_cmd.is_empty() {
            None
        } else {
            let rendered = self.cfg.render_command(k)?;
            let child = Command::new("sh")
                .arg("-c")
                .arg(format!("exec {rendered}"))
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .spawn()
                .map_err(|e| Error::SegmentFailed(format!("server spawn: {e}")))?;
            Some(ServerHandle { child })
        };

        let url = format!("{}{}", self.cfg.effective_base_url(), self.cfg.readiness_path);
        let probe = Client::builder()
            .timeout(Duration::from_millis(500))
            .build()?;
        let deadline = Instant::now() + Duration::from_secs_f64(self.cfg.startup_timeout_s);
        loop {
            if let Some(h) = handle.as_mut() {
                if let Ok(Some(status)) = h.child.try_wait() {
                    return Err(Error::SegmentFailed(format!(
                        "server exited during startup probe ({status})"
                    )));
                }
            }
            match probe.get(&url).send() {
                Ok(r) if r.status().is_success() => return Ok(handle),
                _ => {}
            }
            if Instant::now() >= deadline {
                // handle drop kills the process
                return Err(Error::SegmentFailed(format!(
                    "readiness probe {url} timed out after {}s",
                    self.cfg.startup_timeout_s
                )));
            }
            thread::sleep(Duration::from_millis(100));
        }
    }

    /// Run the warmup plus measurement window with `concurrency` workers.
    pub fn run_closed_loop(&self, concurrency: usize) -> Result<ClosedLoopResult> {
        if concurrency == 0 {
            return Err(Error::InvalidArgument("concurrency must be >= 1".into()));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(self.cfg.request_timeout_s))
            .build()?;
        let url = format!("{}{}", self.cfg.effective_base_url(), self.cfg.chat_path);
        let body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": self.cfg.prompt}],
            "max_tokens": self.cfg.max_tokens,
        });
        let window_start = Instant::now() + Duration::from_secs_f64(self.cfg.warmup_s);
        let window_s = self.cfg.window_s;
        let in_flight = Arc::new(AtomicUsize::new(0));
        let max_in_flight = Arc::new(AtomicUsize::new(0));

        let workers: Vec<_> = (0..concurrency)
            .map(|_| {
                let client = client.clone();
                let url = url.clone();
                let body = body.clone();
                let bearer = self.cfg.bearer_token.clone();
                let in_flight = in_flight.clone();
                let max_in_flight = max_in_flight.clone();
                thread::spawn(move || {
                    let mut traces: Vec<RequestTrace> = Vec::new();
                    loop {
                        let issue_rel = rel_seconds(Instant::now(), window_start);
                        if issue_rel >= window_s {
                            break;
                        }
                        let cur = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                        max_in_flight.fetch_max(cur, Ordering::SeqCst);
                        let mut req = client.post(&url).json(&body);
                        if !bearer.is_empty() {
                            req = req.bearer_auth(&bearer);
                        }
                        let outcome = req.send().and_then(|r| {
                            let status = r.status();
                            r.json::<ChatResponse>().map(|c| (status, c))
                        });
                        in_flight.fetch_sub(1, Ordering::SeqCst);
                        let completion_rel = rel_seconds(Instant::now(), window_start);
                        if completion_rel < 0.0 {
                            continue; // completed during warmup
                        }
                        traces.push(match outcome {
                            Ok((status, chat)) if status.is_success() => {
                                let usage = chat.usage.unwrap_or(Usage {
                                    prompt_tokens: 0,
                                    completion_tokens: 0,
                                });
                                RequestTrace::completed(
                                    issue_rel,
                                    completion_rel,
                                    usage.prompt_tokens,
                                    usage.completion_tokens,
                                )
                            }
                            _ => RequestTrace::failed(issue_rel, completion_rel),
                        });
                    }
                    traces
                })
            })
            .collect();

        let mut traces = Vec::new();
        for w in workers {
            traces.extend(w.join().expect("closed-loop worker panicked"));
        }
        Ok(ClosedLoopResult {
            traces,
            max_in_flight: max_in_flight.load(Ordering::SeqCst),
        })
    }
}

fn rel_seconds(now: Instant, origin: Instant) -> f64 {
    if now >= origin {
        (now - origin).as_secs_f64()
    } else {
        -(origin - now).as_secs_f64()
    }
}

impl MeasurementBackend for LiveBackend {
    fn measure(&mut self, k: &KnobVector) -> Result<Measurement> {
        let concurrency = k
            .get(knobs::DIM_CONC)
            .ok_or_else(|| Error::MissingDim(knobs::DIM_CONC.into()))?;
        if concurrency < 1 {
            return Err(Error::InvalidArgument("conc must be >= 1".into()));
        }
        let server = self.start_server(k)?;
        let outcome = self.run_closed_loop(concurrency as usize);
        if let Some(h) = server {
            h.stop();
        }
        let result = outcome?;
        let metrics = summarize(&result.traces, self.slo, self.cfg.window_s)?;
        Ok(Measurement {
            metrics,
            traces: result.traces,
        })
    }

    fn descriptor(&self) -> String {
        format!(
            "live {} (warmup {}s, window {}s)",
            self.cfg.effective_base_url(),
            self.cfg.warmup_s,
            self.cfg.window_s
        )
    }

    fn score_mode(&self) -> ScoreMode {
        ScoreMode::Live
    }
}
