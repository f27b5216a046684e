//! Chat-completions transport with retries, bounded concurrency, and a
//! replayable transcript.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};
use crate::protocol::Message;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub name: String,
    pub base_url: String,
    pub api_key_env_var: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            name: "default".into(),
            base_url: "https://api.openai.com/v1".into(),
            api_key_env_var: "OPENAI_API_KEY".into(),
            model: "gpt-4o".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            max_in_flight: 4,
            backoff_base_ms: 500,
            backoff_max_ms: 20_000,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_in_flight == 0 {
            return Err(HarnessError::Config(format!(
                "endpoint {}: max_in_flight must be at least 1",
                self.name
            )));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(HarnessError::Config(format!(
                "endpoint {}: timeout must be positive",
                self.name
            )));
        }
        Ok(())
    }

    /// Backoff before retry number `attempt` (1-based), with up to 50% jitter.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let exp = self
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.saturating_sub(1).min(20))
            .min(self.backoff_max_ms);
        let jitter = rand::thread_rng().gen_range(0.5..=1.0);
        Duration::from_millis((exp as f64 * jitter) as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            temperature: 1.0,
            top_p: 1.0,
            max_tokens: 1024,
        }
    }
}

/// One line of the transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub request_hash: String,
    pub messages_digest: String,
    pub model: String,
    pub completion: Option<String>,
    pub status: u16,
    pub attempts: u32,
    pub latency_ms: u64,
    pub usage: Option<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GatewayMode {
    /// Talk to the endpoint; append to the transcript if a path is given.
    Live { transcript: Option<PathBuf> },
    /// Serve completions from a transcript; the network is never touched.
    Replay { transcript: PathBuf },
}

struct Semaphore {
    used: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

enum Attempt {
    Done { body: Value, status: u16 },
    Retryable(String),
    Permanent { status: u16, message: String },
}

pub struct Gateway {
    config: EndpointConfig,
    mode: GatewayMode,
    http: ureq::Agent,
    slots: Semaphore,
    transcript: Mutex<Option<File>>,
    replay: Mutex<HashMap<String, VecDeque<String>>>,
    network_calls: AtomicU64,
}

impl Gateway {
    pub fn new(config: EndpointConfig, mode: GatewayMode) -> Result<Self> {
        config.validate()?;
        let mut replay = HashMap::new();
        let mut transcript = None;
        match &mode {
            GatewayMode::Live { transcript: Some(path) } => {
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                transcript = Some(OpenOptions::new().create(true).append(true).open(path)?);
            }
            GatewayMode::Live { transcript: None } => {}
            GatewayMode::Replay { transcript } => replay = load_replay(transcript)?,
        }
        let http: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Gateway {
            slots: Semaphore {
                used: Mutex::new(0),
                freed: Condvar::new(),
                limit: config.max_in_flight,
            },
            config,
            mode,
            http,
            transcript: Mutex::new(transcript),
            replay: Mutex::new(replay),
            network_calls: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// HTTP requests issued so far, retries included.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    /// Request the first choice's content for `messages`.
    pub fn complete(&self, messages: &[Message], sampling: &Sampling) -> Result<String> {
        if messages.is_empty() {
            return Err(HarnessError::Input("completion request without messages".into()));
        }
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "max_tokens": sampling.max_tokens,
        });
        let request_hash = sha256_hex(&serde_json::to_vec(&body)?);
        if let GatewayMode::Replay { transcript } = &self.mode {
            return self
                .replay
                .lock()
                .unwrap()
                .get_mut(&request_hash)
                .and_then(VecDeque::pop_front)
                .ok_or_else(|| HarnessError::Transport {
                    attempts: 0,
                    message: format!(
                        "no recorded completion for request {request_hash} in {}",
                        transcript.display()
                    ),
                });
        }

        let _permit = self.slots.acquire();
        let started = Instant::now();
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let key = std::env::var(&self.config.api_key_env_var).ok();
        let mut attempts = 0;
        let outcome = loop {
            attempts += 1;
            match self.attempt(&url, key.as_deref(), &body) {
                Attempt::Retryable(_) if attempts <= self.config.max_retries => {
                    std::thread::sleep(self.config.backoff(attempts));
                }
                Attempt::Retryable(message) => break Err((0, message)),
                Attempt::Permanent { status, message } => break Err((status, message)),
                Attempt::Done { body, status } => break Ok((body, status)),
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        let messages_digest = sha256_hex(&serde_json::to_vec(messages)?);
        let (record, result) = match outcome {
            Ok((resp, status)) => {
                let completion = resp["choices"][0]["message"]["content"]
                    .as_str()
                    .map(str::to_string);
                let result = completion.clone().ok_or_else(|| HarnessError::Transport {
                    attempts,
                    message: "response lacks choices[0].message.content".into(),
                });
                let usage = resp.get("usage").cloned();
                (
                    TranscriptRecord {
                        request_hash,
                        messages_digest,
                        model: self.config.model.clone(),
                        completion,
                        status,
                        attempts,
                        latency_ms,
                        usage,
                    },
                    result,
                )
            }
            Err((status, message)) => (
                TranscriptRecord {
                    request_hash,
                    messages_digest,
                    model: self.config.model.clone(),
                    completion: None,
                    status,
                    attempts,
                    latency_ms,
                    usage: None,
                },
                Err(HarnessError::Transport { attempts, message }),
            ),
        };
        self.log(&record)?;
        result
    }

    fn attempt(&self, url: &str, key: Option<&str>, body: &Value) -> Attempt {
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let mut req = self.http.post(url);
        if let Some(k) = key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                match status {
                    200..=299 => match serde_json::from_str(&text) {
                        Ok(body) => Attempt::Done { body, status },
                        Err(e) => Attempt::Permanent {
                            status,
                            message: format!("malformed response body: {e}"),
                        },
                    },
                    429 | 500..=599 => Attempt::Retryable(format!("HTTP {status}")),
                    _ => Attempt::Permanent {
                        status,
                        message: format!("HTTP {status}: {}", truncate(&text, 200)),
                    },
                }
            }
            Err(
                e @ (ureq::Error::Timeout(_)
                | ureq::Error::Io(_)
                | ureq::Error::ConnectionFailed
                | ureq::Error::HostNotFound),
            ) => Attempt::Retryable(e.to_string()),
            Err(e) => Attempt::Permanent {
                status: 0,
                message: e.to_string(),
            },
        }
    }

    fn log(&self, record: &TranscriptRecord) -> Result<()> {
        if let Some(f) = self.transcript.lock().unwrap().as_mut() {
            writeln!(f, "{}", serde_json::to_string(record)?)?;
            f.flush()?;
        }
        Ok(())
    }
}

fn load_replay(path: &Path) -> Result<HashMap<String, VecDeque<String>>> {
    let mut map: HashMap<String, VecDeque<String>> = HashMap::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TranscriptRecord = serde_json::from_str(&line)?;
        if let Some(c) = rec.completion {
            map.entry(rec.request_hash).or_default().push_back(c);
        }
    }
    Ok(map)
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_and_is_capped() {
        let c = EndpointConfig {
            backoff_base_ms: 100,
            backoff_max_ms: 1000,
            ..Default::default()
        };
        for attempt in 1..10 {
            let d = c.backoff(attempt).as_millis() as u64;
            let cap = (100u64 << (attempt - 1)).min(1000);
            assert!(d >= cap / 2 && d <= cap, "attempt {attempt}: {d}");
        }
    }

    #[test]
    fn zero_in_flight_is_a_config_error() {
        let c = EndpointConfig {
            max_in_flight: 0,
            ..Default::default()
        };
        assert!(matches!(
            Gateway::new(c, GatewayMode::Live { transcript: None }),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn replay_without_record_is_a_transport_error_and_never_touches_network() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "").unwrap();
        let g = Gateway::new(
            EndpointConfig::default(),
            GatewayMode::Replay { transcript: path },
        )
        .unwrap();
        let r = g.complete(&[Message::new(crate::protocol::Role::User, "hi")], &Sampling::default());
        assert!(matches!(r, Err(HarnessError::Transport { attempts: 0, .. })));
        assert_eq!(g.network_calls(), 0);
    }
}
