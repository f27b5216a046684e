//! Scripted HTTP stub standing in for a chat-completions endpoint.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

/// One scripted reply. When the script runs out the stub keeps answering
/// with `fallback`.
#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub content: String,
}

impl Reply {
    pub fn ok(content: &str) -> Self {
        Reply {
            status: 200,
            content: content.into(),
        }
    }

    pub fn status(status: u16) -> Self {
        Reply {
            status,
            content: String::new(),
        }
    }
}

#[derive(Default)]
struct Shared {
    script: Mutex<VecDeque<Reply>>,
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    bodies: Mutex<Vec<Value>>,
}

pub struct Stub {
    pub base_url: String,
    shared: Arc<Shared>,
}

impl Stub {
    /// Serve `script` then `fallback`, holding each request for `delay`.
    pub fn start(script: Vec<Reply>, fallback: Reply, delay: Duration) -> Stub {
        Stub::start_with(script, move |_| fallback.clone(), delay)
    }

    /// Serve `script`, then answer with `respond(request body)`.
    pub fn start_with<F>(script: Vec<Reply>, respond: F, delay: Duration) -> Stub
    where
        F: Fn(&Value) -> Reply + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
        let shared = Arc::new(Shared {
            script: Mutex::new(script.into()),
            ..Shared::default()
        });
        let respond = Arc::new(respond);
        let s = shared.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { return };
                let s = s.clone();
                let respond = respond.clone();
                thread::spawn(move || serve(stream, &s, respond.as_ref(), delay));
            }
        });
        Stub { base_url, shared }
    }

    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.shared.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn bodies(&self) -> Vec<Value> {
        self.shared.bodies.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, s: &Shared, respond: &dyn Fn(&Value) -> Reply, delay: Duration) {
    let mut writer = stream.try_clone().unwrap();
    let mut reader = BufReader::new(stream);
    loop {
        let mut content_length = 0usize;
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        loop {
            line.clear();
            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                return;
            }
            let l = line.trim_end();
            if l.is_empty() {
                break;
            }
            if let Some((k, v)) = l.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    content_length = v.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; content_length];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);

        s.requests.fetch_add(1, Ordering::SeqCst);
        let now = s.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        s.max_in_flight.fetch_max(now, Ordering::SeqCst);
        thread::sleep(delay);
        let scripted = s.script.lock().unwrap().pop_front();
        let reply = scripted.unwrap_or_else(|| respond(&request));
        s.bodies.lock().unwrap().push(request);
        // Leave before answering so the client cannot start its next
        // request while this one still counts.
        s.in_flight.fetch_sub(1, Ordering::SeqCst);

        let payload = if reply.status == 200 {
            json!({
                "choices": [{"message": {"role": "assistant", "content": reply.content}}],
                "usage": {"prompt_tokens": 1, "completion_tokens": 1}
            })
            .to_string()
        } else {
            json!({"error": {"message": "scripted failure"}}).to_string()
        };
        let head = format!(
            "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n",
            reply.status,
            payload.len()
        );
        if writer.write_all(head.as_bytes()).is_err() || writer.write_all(payload.as_bytes()).is_err() {
            return;
        }
    }
}
