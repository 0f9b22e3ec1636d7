//! Loopback completions server used by tests and examples.
//!
//! Serves `POST /v1/completions` with a fixed completion text and a declared
//! token usage. A queue of forced status codes is consumed first, which is
//! how retry behaviour is exercised.

use std::collections::VecDeque;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct StubConfig {
    pub text: String,
    /// Reported `completion_tokens`, capped at the request's `max_tokens`.
    /// Defaults to the word count of `text`.
    pub declared_usage: Option<usize>,
    /// Status codes returned, in order, before normal service.
    pub forced_statuses: Vec<u16>,
    pub delay: Duration,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            text: "move the arm left".into(),
            declared_usage: None,
            forced_statuses: Vec::new(),
            delay: Duration::ZERO,
        }
    }
}

#[derive(Debug, Default)]
struct Shared {
    forced: Mutex<VecDeque<u16>>,
    bodies: Mutex<Vec<serde_json::Value>>,
    served: AtomicUsize,
    usage_total: AtomicUsize,
    stop: AtomicBool,
}

pub struct StubServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(config: StubConfig) -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            forced: Mutex::new(config.forced_statuses.iter().copied().collect()),
            ..Shared::default()
        });
        let config = Arc::new(config);
        let accept_shared = Arc::clone(&shared);
        let accept = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_shared.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let shared = Arc::clone(&accept_shared);
                let config = Arc::clone(&config);
                std::thread::spawn(move || {
                    let _ = serve(stream, &shared, &config);
                });
            }
        });
        Ok(Self {
            addr,
            shared,
            accept: Some(accept),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests answered so far, including forced failures.
    pub fn requests_served(&self) -> usize {
        self.shared.served.load(Ordering::SeqCst)
    }

    /// Sum of `completion_tokens` over successful responses.
    pub fn usage_total(&self) -> usize {
        self.shared.usage_total.load(Ordering::SeqCst)
    }

    pub fn request_bodies(&self) -> Vec<serde_json::Value> {
        self.shared.bodies.lock().expect("stub poisoned").clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, shared: &Shared, config: &StubConfig) -> io::Result<()> {
    if shared.stop.load(Ordering::SeqCst) {
        return Ok(());
    }
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    if !config.delay.is_zero() {
        std::thread::sleep(config.delay);
    }

    let parsed: serde_json::Value = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
    shared.bodies.lock().expect("stub poisoned").push(parsed.clone());

    let path_ok = request_line.starts_with("POST /v1/completions");
    let forced = shared.forced.lock().expect("stub poisoned").pop_front();
    let (status, payload) = match (path_ok, forced) {
        (false, _) => (404, r#"{"error":"not found"}"#.to_owned()),
        (true, Some(code)) => (code, format!(r#"{{"error":"forced {code}"}}"#)),
        (true, None) => {
            let max_tokens = parsed.get("max_tokens").and_then(serde_json::Value::as_u64).unwrap_or(0) as usize;
            let declared = config
                .declared_usage
                .unwrap_or_else(|| config.text.split_whitespace().count());
            let usage = declared.min(max_tokens);
            shared.usage_total.fetch_add(usage, Ordering::SeqCst);
            let body = serde_json::json!({
                "object": "text_completion",
                "choices": [{"index": 0, "text": config.text, "finish_reason": "stop"}],
                "usage": {"completion_tokens": usage},
            });
            (200, body.to_string())
        }
    };
    shared.served.fetch_add(1, Ordering::SeqCst);

    let reason = match status {
        200 => "OK",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    out.flush()
}
