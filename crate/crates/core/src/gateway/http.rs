use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use base64::Engine;
use serde_json::{json, Value};

use super::{request_hash, BackendConfig, CompletionBackend, Exchange, GatewayError, ReplayStore};
use crate::prompt::PromptRequest;

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Slots { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|p| p.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Live chat-completions client. Successful exchanges are written to the
/// configured store so the run can be replayed offline.
pub struct HttpBackend {
    config: BackendConfig,
    endpoint: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
    slots: Slots,
    store: Option<ReplayStore>,
}

enum Attempt {
    Done(String),
    Retry(GatewayError),
    Fatal(GatewayError),
}

fn mime_for(filename: &str) -> &'static str {
    match filename.rsplit('.').next().map(str::to_ascii_lowercase).as_deref() {
        Some("pdf") => "application/pdf",
        Some("md") => "text/markdown",
        Some("html" | "htm") => "text/html",
        _ => "text/plain",
    }
}

/// Provider request body: one user message, with the attachment (if any)
/// as a base64 file part.
pub(crate) fn request_body(config: &BackendConfig, request: &PromptRequest) -> Value {
    let content = match &request.attachment {
        None => Value::String(request.rendered_text.clone()),
        Some(att) => {
            let data = base64::engine::general_purpose::STANDARD.encode(&att.bytes);
            json!([
                {"type": "file", "file": {
                    "filename": att.filename,
                    "file_data": format!("data:{};base64,{data}", mime_for(&att.filename)),
                }},
                {"type": "text", "text": request.rendered_text},
            ])
        }
    };
    let mut body = json!({
        "model": config.model,
        "messages": [{"role": "user", "content": content}],
    });
    if let Some(t) = config.temperature {
        body["temperature"] = json!(t);
    }
    body
}

/// Pulls the assistant text out of a chat-completions response.
pub(crate) fn response_text(body: &Value) -> Result<String, GatewayError> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| GatewayError::Protocol("no choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect()),
        Value::Null => Ok(String::new()),
        other => Err(GatewayError::Protocol(format!("unexpected content {other}"))),
    }
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let endpoint = config.endpoint.clone().expect("validated");
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        if token.is_none() {
            log::warn!("{} is not set; sending requests without authorization", config.token_env);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let store = config.store.as_deref().map(ReplayStore::open).transpose()?;
        Ok(HttpBackend { slots: Slots::new(config.max_concurrency), config, endpoint, token, client, store })
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let _slot = self.slots.acquire();
        let mut req = self
            .client
            .post(&self.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(GatewayError::Timeout(self.config.timeout())),
            Err(e) if e.is_connect() => return Attempt::Retry(GatewayError::Transport(e.to_string())),
            Err(e) => return Attempt::Fatal(GatewayError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.bytes() {
            Ok(b) => String::from_utf8_lossy(&b).into_owned(),
            Err(e) if e.is_timeout() => return Attempt::Retry(GatewayError::Timeout(self.config.timeout())),
            Err(e) => return Attempt::Retry(GatewayError::Transport(e.to_string())),
        };
        match status {
            200..=299 => match serde_json::from_str::<Value>(&text) {
                Ok(v) => match response_text(&v) {
                    Ok(s) => Attempt::Done(s),
                    Err(e) => Attempt::Fatal(e),
                },
                Err(e) => Attempt::Fatal(GatewayError::Protocol(e.to_string())),
            },
            401 | 403 => Attempt::Fatal(GatewayError::AuthFailure(status)),
            429 => Attempt::Retry(GatewayError::RateLimited { attempts: 0 }),
            500..=599 => Attempt::Retry(GatewayError::Http { status, body: text }),
            _ => Attempt::Fatal(GatewayError::Http { status, body: text }),
        }
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &PromptRequest, sample_index: usize) -> Result<String, GatewayError> {
        let hash = request_hash(&self.config.model, request, sample_index);
        let body = request_body(&self.config, request);
        let started = Instant::now();
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempts = 0;
        let text = loop {
            attempts += 1;
            match self.attempt(&body) {
                Attempt::Done(text) => break text,
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) if attempts > self.config.max_retries => {
                    return Err(match e {
                        GatewayError::RateLimited { .. } => GatewayError::RateLimited { attempts },
                        other => other,
                    })
                }
                Attempt::Retry(e) => {
                    log::warn!("{} sample {sample_index}: {e}; retrying in {delay:?}", request.note_id);
                    thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                }
            }
        };
        if let Some(store) = &self.store {
            let exchange = Exchange {
                hash,
                model: self.config.model.clone(),
                note_id: request.note_id.clone(),
                sdoh: request.sdoh.map(|s| s.as_str().to_string()),
                sample_index,
                response: text.clone(),
                latency_ms: started.elapsed().as_millis() as u64,
                timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            };
            store.record_run(std::slice::from_ref(&exchange))?;
        }
        Ok(text)
    }

    fn model(&self) -> &str {
        &self.config.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ReplayBackend;
    use crate::prompt::{Attachment, PromptMode};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Minimal HTTP/1.1 server: `script(n)` gives the status and body for
    /// the n-th request. Tracks the peak number of concurrent requests.
    struct FakeServer {
        url: String,
        peak: Arc<AtomicUsize>,
        hits: Arc<AtomicUsize>,
        bodies: Arc<Mutex<Vec<String>>>,
    }

    fn read_request(stream: &mut TcpStream) -> (String, String) {
        let mut reader = BufReader::new(stream);
        let mut head = String::new();
        let mut len = 0;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap_or(0);
            }
            head.push_str(&line);
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        (head, String::from_utf8(body).unwrap())
    }

    fn serve(script: impl Fn(usize) -> (u16, String) + Send + Sync + 'static, delay: Duration) -> FakeServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let peak = Arc::new(AtomicUsize::new(0));
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let live = Arc::new(AtomicUsize::new(0));
        let script = Arc::new(script);
        let (p, h, b) = (peak.clone(), hits.clone(), bodies.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let (p, h, b, live, script) = (p.clone(), h.clone(), b.clone(), live.clone(), script.clone());
                thread::spawn(move || {
                    let (head, body) = read_request(&mut stream);
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    p.fetch_max(now, Ordering::SeqCst);
                    let n = h.fetch_add(1, Ordering::SeqCst);
                    b.lock().unwrap().push(format!("{head}\n{body}"));
                    thread::sleep(delay);
                    let (status, payload) = script(n);
                    live.fetch_sub(1, Ordering::SeqCst);
                    let resp = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                        payload.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                });
            }
        });
        FakeServer { url, peak, hits, bodies }
    }

    fn ok_body(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn config(url: &str) -> BackendConfig {
        let mut c = BackendConfig::http("test-model", url);
        c.allow_external_transmission = true;
        c.backoff_ms = 5;
        c.max_retries = 3;
        c.token_env = "SDOH_TEST_TOKEN_UNSET".into();
        c
    }

    fn req(i: usize) -> PromptRequest {
        PromptRequest {
            rendered_text: format!("prompt {i}"),
            mode: PromptMode::AllAtOnce,
            sdoh: None,
            note_id: format!("n{i}"),
            attachment: None,
        }
    }

    #[test]
    fn concurrency_bound_holds() {
        let server = serve(|_| (200, ok_body("[]")), Duration::from_millis(40));
        let mut c = config(&server.url);
        c.max_concurrency = 2;
        let backend = Arc::new(HttpBackend::new(c).unwrap());
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let b = backend.clone();
                thread::spawn(move || b.complete(&req(i), 0).unwrap())
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), "[]");
        }
        assert_eq!(server.hits.load(Ordering::SeqCst), 8);
        let peak = server.peak.load(Ordering::SeqCst);
        assert!((1..=2).contains(&peak), "peak {peak}");
    }

    #[test]
    fn retries_then_records_once() {
        let server = serve(
            |n| if n < 2 { (429, "{}".into()) } else { (200, ok_body("[{\"sdoh\": \"Drug\"}]")) },
            Duration::ZERO,
        );
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(&server.url);
        c.store = Some(dir.path().to_path_buf());
        let backend = HttpBackend::new(c).unwrap();
        let text = backend.complete(&req(0), 0).unwrap();
        assert_eq!(server.hits.load(Ordering::SeqCst), 3);
        let store = ReplayStore::open(dir.path()).unwrap();
        assert_eq!(store.len(), 1);
        let replay = ReplayBackend::new(store, "test-model");
        assert_eq!(replay.complete(&req(0), 0).unwrap(), text);
    }

    #[test]
    fn rate_limit_exhausts_retries() {
        let server = serve(|_| (429, "{}".into()), Duration::ZERO);
        let backend = HttpBackend::new(config(&server.url)).unwrap();
        match backend.complete(&req(0), 0) {
            Err(GatewayError::RateLimited { attempts }) => assert_eq!(attempts, 4),
            other => panic!("{other:?}"),
        }
        assert_eq!(server.hits.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let server = serve(|_| (401, "{\"error\": \"bad key\"}".into()), Duration::ZERO);
        let backend = HttpBackend::new(config(&server.url)).unwrap();
        assert!(matches!(backend.complete(&req(0), 0), Err(GatewayError::AuthFailure(401))));
        assert_eq!(server.hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn timeout_is_reported() {
        let server = serve(|_| (200, ok_body("late")), Duration::from_millis(400));
        let mut c = config(&server.url);
        c.timeout_secs = 0.1;
        c.max_retries = 0;
        let backend = HttpBackend::new(c).unwrap();
        assert!(matches!(backend.complete(&req(0), 0), Err(GatewayError::Timeout(_))));
    }

    #[test]
    fn body_carries_model_attachment_and_temperature() {
        let server = serve(|_| (200, ok_body("ok")), Duration::ZERO);
        let mut c = config(&server.url);
        c.temperature = Some(0.7);
        let backend = HttpBackend::new(c).unwrap();
        let mut r = req(0);
        r.attachment = Some(Attachment { filename: "guide.pdf".into(), bytes: b"%PDF".to_vec() });
        backend.complete(&r, 0).unwrap();
        let seen = server.bodies.lock().unwrap()[0].clone();
        let body: Value = serde_json::from_str(seen.split_once("\n{").map(|(_, b)| b).map(|b| format!("{{{b}")).unwrap().as_str()).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["messages"][0]["content"][0]["file"]["file_data"], "data:application/pdf;base64,JVBERg==");
        assert_eq!(body["messages"][0]["content"][1]["text"], "prompt 0");
    }

    #[test]
    fn content_parts_are_joined() {
        let v = json!({"choices": [{"message": {"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]}}]});
        assert_eq!(response_text(&v).unwrap(), "ab");
        assert!(response_text(&json!({})).is_err());
    }
}
