//! Chat-completion backend for live models.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompts::PromptTemplate;
use super::{ExpertBackend, ExpertError, ExpertRequest, Role};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "REMCDF_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpSettings {
    /// Endpoint root; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
    /// Upper bound on requests in flight across all threads.
    pub max_in_flight: usize,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            timeout_secs: 120,
            max_in_flight: 4,
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    ready: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            ready: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
        while *free == 0 {
            free = self.ready.wait(free).unwrap_or_else(|p| p.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.ready.notify_one();
    }
}

pub struct HttpBackend {
    settings: HttpSettings,
    api_key: Option<String>,
    agent: ureq::Agent,
    templates: Vec<(Role, PromptTemplate)>,
    gate: Semaphore,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

fn transport(message: String, retryable: bool) -> ExpertError {
    ExpertError::Transport { message, retryable }
}

impl HttpBackend {
    /// Reads the API key from [`API_KEY_ENV`]; a missing key is allowed for
    /// local endpoints that need none.
    pub fn new(settings: HttpSettings) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        if key.is_none() {
            log::warn!("{API_KEY_ENV} is not set; sending requests without authorization");
        }
        Self::with_api_key(settings, key)
    }

    pub fn with_api_key(settings: HttpSettings, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            gate: Semaphore::new(settings.max_in_flight),
            templates: Role::ALL.into_iter().map(|r| (r, PromptTemplate::builtin(r))).collect(),
            settings,
            api_key,
            agent,
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.settings.base_url.trim_end_matches('/'))
    }

    /// The JSON body posted for `request`.
    pub fn request_body(&self, request: &ExpertRequest, repair_hint: Option<&str>) -> Value {
        let template = &self
            .templates
            .iter()
            .find(|(r, _)| *r == request.role)
            .expect("template for every role")
            .1;
        let (system, user) = template.render(request);
        let mut messages = vec![json!({"role": "system", "content": system}), json!({"role": "user", "content": user})];
        if let Some(hint) = repair_hint {
            messages.push(json!({"role": "user", "content": hint}));
        }
        json!({
            "model": self.settings.model,
            "temperature": 0,
            "messages": messages,
            "response_format": {"type": "json_object"},
        })
    }
}

impl ExpertBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &ExpertRequest, repair_hint: Option<&str>) -> Result<String, ExpertError> {
        let body = self.request_body(request, repair_hint);
        let _permit = self.gate.acquire();
        let mut call = self.agent.post(&self.endpoint()).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(&body).map_err(|e| {
            let retryable = matches!(e, ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed);
            transport(e.to_string(), retryable)
        })?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let detail = response.body_mut().read_to_string().unwrap_or_default();
            let retryable = status == 429 || status >= 500;
            return Err(transport(format!("HTTP {status}: {}", detail.trim()), retryable));
        }
        let completion: Completion = response
            .body_mut()
            .read_json()
            .map_err(|e| transport(format!("unreadable completion: {e}"), false))?;
        completion
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ExpertError::Schema {
                role: request.role,
                message: "completion has no message content".into(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::{labels, ExpertGateway, ExpertResponse};
    use std::collections::BTreeMap;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;
    use std::thread;

    /// Serves canned `(status, body)` replies, one per connection, and
    /// returns the request bodies and headers it saw.
    fn serve(replies: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<(String, String)>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let handle = thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut headers = String::new();
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    headers.push_str(&line);
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push((headers, String::from_utf8(buf).unwrap()));
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (url, handle)
    }

    fn completion(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    fn settings(url: String) -> HttpSettings {
        HttpSettings {
            base_url: url,
            model: "test-model".into(),
            timeout_secs: 10,
            max_in_flight: 1,
        }
    }

    fn request() -> ExpertRequest {
        ExpertRequest::new(Role::SingleDisease)
            .block(labels::SUMMARY, "sudden headache")
            .block(labels::CANDIDATES, ["d1"])
    }

    #[test]
    fn posts_chat_completion_and_parses_reply() {
        let (url, server) = serve(vec![(200, completion(r#"{"scores": {"d1": 0.75}}"#))]);
        let backend = HttpBackend::with_api_key(settings(url), Some("secret".into()));
        let x = ExpertGateway::new(Arc::new(backend)).call(&request()).unwrap();
        assert_eq!(
            x.response,
            ExpertResponse::SingleDisease {
                scores: BTreeMap::from([("d1".into(), 0.75)])
            }
        );
        let seen = server.join().unwrap();
        let (headers, body) = &seen[0];
        assert!(headers.starts_with("POST /v1/chat/completions"));
        assert!(headers.to_ascii_lowercase().contains("authorization: bearer secret"));
        let body: Value = serde_json::from_str(body).unwrap();
        assert_eq!(body["temperature"], 0);
        assert_eq!(body["model"], "test-model");
        assert!(body["messages"][1]["content"].as_str().unwrap().contains("sudden headache"));
    }

    #[test]
    fn bad_payload_twice_is_fatal() {
        let (url, server) = serve(vec![(200, completion("I think d1.")), (200, completion("{\"scores\": []}"))]);
        let gw = ExpertGateway::new(Arc::new(HttpBackend::with_api_key(settings(url), None)));
        let err = gw.call(&request()).unwrap_err();
        assert!(matches!(err, ExpertError::Schema { .. }));
        let seen = server.join().unwrap();
        let second: Value = serde_json::from_str(&seen[1].1).unwrap();
        assert_eq!(second["messages"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn server_errors_are_retryable() {
        let (url, server) = serve(vec![(503, "{}".into()), (200, completion(r#"{"scores": {}}"#))]);
        let gw = ExpertGateway::new(Arc::new(HttpBackend::with_api_key(settings(url), None)));
        assert!(gw.call(&request()).is_ok());
        server.join().unwrap();

        let (url, server) = serve(vec![(400, "{\"error\": \"bad\"}".into())]);
        let backend = HttpBackend::with_api_key(settings(url), None);
        let err = backend.complete(&request(), None).unwrap_err();
        assert!(!err.is_retryable());
        assert!(err.to_string().contains("HTTP 400"));
        server.join().unwrap();
    }

    #[test]
    fn unreachable_endpoint_is_retryable() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let backend = HttpBackend::with_api_key(settings(format!("http://127.0.0.1:{port}")), None);
        assert!(backend.complete(&request(), None).unwrap_err().is_retryable());
    }

    #[test]
    fn semaphore_bounds_concurrency() {
        let sem = Arc::new(Semaphore::new(2));
        let active = Arc::new(Mutex::new((0usize, 0usize)));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (sem, active) = (sem.clone(), active.clone());
                thread::spawn(move || {
                    let _p = sem.acquire();
                    {
                        let mut a = active.lock().unwrap();
                        a.0 += 1;
                        a.1 = a.1.max(a.0);
                    }
                    thread::sleep(Duration::from_millis(5));
                    active.lock().unwrap().0 -= 1;
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(active.lock().unwrap().1 <= 2);
    }
}
