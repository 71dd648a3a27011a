use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::Deserialize;

use super::{BackendSpec, Completer, Completion, Usage};
use crate::chunker::Tokenizer;
use crate::error::{Error, Result};
use crate::prompting::Prompt;

pub const API_KEY_ENV: &str = "LAYIE_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Endpoint root; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub api_key: String,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub timeout: Duration,
    /// Simultaneous requests allowed.
    pub max_in_flight: usize,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            api_key: api_key.into(),
            max_retries: 5,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
            timeout: Duration::from_secs(120),
            max_in_flight: 4,
        }
    }

    /// Base URL from the spec (default the public OpenAI endpoint), key from the environment.
    pub fn from_env(spec: &BackendSpec) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| Error::usage(format!("http backend needs an API key in {API_KEY_ENV}")))?;
        let base = spec.base_url.clone().unwrap_or_else(|| "https://api.openai.com/v1".to_string());
        Ok(HttpConfig::new(base, key))
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore") += 1;
        self.0.cv.notify_one();
    }
}

/// OpenAI-compatible chat-completions client.
pub struct HttpBackend {
    spec: BackendSpec,
    config: HttpConfig,
    client: reqwest::blocking::Client,
    permits: Semaphore,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
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

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Done(Completion),
    Retry(String),
}

impl HttpBackend {
    pub fn new(spec: BackendSpec, config: HttpConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::backend(None, format!("building http client: {e}")))?;
        let permits = Semaphore::new(config.max_in_flight);
        Ok(HttpBackend {
            spec,
            config,
            client,
            permits,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, prompt: &Prompt, body: &serde_json::Value) -> Result<Attempt> {
        let _permit = self.permits.acquire();
        let response = match self.client.post(self.url()).bearer_auth(&self.config.api_key).json(body).send() {
            Ok(r) => r,
            Err(e) if e.is_connect() || e.is_timeout() => return Ok(Attempt::Retry(e.to_string())),
            Err(e) => return Err(Error::backend(None, e.to_string())),
        };
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Ok(Attempt::Retry(format!("status {status}")));
        }
        let text = response.text().map_err(|e| Error::backend(Some(status.as_u16()), e.to_string()))?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(Error::backend(Some(status.as_u16()), snippet));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| Error::backend(Some(status.as_u16()), format!("malformed response: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::backend(Some(status.as_u16()), "response has no message content"))?;
        let usage = match parsed.usage {
            Some(u) => Usage {
                input_tokens: u.prompt_tokens,
                output_tokens: u.completion_tokens,
            },
            None => Usage {
                input_tokens: Tokenizer::default().cost(&prompt.text) as u64,
                output_tokens: Tokenizer::default().cost(&content) as u64,
            },
        };
        Ok(Attempt::Done(Completion {
            prompt_digest: String::new(),
            model_name: self.spec.model_name.clone(),
            text: content,
            usage,
            from_cache: false,
        }))
    }
}

impl Completer for HttpBackend {
    fn complete(&self, prompt: &Prompt) -> Result<Completion> {
        let body = serde_json::json!({
            "model": self.spec.model_name,
            "messages": [{"role": "user", "content": prompt.text}],
            "temperature": self.spec.sampling.temperature,
            "max_tokens": self.spec.sampling.max_output_tokens,
        });
        let mut delay = self.config.initial_backoff;
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                log::warn!("retrying {} chunk {} after {last} (attempt {attempt})", prompt.doc_id, prompt.chunk_index);
                thread::sleep(delay);
                delay = (delay * 2).min(self.config.max_backoff);
            }
            match self.attempt(prompt, &body)? {
                Attempt::Done(c) => return Ok(c),
                Attempt::Retry(reason) => last = reason,
            }
        }
        Err(Error::backend(None, format!("gave up after {} retries: {last}", self.config.max_retries)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::{PromptPurpose, PromptStrategy};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves the given (status, body) pairs in order, one per connection.
    fn mock_server(replies: Vec<(u16, &'static str)>) -> (String, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let handle = thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn backend(url: &str) -> HttpBackend {
        let mut cfg = HttpConfig::new(url, "test-key");
        cfg.initial_backoff = Duration::from_millis(1);
        cfg.max_retries = 2;
        let spec = BackendSpec {
            model_name: "gpt-3.5-turbo".into(),
            ..BackendSpec::default()
        };
        HttpBackend::new(spec, cfg).unwrap()
    }

    fn prompt() -> Prompt {
        Prompt {
            doc_id: "d".into(),
            chunk_index: 0,
            purpose: PromptPurpose::Extraction,
            text: "extract".into(),
            strategy: PromptStrategy::default(),
            schema_digest: String::new(),
        }
    }

    const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"{\"a\":\"1\"}"}}],"usage":{"prompt_tokens":7,"completion_tokens":3}}"#;

    #[test]
    fn retries_transient_then_succeeds() {
        let (url, server) = mock_server(vec![(429, "{}"), (503, "{}"), (200, OK)]);
        let c = backend(&url).complete(&prompt()).unwrap();
        assert_eq!(c.text, r#"{"a":"1"}"#);
        assert_eq!(c.usage, Usage { input_tokens: 7, output_tokens: 3 });
        let bodies = server.join().unwrap();
        assert_eq!(bodies.len(), 3);
        let sent: serde_json::Value = serde_json::from_str(&bodies[2]).unwrap();
        assert_eq!(sent["model"], "gpt-3.5-turbo");
        assert_eq!(sent["messages"][0]["content"], "extract");
        assert_eq!(sent["max_tokens"], 1024);
    }

    #[test]
    fn client_error_carries_status() {
        let (url, server) = mock_server(vec![(401, r#"{"error":"bad key"}"#)]);
        match backend(&url).complete(&prompt()) {
            Err(Error::Backend { status, .. }) => assert_eq!(status, Some(401)),
            other => panic!("expected backend error, got {other:?}"),
        }
        server.join().unwrap();
    }

    #[test]
    fn exhausted_retries_fail() {
        let (url, server) = mock_server(vec![(500, "{}"), (500, "{}"), (500, "{}")]);
        assert!(matches!(backend(&url).complete(&prompt()), Err(Error::Backend { .. })));
        server.join().unwrap();
    }
}
