//! Generator backends.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            max_tokens: 1024,
            temperature: 0.0,
        }
    }
}

/// A text-completion backend. Implementations must be usable from several
/// worker threads at once.
pub trait GeneratorClient: Send + Sync {
    fn complete(&self, prompt: &str, params: &GenParams) -> Result<String>;
    fn name(&self) -> &str;
}

/// Offline backend whose output is a pure function of the prompt.
///
/// Recognises the `### stage:` header of the built-in templates: `describe`
/// lists the image document's lines as facts, `reason` writes one
/// `Step N:` line per fact, and `anchor` returns the chain with an anchor
/// sentence before every third step.
#[derive(Debug, Clone, Default)]
pub struct MockClient {
    fail_on: Option<String>,
    omit_anchors: bool,
}

impl MockClient {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fails every prompt that contains `needle`.
    pub fn failing_on(mut self, needle: impl Into<String>) -> Self {
        self.fail_on = Some(needle.into());
        self
    }

    /// Answers the anchor stage with the chain unchanged.
    pub fn without_anchors(mut self) -> Self {
        self.omit_anchors = true;
        self
    }
}

fn between<'a>(text: &'a str, open: &str, close: &str) -> &'a str {
    let Some(start) = text.find(open).map(|i| i + open.len()) else {
        return "";
    };
    let end = text[start..].find(close).map_or(text.len(), |i| start + i);
    text[start..end].trim()
}

fn tagged<'a>(text: &'a str, tag: &str) -> &'a str {
    between(text, &format!("<{tag}>"), &format!("</{tag}>"))
}

impl GeneratorClient for MockClient {
    fn complete(&self, prompt: &str, _params: &GenParams) -> Result<String> {
        if let Some(needle) = &self.fail_on {
            if prompt.contains(needle.as_str()) {
                return Err(Error::Backend {
                    backend: self.name().into(),
                    attempts: 1,
                    message: format!("refused prompt containing {needle:?}"),
                });
            }
        }
        let stage = prompt
            .lines()
            .find_map(|l| l.trim().strip_prefix("### stage:"))
            .map(str::trim)
            .unwrap_or("");
        let out = match stage {
            "describe" => tagged(prompt, "image")
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(|l| format!("- {l}"))
                .collect::<Vec<_>>()
                .join("\n"),
            "reason" => {
                let facts: Vec<&str> = tagged(prompt, "description")
                    .lines()
                    .map(|l| l.trim().trim_start_matches("- ").trim())
                    .filter(|l| !l.is_empty())
                    .collect();
                let question = tagged(prompt, "question");
                let mut lines: Vec<String> = facts
                    .iter()
                    .enumerate()
                    .map(|(i, f)| format!("Step {}: The image shows {}.", i + 1, f.trim_end_matches('.')))
                    .collect();
                let last = facts.last().copied().unwrap_or("no information");
                lines.push(format!(
                    "Step {}: Checking each step for errors, the question \"{}\" is settled by the last fact.",
                    facts.len() + 1,
                    question
                ));
                lines.push(format!("Answer: {}", last.trim_end_matches('.')));
                lines.join("\n")
            }
            "anchor" => {
                let chain = tagged(prompt, "reasoning");
                if self.omit_anchors {
                    chain.to_string()
                } else {
                    crate::anchor::insert_anchors(chain, 3)?
                }
            }
            _ => String::new(),
        };
        Ok(out)
    }

    fn name(&self) -> &str {
        "mock"
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// JSON-over-HTTP backend.
///
/// Sends `POST {endpoint}` with `{"prompt", "max_tokens", "temperature"}` and
/// expects `{"text": ...}` back. Connection errors, 429 and 5xx responses are
/// retried with doubling backoff; other statuses fail immediately.
#[derive(Debug)]
pub struct HttpClient {
    endpoint: String,
    api_key: Option<String>,
    max_attempts: u32,
    backoff: Duration,
    http: reqwest::blocking::Client,
}

pub const API_KEY_VAR: &str = "AVAR_API_KEY";

impl HttpClient {
    pub fn new(endpoint: impl Into<String>) -> Result<Self> {
        let endpoint = endpoint.into();
        if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
            return Err(Error::InvalidConfig(format!("endpoint {endpoint:?} is not an http(s) URL")));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(HttpClient {
            endpoint,
            api_key: None,
            max_attempts: 3,
            backoff: Duration::from_millis(500),
            http,
        })
    }

    /// Reads the bearer token from `AVAR_API_KEY` when set.
    pub fn from_env(endpoint: impl Into<String>) -> Result<Self> {
        let mut c = Self::new(endpoint)?;
        c.api_key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
        Ok(c)
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn with_retries(mut self, max_attempts: u32, backoff: Duration) -> Result<Self> {
        if max_attempts == 0 {
            return Err(Error::InvalidConfig("max_attempts must be >= 1".into()));
        }
        self.max_attempts = max_attempts;
        self.backoff = backoff;
        Ok(self)
    }

    fn fail(&self, attempts: u32, message: String) -> Error {
        Error::Backend {
            backend: self.endpoint.clone(),
            attempts,
            message,
        }
    }
}

impl GeneratorClient for HttpClient {
    fn complete(&self, prompt: &str, params: &GenParams) -> Result<String> {
        let body = CompletionRequest {
            prompt,
            max_tokens: params.max_tokens,
            temperature: params.temperature,
        };
        let mut last = String::new();
        for attempt in 1..=self.max_attempts {
            if attempt > 1 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 2));
            }
            let mut req = self.http.post(&self.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let parsed: CompletionResponse =
                            resp.json().map_err(|e| self.fail(attempt, format!("bad response body: {e}")))?;
                        return Ok(parsed.text);
                    }
                    last = format!("HTTP {status}");
                    if !(status.is_server_error() || status.as_u16() == 429) {
                        return Err(self.fail(attempt, last));
                    }
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(self.fail(self.max_attempts, last))
    }

    fn name(&self) -> &str {
        &self.endpoint
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_stages() {
        let m = MockClient::new();
        let p = GenParams::default();
        let d = m
            .complete("### stage: describe\n<image>\na red square\nlabel A\n</image>", &p)
            .unwrap();
        assert_eq!(d, "- a red square\n- label A");
        let r = m
            .complete(
                "### stage: reason\n<description>\n- x\n- y\n</description>\n<question>q?</question>",
                &p,
            )
            .unwrap();
        assert!(r.starts_with("Step 1: The image shows x."));
        assert!(r.ends_with("Answer: y"));
        assert_eq!(m.complete("nothing", &p).unwrap(), "");
    }

    #[test]
    fn mock_failure_and_bad_endpoint() {
        let m = MockClient::new().failing_on("boom");
        assert!(m.complete("a boom b", &GenParams::default()).unwrap_err().is_backend());
        assert!(HttpClient::new("ftp://x").is_err());
    }
}
