//! Blocking client for an OpenAI-compatible chat-completions endpoint.

use std::io;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde_json::{json, Value};

use super::config::GatewayConfig;
use super::payload::FeedbackPayload;
use super::report::{validate_parts, FeedbackReport, ReportSource};
use super::GatewayError;

pub const SYSTEM_PROMPT: &str = "You give short, kind feedback after a calligraphy writing session used for mindfulness practice. \
The user message is a JSON summary of the session: device models, per-channel metrics (brush pressure, breath and movement sound, heart rate, respiratory rate), \
a calming verdict and how recent sessions trended. \
Reply with only a JSON object of the form {\"prompt_words\":[\"...\"],\"narrative\":\"...\"} \
holding 1 to 5 emotional prompt words of at most 32 characters each and a narrative of at most 600 characters.";

/// Safe to share between threads; each call is independent.
#[derive(Debug, Clone)]
pub struct GatewayClient {
    config: GatewayConfig,
    agent: ureq::Agent,
}

impl GatewayClient {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Ok(GatewayClient { config, agent })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// One request plus up to `max_retries` retries on transport failures,
    /// timeouts, 429 and 5xx, with exponential backoff between attempts.
    /// Attempts and backoff together never exceed
    /// `(1 + max_retries) * timeout_ms`.
    pub fn request_feedback(&self, payload: &FeedbackPayload) -> Result<FeedbackReport, GatewayError> {
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": payload.to_json()},
            ],
        });
        let key = self.config.api_key();
        if key.is_none() {
            debug!("{} is not set; sending the request without credentials", self.config.api_key_env);
        }
        let budget = Duration::from_millis(self.config.timeout_ms * (1 + u64::from(self.config.max_retries)));
        // socket timeouts fire a little late; keep that inside the budget
        let slack = (budget / 50).min(Duration::from_millis(100));
        let deadline = Instant::now() + budget - slack;
        let mut attempt = 0;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match self.attempt(&body, key.as_deref(), remaining) {
                Ok(text) => {
                    let (prompt_words, narrative) = parse_reply(&text)?;
                    return Ok(FeedbackReport {
                        session_id: payload.session_id.clone(),
                        prompt_words,
                        narrative,
                        source: ReportSource::Llm,
                        verdict: payload.verdict.verdict,
                    });
                }
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    attempt += 1;
                    let wait = Duration::from_millis(self.config.backoff_ms(attempt));
                    let remaining = deadline.saturating_duration_since(Instant::now());
                    // a retry needs time left after the backoff
                    if wait >= remaining {
                        warn!("gateway attempt {attempt} failed ({e}); no time left to retry");
                        return Err(e);
                    }
                    warn!("gateway attempt {attempt} failed ({e}); retrying in {} ms", wait.as_millis());
                    thread::sleep(wait);
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn attempt(&self, body: &Value, key: Option<&str>, budget: Duration) -> Result<String, GatewayError> {
        let timeout = budget.min(Duration::from_millis(self.config.timeout_ms));
        let mut req = self
            .agent
            .post(self.config.completions_url())
            .config()
            .timeout_global(Some(timeout))
            .build()
            .header("Content-Type", "application/json");
        if let Some(k) = key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let mut resp = req.send(body.to_string()).map_err(transport_error)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(GatewayError::BadStatus(status));
        }
        let text = resp.body_mut().read_to_string().map_err(transport_error)?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| GatewayError::UnparseableReply(format!("response is not JSON: {e}")))?;
        doc.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| GatewayError::UnparseableReply("no choices[0].message.content".into()))
    }
}

fn transport_error(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Timeout(_) => GatewayError::GatewayTimeout,
        ureq::Error::Io(io) if matches!(io.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) => GatewayError::GatewayTimeout,
        ureq::Error::Protocol(p) => GatewayError::UnparseableReply(format!("HTTP protocol error: {p}")),
        other => GatewayError::GatewayUnreachable(other.to_string()),
    }
}

/// Pull `prompt_words` and `narrative` out of free text that contains a JSON
/// object somewhere.
pub fn parse_reply(text: &str) -> Result<(Vec<String>, String), GatewayError> {
    let obj = extract_json_object(text).ok_or_else(|| GatewayError::UnparseableReply("no JSON object in reply".into()))?;
    let words = obj
        .get("prompt_words")
        .and_then(Value::as_array)
        .ok_or_else(|| GatewayError::UnparseableReply("missing prompt_words".into()))?
        .iter()
        .map(|w| w.as_str().map(|s| s.trim().to_string()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| GatewayError::UnparseableReply("prompt_words must be strings".into()))?;
    let narrative = obj
        .get("narrative")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::UnparseableReply("missing narrative".into()))?
        .trim()
        .to_string();
    validate_parts(&words, &narrative).map_err(|e| GatewayError::UnparseableReply(e.to_string()))?;
    Ok((words, narrative))
}

/// First balanced `{...}` span that parses as a JSON object. Braces inside
/// string literals are skipped.
pub fn extract_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(off) = text[from..].find('{') {
        let start = from + off;
        if let Some(end) = balanced_end(&bytes[start..]) {
            if let Ok(Value::Object(obj)) = serde_json::from_str(&text[start..start + end]) {
                return Some(obj);
            }
        }
        from = start + 1;
    }
    None
}

fn balanced_end(b: &[u8]) -> Option<usize> {
    let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
    for (i, &c) in b.iter().enumerate() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}
