use serde::{Deserialize, Serialize};

use super::GatewayError;

pub const DEFAULT_API_KEY_ENV: &str = "EMOTIONCARRIER_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    /// Base URL; requests go to `{endpoint}/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Name of the environment variable holding the bearer token. The token
    /// itself never lives in config files.
    pub api_key_env: String,
    pub backoff_base_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            endpoint: "http://127.0.0.1:8000".into(),
            model: "gpt-4o-mini".into(),
            timeout_ms: 15_000,
            max_retries: 2,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            backoff_base_ms: 250,
        }
    }
}

impl GatewayConfig {
    pub fn with_endpoint(endpoint: impl Into<String>) -> Self {
        GatewayConfig { endpoint: endpoint.into(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidConfig(m.to_string()));
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return bad("endpoint must be an http:// or https:// URL");
        }
        if self.model.trim().is_empty() {
            return bad("model must not be empty");
        }
        if self.timeout_ms == 0 {
            return bad("timeout_ms must be > 0");
        }
        if self.api_key_env.is_empty() {
            return bad("api_key_env must not be empty");
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/v1/chat/completions", self.endpoint.trim_end_matches('/'))
    }

    /// Delay before retry `attempt` (1-based): base, 2*base, 4*base, ...
    pub fn backoff_ms(&self, attempt: u32) -> u64 {
        self.backoff_base_ms.saturating_mul(1u64 << (attempt.saturating_sub(1)).min(20))
    }

    pub fn api_key(&self) -> Option<String> {
        std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_json() {
        let c: GatewayConfig = serde_json::from_str(r#"{"endpoint":"http://localhost:9"}"#).unwrap();
        assert_eq!(c.timeout_ms, 15_000);
        assert_eq!(c.max_retries, 2);
        assert_eq!(c.api_key_env, "EMOTIONCARRIER_API_KEY");
        c.validate().unwrap();
        assert_eq!(c.completions_url(), "http://localhost:9/v1/chat/completions");
    }

    #[test]
    fn rejects_bad_values() {
        assert!(GatewayConfig { timeout_ms: 0, ..Default::default() }.validate().is_err());
        assert!(GatewayConfig::with_endpoint("ftp://x").validate().is_err());
    }

    #[test]
    fn backoff_doubles() {
        let c = GatewayConfig::default();
        assert_eq!([c.backoff_ms(1), c.backoff_ms(2), c.backoff_ms(3)], [250, 500, 1000]);
    }
}
