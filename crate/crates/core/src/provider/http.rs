use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ChatProvider, ChatRequest, ProviderError};

/// Connection settings for an OpenAI-compatible endpoint.
#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
}

impl HttpConfig {
    pub const BASE_URL_VAR: &'static str = "NORMLENS_CHAT_BASE_URL";
    pub const MODEL_VAR: &'static str = "NORMLENS_CHAT_MODEL";
    pub const DEFAULT_KEY_VAR: &'static str = "NORMLENS_CHAT_API_KEY";

    /// Reads base URL and model from the environment, and the credential
    /// from `key_var`. Returns `None` when no base URL is configured.
    pub fn from_env(key_var: &str) -> Option<Self> {
        let base_url = std::env::var(Self::BASE_URL_VAR).ok()?;
        Some(Self {
            base_url,
            api_key: std::env::var(key_var).ok(),
            model: std::env::var(Self::MODEL_VAR).unwrap_or_else(|_| "gpt-4o-mini".to_owned()),
            timeout: Duration::from_secs(60),
        })
    }
}

pub struct HttpChatProvider {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpChatProvider {
    pub fn new(config: HttpConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::fatal(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub(super) fn post(
        client: &reqwest::blocking::Client,
        config: &HttpConfig,
        path: &str,
        body: &serde_json::Value,
    ) -> Result<reqwest::blocking::Response, ProviderError> {
        let url = format!("{}/{}", config.base_url.trim_end_matches('/'), path);
        let mut req = client.post(url).json(body);
        if let Some(key) = &config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ProviderError {
            retryable: e.is_timeout() || e.is_connect(),
            message: e.to_string(),
        })?;
        let status = resp.status();
        if status.is_success() {
            Ok(resp)
        } else {
            let text = resp.text().unwrap_or_default();
            Err(ProviderError {
                retryable: status.as_u16() == 429 || status.is_server_error(),
                message: format!("HTTP {status}: {text}"),
            })
        }
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        let resp = Self::post(&self.client, &self.config, "chat/completions", &body)?;
        let parsed: CompletionResponse = resp
            .json()
            .map_err(|e| ProviderError::fatal(format!("malformed completion: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::fatal("completion without content"))
    }
}
