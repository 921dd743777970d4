//! Chat-completion transport.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::prompts::Prompt;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("http: {0}")]
    Http(String),
    #[error("malformed response: {0}")]
    Response(String),
    #[error("environment variable {0} holding the API token is not set")]
    MissingToken(String),
}

/// Anything that can answer a system + user message pair.
pub trait ChatTransport: Sync {
    fn complete(&self, prompt: &Prompt) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApiConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token. An unset variable is an
    /// error only when `require_token` is true.
    pub token_env: String,
    pub require_token: bool,
    /// Extra request fields such as `temperature`, passed through verbatim.
    pub sampling: Map<String, Value>,
    pub timeout_secs: u64,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-5-mini".into(),
            token_env: "OPENAI_API_KEY".into(),
            require_token: true,
            sampling: Map::new(),
            timeout_secs: 120,
        }
    }
}

impl ApiConfig {
    /// Model name plus sampling parameters, as recorded in cache keys.
    pub fn model_key(&self) -> String {
        if self.sampling.is_empty() {
            self.model.clone()
        } else {
            format!("{}{}", self.model, Value::Object(self.sampling.clone()))
        }
    }
}

/// OpenAI-compatible `POST /chat/completions` client.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    token: Option<String>,
    config: ApiConfig,
}

impl HttpTransport {
    pub fn new(config: ApiConfig) -> Result<Self, TransportError> {
        let token = std::env::var(&config.token_env)
            .ok()
            .filter(|t| !t.is_empty());
        if token.is_none() && config.require_token {
            return Err(TransportError::MissingToken(config.token_env.clone()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            agent,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            token,
            config,
        })
    }

    fn body(&self, prompt: &Prompt) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
        });
        let obj = body.as_object_mut().expect("object literal");
        for (k, v) in &self.config.sampling {
            obj.insert(k.clone(), v.clone());
        }
        body
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, prompt: &Prompt) -> Result<String, TransportError> {
        let mut request = self.agent.post(&self.url);
        if let Some(token) = &self.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request
            .send_json(self.body(prompt))
            .map_err(|e| TransportError::Http(e.to_string()))?;
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| TransportError::Response(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| TransportError::Response("no choices[0].message.content".into()))
    }
}
