//! HTTP chat-completion agent backend.
//!
//! Speaks the common chat-completions JSON shape: a POST with role-tagged
//! messages, a response with `choices[0].message.content` and a `usage`
//! block. The API key, when needed, is read from an environment variable
//! named in the config so keys never land in manifests.

use serde::{Deserialize, Serialize};

use super::{PromptBundle, ResponseRecord};
use crate::embedding::{embed, EmbedderSpec};
use crate::error::{Error, Result};
use crate::net;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpAgentConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_max_tokens() -> u32 {
    2048
}

fn default_temperature() -> f64 {
    0.5
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_max_retries() -> u32 {
    3
}

impl HttpAgentConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpAgentConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: None,
            max_tokens: default_max_tokens(),
            temperature: default_temperature(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
        }
    }

    fn headers(&self) -> Vec<(String, String)> {
        let mut headers = Vec::new();
        if let Some(var) = &self.api_key_env {
            if let Ok(key) = std::env::var(var) {
                headers.push(("Authorization".to_string(), format!("Bearer {key}")));
            }
        }
        headers
    }
}

/// Call the chat service for one agent turn and embed the returned text.
/// Transport and status failures surface with the agent id and round
/// attached; a truncated completion is flagged on the record, not fatal.
pub fn http_respond(
    cfg: &HttpAgentConfig,
    bundle: &PromptBundle,
    embedder: &EmbedderSpec,
    agent_id: usize,
    round: usize,
) -> Result<ResponseRecord> {
    call(cfg, bundle, embedder, agent_id, round).map_err(|e| e.in_agent_call(agent_id, round))
}

fn call(
    cfg: &HttpAgentConfig,
    bundle: &PromptBundle,
    embedder: &EmbedderSpec,
    agent_id: usize,
    round: usize,
) -> Result<ResponseRecord> {
    let body = serde_json::json!({
        "model": cfg.model,
        "messages": [
            {"role": "system", "content": bundle.system},
            {"role": "user", "content": bundle.user_with_collab()},
        ],
        "max_tokens": cfg.max_tokens,
        "temperature": cfg.temperature,
    });
    let response = net::post_json(
        &cfg.endpoint,
        &body,
        &net::RetryPolicy::new(cfg.max_retries, cfg.timeout_secs),
        &cfg.headers(),
    )?;

    let choice = response
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| Error::MalformedResponse("no choices in response".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::MalformedResponse("no message content in response".into()))?
        .to_string();
    if text.is_empty() {
        return Err(Error::MalformedResponse("empty completion".into()));
    }
    let truncated = choice
        .get("finish_reason")
        .and_then(|v| v.as_str())
        .map(|r| r == "length")
        .unwrap_or(false);
    let prompt_tokens = response
        .pointer("/usage/prompt_tokens")
        .and_then(|v| v.as_u64())
        .unwrap_or(0);
    let completion_tokens = response
        .pointer("/usage/completion_tokens")
        .and_then(|v| v.as_u64())
        .unwrap_or(0);

    let embedding = embed(&text, embedder)?;
    Ok(ResponseRecord {
        agent_id,
        round,
        text,
        embedding,
        prompt_tokens,
        completion_tokens,
        truncated,
    })
}
