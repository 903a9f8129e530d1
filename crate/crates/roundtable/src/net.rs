//! Minimal blocking HTTP JSON client with exponential-backoff retries.

use std::time::Duration;

use crate::error::{Error, Result};

pub(crate) struct RetryPolicy {
    pub max_retries: u32,
    pub timeout: Duration,
    pub base_delay: Duration,
}

impl RetryPolicy {
    pub fn new(max_retries: u32, timeout_secs: u64) -> Self {
        RetryPolicy {
            max_retries,
            timeout: Duration::from_secs(timeout_secs.max(1)),
            base_delay: Duration::from_millis(250),
        }
    }
}

/// POST a JSON body, retrying transport failures and retryable statuses
/// (429 and 5xx) with exponential backoff. 4xx responses fail immediately.
pub(crate) fn post_json(
    url: &str,
    body: &serde_json::Value,
    policy: &RetryPolicy,
    headers: &[(String, String)],
) -> Result<serde_json::Value> {
    let client = reqwest::blocking::Client::builder()
        .timeout(policy.timeout)
        .build()
        .map_err(|e| Error::Transport(e.to_string()))?;

    let mut last_err = None;
    for attempt in 0..=policy.max_retries {
        if attempt > 0 {
            std::thread::sleep(policy.base_delay * 2u32.pow(attempt - 1));
        }
        let mut request = client.post(url).json(body);
        for (name, value) in headers {
            request = request.header(name.as_str(), value.as_str());
        }
        match request.send() {
            Err(e) => last_err = Some(Error::Transport(e.to_string())),
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    return resp
                        .json::<serde_json::Value>()
                        .map_err(|e| Error::MalformedResponse(e.to_string()));
                }
                let body_text = resp.text().unwrap_or_default();
                let err = Error::HttpStatus {
                    status: status.as_u16(),
                    body: body_text.chars().take(200).collect(),
                };
                let retryable = status.as_u16() == 429 || status.is_server_error();
                if !retryable {
                    return Err(err);
                }
                last_err = Some(err);
            }
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Transport("request never attempted".into())))
}
