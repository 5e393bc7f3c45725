//! Captioner client that POSTs each request as JSON to a remote endpoint.
//!
//! Request body: a serialized [`CaptionerRequest`]. Expected response:
//! `{"caption": "<markup text>"}` with a 2xx status.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Captioner, CaptionerError, CaptionerRequest};

pub const ENV_URL: &str = "GROUNDCAP_CAPTIONER_URL";
pub const ENV_TOKEN: &str = "GROUNDCAP_CAPTIONER_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpCaptionerConfig {
    pub endpoint: String,
    #[serde(default)]
    pub token: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

impl HttpCaptionerConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token: None,
            timeout_secs: default_timeout(),
        }
    }

    /// Overrides endpoint and token from the environment when set.
    pub fn apply_env(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_URL) {
            self.endpoint = url;
        }
        if let Ok(token) = std::env::var(ENV_TOKEN) {
            self.token = Some(token);
        }
        self
    }
}

#[derive(Debug, Deserialize)]
struct CaptionResponse {
    caption: String,
}

pub struct HttpCaptioner {
    config: HttpCaptionerConfig,
    client: reqwest::blocking::Client,
}

impl HttpCaptioner {
    pub fn new(config: HttpCaptionerConfig) -> Result<Self, CaptionerError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| CaptionerError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &HttpCaptionerConfig {
        &self.config
    }
}

impl Captioner for HttpCaptioner {
    fn caption(&self, request: &CaptionerRequest) -> Result<String, CaptionerError> {
        let mut req = self.client.post(&self.config.endpoint).json(request);
        if let Some(token) = &self.config.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| CaptionerError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| CaptionerError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(CaptionerError::Status {
                status: status.as_u16(),
                body,
            });
        }
        serde_json::from_str::<CaptionResponse>(&body)
            .map(|r| r.caption)
            .map_err(|e| CaptionerError::BadResponse(e.to_string()))
    }
}
