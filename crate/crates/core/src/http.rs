//! Blocking JSON-over-HTTP with bounded retries, shared by the remote providers.

use std::time::Duration;

use log::warn;
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub endpoint: String,
    pub token: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff: Duration,
}

impl HttpSettings {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token: None,
            timeout: Duration::from_secs(60),
            max_retries: 2,
            backoff: Duration::from_millis(500),
        }
    }
}

pub struct JsonClient {
    settings: HttpSettings,
    client: reqwest::blocking::Client,
}

impl JsonClient {
    pub fn new(settings: HttpSettings) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| Error::Provider(e.to_string()))?;
        Ok(Self { settings, client })
    }

    pub fn endpoint(&self) -> &str {
        &self.settings.endpoint
    }

    /// POSTs `body`; retries transport failures, 429 and 5xx with linear backoff.
    pub fn post(&self, body: &Value) -> Result<Value> {
        let mut last_err = String::new();
        for attempt in 0..=self.settings.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.settings.backoff * attempt);
            }
            let mut req = self.client.post(&self.settings.endpoint).json(body);
            if let Some(token) = &self.settings.token {
                req = req.bearer_auth(token);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp
                            .json::<Value>()
                            .map_err(|e| Error::Provider(format!("bad response body: {e}")));
                    }
                    let text = resp.text().unwrap_or_default();
                    last_err = format!("HTTP {status}: {text}");
                    if !(status.as_u16() == 429 || status.is_server_error()) {
                        break;
                    }
                }
                Err(e) => last_err = e.to_string(),
            }
            warn!(
                "request to {} failed (attempt {}): {last_err}",
                self.settings.endpoint,
                attempt + 1
            );
        }
        Err(Error::Provider(format!(
            "{}: {last_err}",
            self.settings.endpoint
        )))
    }
}
