use std::time::Duration;

use serde_json::Value;
use ureq::Agent;

use super::{Transport, TransportFailure};

/// JSON-over-HTTP transport with optional bearer authentication.
pub struct HttpTransport {
    base_url: String,
    api_key: Option<String>,
    agent: Agent,
}

impl HttpTransport {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            agent,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url, path.trim_start_matches('/'))
    }
}

impl Transport for HttpTransport {
    fn post(&self, path: &str, body: &Value, request_id: &str) -> Result<Value, TransportFailure> {
        let mut request = self
            .agent
            .post(&self.url(path))
            .header("Content-Type", "application/json")
            .header("Idempotency-Key", request_id);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send(body.to_string()).map_err(|err| match err {
            ureq::Error::Timeout(_) => TransportFailure::Timeout,
            other => TransportFailure::Connection(other.to_string()),
        })?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|err| match err {
                ureq::Error::Timeout(_) => TransportFailure::Timeout,
                other => TransportFailure::Connection(other.to_string()),
            })?;
        if !(200..300).contains(&status) {
            return Err(TransportFailure::Status {
                code: status,
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| TransportFailure::Decode(e.to_string()))
    }
}
