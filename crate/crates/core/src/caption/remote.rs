use super::{CaptionClient, CaptionRequest, Provider, ProviderError};
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::time::Duration;

/// Environment variable holding the bearer token for the caption endpoint.
pub const TOKEN_ENV: &str = "PPAT_CAPTION_TOKEN";

#[derive(Serialize)]
struct Body<'a> {
    prompt: &'a str,
    /// Base64 PNG.
    image: String,
    sketch_id: &'a str,
}

#[derive(Deserialize)]
struct Reply {
    caption: String,
}

/// JSON-over-HTTP captioner: POSTs `{prompt, image, sketch_id}` and expects
/// `{caption}` back.
#[derive(Debug)]
pub struct RemoteClient {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl RemoteClient {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteClient {
            endpoint: endpoint.into(),
            token,
            agent,
        }
    }

    /// Token taken from [`TOKEN_ENV`] when set.
    pub fn from_env(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self::new(endpoint, std::env::var(TOKEN_ENV).ok(), timeout)
    }
}

impl CaptionClient for RemoteClient {
    fn provider(&self) -> Provider {
        Provider::Remote
    }

    fn caption(&self, request: &CaptionRequest<'_>) -> Result<String, ProviderError> {
        let body = serde_json::to_string(&Body {
            prompt: request.prompt,
            image: base64::engine::general_purpose::STANDARD.encode(request.image.to_png()),
            sketch_id: request.sketch.id(),
        })
        .map_err(|e| ProviderError::Rejection(e.to_string()))?;
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send(body).map_err(|e| match e {
            ureq::Error::BadUri(_) | ureq::Error::InvalidProxyUrl => ProviderError::Rejection(e.to_string()),
            // timeouts, refused connections and DNS failures are worth retrying
            other => ProviderError::Timeout(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Timeout(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str::<Reply>(&text)
                .map(|r| r.caption)
                .map_err(|e| ProviderError::Rejection(format!("malformed reply: {e}"))),
            408 | 429 | 500..=599 => Err(ProviderError::Timeout(format!("HTTP {status}"))),
            _ => Err(ProviderError::Rejection(format!("HTTP {status}: {text}"))),
        }
    }
}
