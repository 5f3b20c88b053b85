//! HTTP client for an out-of-process enhancer.
//!
//! `POST {base}/enhance` with `{"degraded": b64png, "reference": b64png}`;
//! a 200 answer carries `{"enhanced": b64png, ...}`. 422 means the payload was
//! rejected, 503 that the backend is not ready yet.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use surfel_core::adaptation::{EnhanceRequest, Enhancer};
use surfel_core::Image;

use crate::imageio::{decode_png, encode_png};

pub const DEFAULT_TIMEOUT_S: f64 = 30.0;

#[derive(Serialize)]
pub struct WireRequest {
    pub degraded: String,
    pub reference: String,
}

#[derive(Deserialize)]
pub struct WireResponse {
    pub enhanced: String,
}

pub fn encode_request(degraded: &Image<f64>, reference: &Image<f64>) -> Result<WireRequest, String> {
    let png = |i: &Image<f64>| encode_png(i).map(|b| B64.encode(b)).map_err(|e| e.to_string());
    Ok(WireRequest {
        degraded: png(degraded)?,
        reference: png(reference)?,
    })
}

pub fn decode_response(body: &str) -> Result<Image<f64>, String> {
    let r: WireResponse = serde_json::from_str(body).map_err(|e| format!("malformed response: {e}"))?;
    let bytes = B64.decode(r.enhanced.as_bytes()).map_err(|e| format!("response is not base64: {e}"))?;
    decode_png(&bytes).map_err(|e| e.to_string())
}

#[derive(Debug)]
pub struct RemoteEnhancer {
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteEnhancer {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        Self {
            endpoint: format!("{}/enhance", base_url.trim_end_matches('/')),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    pub fn call(&self, degraded: &Image<f64>, reference: &Image<f64>) -> Result<Image<f64>, String> {
        let body = encode_request(degraded, reference)?;
        match self.agent.post(&self.endpoint).send_json(&body) {
            Ok(resp) => {
                let text = resp.into_string().map_err(|e| format!("reading response: {e}"))?;
                decode_response(&text)
            }
            Err(ureq::Error::Status(422, r)) => Err(format!("payload rejected (422): {}", r.into_string().unwrap_or_default())),
            Err(ureq::Error::Status(503, _)) => Err("enhancer backend not ready (503)".into()),
            Err(ureq::Error::Status(code, _)) => Err(format!("unexpected status {code}")),
            Err(e) => Err(format!("transport: {e}")),
        }
    }
}

impl Enhancer<f64> for RemoteEnhancer {
    fn name(&self) -> &str {
        "remote"
    }

    fn enhance(&self, req: &EnhanceRequest<'_, f64>) -> surfel_core::Result<Image<f64>> {
        self.call(req.degraded, req.reference).map_err(surfel_core::Error::Enhancer)
    }
}
