//! HTTP client for wire protocol v1.

use std::time::Duration;

use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::Agent;

use super::wire::{
    stack_images, unstack_rows, ErrorBody, FeaturesRequest, FeaturesResponse, ImageBody,
    LatentBody, ScheduleRequest, TextEmbedRequest, TextEmbedResponse, WireDenoise, WireTensor,
};
use super::{BackendError, BackendInfo, DenoiseRequest, DenoiserBackend, Tensor};
use crate::synthesis::{LatentTensor, NoiseSchedule};

const MAX_RESPONSE_BYTES: u64 = 1 << 30;

#[derive(Clone, Debug)]
pub struct RemoteOptions {
    pub timeout: Duration,
    /// Extra attempts after a transport failure or a 503.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further one.
    pub retry_backoff: Duration,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(300),
            max_retries: 3,
            retry_backoff: Duration::from_millis(200),
        }
    }
}

/// Shareable across threads; connections are pooled by the agent. Every v1
/// endpoint is a pure function of its request, so all of them are retried.
pub struct RemoteBackend {
    base: String,
    agent: Agent,
    opts: RemoteOptions,
}

impl RemoteBackend {
    pub fn new(base_url: &str, opts: RemoteOptions) -> Self {
        let config = Agent::config_builder()
            .timeout_global(Some(opts.timeout))
            .http_status_as_error(false)
            .build();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent: Agent::new_with_config(config),
            opts,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    /// `GET /v1/health`.
    pub fn health(&self) -> Result<(), BackendError> {
        self.call::<(), serde_json::Value>("/v1/health", None).map(|_| ())
    }

    fn attempt<Req: Serialize>(&self, url: &str, body: Option<&Req>) -> Result<(u16, Vec<u8>), ureq::Error> {
        let mut resp = match body {
            Some(b) => self.agent.post(url).send_json(b)?,
            None => self.agent.get(url).call()?,
        };
        let status = resp.status().as_u16();
        let bytes = resp.body_mut().with_config().limit(MAX_RESPONSE_BYTES).read_to_vec()?;
        Ok((status, bytes))
    }

    fn call<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: Option<&Req>,
    ) -> Result<Resp, BackendError> {
        let url = format!("{}{path}", self.base);
        let mut attempt = 0;
        loop {
            let outcome = self.attempt(&url, body);
            let retryable = match &outcome {
                Err(_) => true,
                Ok((status, _)) => *status == 503,
            };
            if retryable && attempt < self.opts.max_retries {
                std::thread::sleep(self.opts.retry_backoff * 2u32.pow(attempt));
                attempt += 1;
                continue;
            }
            let (status, bytes) = outcome.map_err(|e| BackendError::Transport(format!("{url}: {e}")))?;
            if status == 200 {
                return serde_json::from_slice(&bytes)
                    .map_err(|e| BackendError::Malformed(format!("{url}: {e}")));
            }
            return Err(match serde_json::from_slice::<ErrorBody>(&bytes) {
                Ok(b) => BackendError::Rejected {
                    code: b.code,
                    message: b.message,
                },
                Err(_) => BackendError::Malformed(format!(
                    "{url}: HTTP {status} without an error body"
                )),
            });
        }
    }
}

fn latent_of(w: WireTensor) -> Result<LatentTensor, BackendError> {
    w.decode()
        .and_then(Tensor::into_latent)
        .map_err(|e| BackendError::Malformed(e.to_string()))
}

impl DenoiserBackend for RemoteBackend {
    fn info(&self) -> Result<BackendInfo, BackendError> {
        self.call::<(), _>("/v1/info", None)
    }

    fn schedule(&self, num_steps: usize) -> Result<NoiseSchedule, BackendError> {
        let s: NoiseSchedule = self.call("/v1/schedule", Some(&ScheduleRequest { num_steps }))?;
        s.validate().map_err(|e| BackendError::Malformed(e.to_string()))?;
        if s.num_steps() != num_steps {
            return Err(BackendError::Malformed(format!(
                "asked for {num_steps} steps, got {}",
                s.num_steps()
            )));
        }
        Ok(s)
    }

    fn encode(&self, rgb: &RgbImage) -> Result<LatentTensor, BackendError> {
        let body = ImageBody { image: WireTensor::encode(&Tensor::from_rgb(rgb)) };
        let r: LatentBody = self.call("/v1/encode", Some(&body))?;
        latent_of(r.latent)
    }

    fn decode(&self, latent: &LatentTensor) -> Result<RgbImage, BackendError> {
        let body = LatentBody { latent: WireTensor::encode(&Tensor::from_latent(latent)) };
        let r: ImageBody = self.call("/v1/decode", Some(&body))?;
        r.image
            .decode()
            .and_then(|t| t.to_rgb())
            .map_err(|e| BackendError::Malformed(e.to_string()))
    }

    fn text_embed(&self, prompt: &str, negative: &str) -> Result<String, BackendError> {
        let body = TextEmbedRequest {
            prompt: prompt.into(),
            negative: negative.into(),
        };
        let r: TextEmbedResponse = self.call("/v1/text_embed", Some(&body))?;
        Ok(r.embed_id)
    }

    fn denoise(&self, req: &DenoiseRequest) -> Result<LatentTensor, BackendError> {
        let r: LatentBody = self.call("/v1/denoise", Some(&WireDenoise::from_request(req)))?;
        latent_of(r.latent)
    }

    fn features(&self, images: &[RgbImage]) -> Result<Vec<Vec<f32>>, BackendError> {
        let body = FeaturesRequest { images: WireTensor::encode(&stack_images(images)?) };
        let r: FeaturesResponse = self.call("/v1/features", Some(&body))?;
        let rows = unstack_rows(&r.features.decode().map_err(|e| BackendError::Malformed(e.to_string()))?)?;
        if rows.len() != images.len() {
            return Err(BackendError::Malformed(format!(
                "{} feature rows for {} images",
                rows.len(),
                images.len()
            )));
        }
        Ok(rows)
    }
}
