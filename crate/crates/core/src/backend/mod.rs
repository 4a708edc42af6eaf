//! Denoiser backend contract.
//!
//! The orchestrator owns the compositing math and talks to a backend one
//! reverse step at a time. [`MockBackend`] is a deterministic in-process
//! implementation; [`RemoteBackend`] speaks wire protocol v1 over HTTP, and
//! [`serve`] exposes any backend over the same protocol.

mod mock;
mod remote;
mod server;
pub mod wire;

use std::sync::Arc;

use std::sync::atomic::{AtomicUsize, Ordering};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::synthesis::{LatentTensor, NoiseSchedule};

pub use mock::{sd_scaled_linear_schedule, MockBackend, MockMode, MOCK_FEATURE_DIM, MOCK_LATENT_CHANNELS};
pub use remote::{RemoteBackend, RemoteOptions};
pub use server::{serve, ServerHandle, ServerOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlKind {
    Depth,
    Normals,
    Edges,
    Pose,
}

impl ControlKind {
    pub const ALL: [ControlKind; 4] = [
        ControlKind::Depth,
        ControlKind::Normals,
        ControlKind::Edges,
        ControlKind::Pose,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControlKind::Depth => "depth",
            ControlKind::Normals => "normals",
            ControlKind::Edges => "edges",
            ControlKind::Pose => "pose",
        }
    }

    /// Channel count of the control image on the wire.
    pub fn channels(self) -> usize {
        match self {
            ControlKind::Depth | ControlKind::Edges => 1,
            ControlKind::Normals | ControlKind::Pose => 3,
        }
    }
}

/// Dense row-major f32 array with explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, BackendError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(BackendError::rejected(
                ErrorCode::ShapeMismatch,
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    /// `[H, W, 3]` with values in 0..=255.
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Self {
            shape: vec![h as usize, w as usize, 3],
            data: img.as_raw().iter().map(|&v| v as f32).collect(),
        }
    }

    /// Inverse of [`Tensor::from_rgb`]; values are rounded and clamped.
    pub fn to_rgb(&self) -> Result<RgbImage, BackendError> {
        match self.shape[..] {
            [h, w, 3] => {
                let raw = self.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
                Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("length checked by shape"))
            }
            _ => Err(BackendError::rejected(
                ErrorCode::ShapeMismatch,
                format!("expected [H, W, 3] image, got {:?}", self.shape),
            )),
        }
    }

    pub fn from_latent(l: &LatentTensor) -> Self {
        Self {
            shape: l.shape().to_vec(),
            data: l.data.clone(),
        }
    }

    pub fn into_latent(self) -> Result<LatentTensor, BackendError> {
        match self.shape[..] {
            [c, h, w] => LatentTensor::from_vec([c, h, w], self.data)
                .map_err(|e| BackendError::rejected(ErrorCode::ShapeMismatch, e.to_string())),
            _ => Err(BackendError::rejected(
                ErrorCode::ShapeMismatch,
                format!("expected [C, H, W] latent, got {:?}", self.shape),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlInput {
    pub kind: ControlKind,
    /// `[H, W, C]` with values in [0, 1].
    pub image: Tensor,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub name: String,
    pub version: String,
    pub latent_channels: usize,
    pub spatial_factor: usize,
    pub image_size: usize,
    pub feature_dim: usize,
    pub schedule: String,
    pub controls: Vec<ControlKind>,
}

impl BackendInfo {
    /// `name/version`, as recorded in provenance.
    pub fn identity(&self) -> String {
        format!("{}/{}", self.name, self.version)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseRequest {
    pub latent: LatentTensor,
    pub step_index: usize,
    pub timestep: u32,
    pub schedule_id: String,
    /// Handle covering both the prompt and the negative prompt.
    pub embed_id: String,
    /// Shared by every step of a part.
    pub controls: Arc<[ControlInput]>,
    pub guidance_scale: f64,
    pub seed: u64,
}

/// Machine-readable error class; shared by both sides of the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidRequest,
    ShapeMismatch,
    UnsupportedControl,
    UnknownHandle,
    NotFound,
    Overloaded,
    Internal,
}

impl ErrorCode {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::InvalidRequest
            | ErrorCode::ShapeMismatch
            | ErrorCode::UnsupportedControl
            | ErrorCode::UnknownHandle => 400,
            ErrorCode::NotFound => 404,
            ErrorCode::Overloaded => 503,
            ErrorCode::Internal => 500,
        }
    }
}

#[derive(Clone, Debug, thiserror::Error, PartialEq)]
pub enum BackendError {
    #[error("backend rejected request ({code:?}): {message}")]
    Rejected { code: ErrorCode, message: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed backend response: {0}")]
    Malformed(String),
}

impl BackendError {
    pub fn rejected(code: ErrorCode, message: impl Into<String>) -> Self {
        BackendError::Rejected {
            code,
            message: message.into(),
        }
    }

    pub fn code(&self) -> ErrorCode {
        match self {
            BackendError::Rejected { code, .. } => *code,
            BackendError::Transport(_) | BackendError::Malformed(_) => ErrorCode::Internal,
        }
    }
}

/// Every implementation must be a pure function of its inputs: the same
/// request (including seed) yields the same output.
pub trait DenoiserBackend: Send + Sync {
    fn info(&self) -> Result<BackendInfo, BackendError>;
    fn schedule(&self, num_steps: usize) -> Result<NoiseSchedule, BackendError>;
    fn encode(&self, rgb: &RgbImage) -> Result<LatentTensor, BackendError>;
    fn decode(&self, latent: &LatentTensor) -> Result<RgbImage, BackendError>;
    fn text_embed(&self, prompt: &str, negative: &str) -> Result<String, BackendError>;
    /// One reverse step from `step_index` to `step_index + 1`.
    fn denoise(&self, req: &DenoiseRequest) -> Result<LatentTensor, BackendError>;
    /// One `feature_dim` vector per image.
    fn features(&self, images: &[RgbImage]) -> Result<Vec<Vec<f32>>, BackendError>;
}

impl<B: DenoiserBackend + ?Sized> DenoiserBackend for std::sync::Arc<B> {
    fn info(&self) -> Result<BackendInfo, BackendError> {
        (**self).info()
    }
    fn schedule(&self, num_steps: usize) -> Result<NoiseSchedule, BackendError> {
        (**self).schedule(num_steps)
    }
    fn encode(&self, rgb: &RgbImage) -> Result<LatentTensor, BackendError> {
        (**self).encode(rgb)
    }
    fn decode(&self, latent: &LatentTensor) -> Result<RgbImage, BackendError> {
        (**self).decode(latent)
    }
    fn text_embed(&self, prompt: &str, negative: &str) -> Result<String, BackendError> {
        (**self).text_embed(prompt, negative)
    }
    fn denoise(&self, req: &DenoiseRequest) -> Result<LatentTensor, BackendError> {
        (**self).denoise(req)
    }
    fn features(&self, images: &[RgbImage]) -> Result<Vec<Vec<f32>>, BackendError> {
        (**self).features(images)
    }
}

/// Per-method call counts of the wrapped backend.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCounts {
    pub info: usize,
    pub schedule: usize,
    pub encode: usize,
    pub decode: usize,
    pub text_embed: usize,
    pub denoise: usize,
    pub features: usize,
}

impl CallCounts {
    /// Calls that do per-part work; excludes negotiation.
    pub fn part_work(&self) -> usize {
        self.encode + self.decode + self.text_embed + self.denoise
    }
}

/// Wraps a backend and counts calls per method.
pub struct CountingBackend<B> {
    inner: B,
    counters: [AtomicUsize; 7],
}

impl<B: DenoiserBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            counters: Default::default(),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn counts(&self) -> CallCounts {
        let c = |i: usize| self.counters[i].load(Ordering::SeqCst);
        CallCounts {
            info: c(0),
            schedule: c(1),
            encode: c(2),
            decode: c(3),
            text_embed: c(4),
            denoise: c(5),
            features: c(6),
        }
    }

    pub fn reset(&self) {
        for c in &self.counters {
            c.store(0, Ordering::SeqCst);
        }
    }

    fn bump(&self, i: usize) {
        self.counters[i].fetch_add(1, Ordering::SeqCst);
    }
}

impl<B: DenoiserBackend> DenoiserBackend for CountingBackend<B> {
    fn info(&self) -> Result<BackendInfo, BackendError> {
        self.bump(0);
        self.inner.info()
    }
    fn schedule(&self, num_steps: usize) -> Result<NoiseSchedule, BackendError> {
        self.bump(1);
        self.inner.schedule(num_steps)
    }
    fn encode(&self, rgb: &RgbImage) -> Result<LatentTensor, BackendError> {
        self.bump(2);
        self.inner.encode(rgb)
    }
    fn decode(&self, latent: &LatentTensor) -> Result<RgbImage, BackendError> {
        self.bump(3);
        self.inner.decode(latent)
    }
    fn text_embed(&self, prompt: &str, negative: &str) -> Result<String, BackendError> {
        self.bump(4);
        self.inner.text_embed(prompt, negative)
    }
    fn denoise(&self, req: &DenoiseRequest) -> Result<LatentTensor, BackendError> {
        self.bump(5);
        self.inner.denoise(req)
    }
    fn features(&self, images: &[RgbImage]) -> Result<Vec<Vec<f32>>, BackendError> {
        self.bump(6);
        self.inner.features(images)
    }
}
