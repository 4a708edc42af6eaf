//! Wire protocol v1 message bodies.
//!
//! Every numeric array travels as `{shape, dtype: "f32", data}` with `data`
//! the base64 of the little-endian bytes in row-major order.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{BackendError, ControlInput, ControlKind, DenoiseRequest, ErrorCode, Tensor};

pub const PROTOCOL_PREFIX: &str = "/v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireTensor {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub data: String,
}

impl WireTensor {
    pub fn encode(t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            shape: t.shape.clone(),
            dtype: "f32".into(),
            data: B64.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Tensor, BackendError> {
        if self.dtype != "f32" {
            return Err(BackendError::rejected(
                ErrorCode::InvalidRequest,
                format!("dtype {:?}, expected \"f32\"", self.dtype),
            ));
        }
        let bytes = B64
            .decode(self.data.as_bytes())
            .map_err(|e| BackendError::rejected(ErrorCode::InvalidRequest, format!("bad base64: {e}")))?;
        if bytes.len() % 4 != 0 {
            return Err(BackendError::rejected(
                ErrorCode::InvalidRequest,
                format!("{} payload bytes is not a whole number of f32", bytes.len()),
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(self.shape.clone(), data)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScheduleRequest {
    pub num_steps: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageBody {
    pub image: WireTensor,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LatentBody {
    pub latent: WireTensor,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TextEmbedRequest {
    pub prompt: String,
    #[serde(default)]
    pub negative: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TextEmbedResponse {
    pub embed_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireControl {
    #[serde(rename = "type")]
    pub kind: String,
    pub image: WireTensor,
    pub weight: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireDenoise {
    pub latent: WireTensor,
    pub step_index: usize,
    pub timestep: u32,
    pub schedule_id: String,
    pub embed_id: String,
    pub controls: Vec<WireControl>,
    pub guidance_scale: f64,
    pub seed: u64,
}

impl WireDenoise {
    pub fn from_request(req: &DenoiseRequest) -> Self {
        Self {
            latent: WireTensor::encode(&Tensor::from_latent(&req.latent)),
            step_index: req.step_index,
            timestep: req.timestep,
            schedule_id: req.schedule_id.clone(),
            embed_id: req.embed_id.clone(),
            controls: req
                .controls
                .iter()
                .map(|c| WireControl {
                    kind: c.kind.as_str().into(),
                    image: WireTensor::encode(&c.image),
                    weight: c.weight,
                })
                .collect(),
            guidance_scale: req.guidance_scale,
            seed: req.seed,
        }
    }

    pub fn into_request(self) -> Result<DenoiseRequest, BackendError> {
        let controls = self
            .controls
            .into_iter()
            .map(|c| {
                let kind = ControlKind::ALL
                    .into_iter()
                    .find(|k| k.as_str() == c.kind)
                    .ok_or_else(|| {
                        BackendError::rejected(
                            ErrorCode::UnsupportedControl,
                            format!("unsupported control type {:?}", c.kind),
                        )
                    })?;
                Ok(ControlInput {
                    kind,
                    image: c.image.decode()?,
                    weight: c.weight,
                })
            })
            .collect::<Result<Vec<_>, BackendError>>()?;
        Ok(DenoiseRequest {
            latent: self.latent.decode()?.into_latent()?,
            step_index: self.step_index,
            timestep: self.timestep,
            schedule_id: self.schedule_id,
            embed_id: self.embed_id,
            controls: controls.into(),
            guidance_scale: self.guidance_scale,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeaturesRequest {
    /// `[N, H, W, 3]`.
    pub images: WireTensor,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeaturesResponse {
    /// `[N, D]`.
    pub features: WireTensor,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
}

/// Stacks equally sized images into one `[N, H, W, 3]` tensor.
pub fn stack_images(images: &[RgbImage]) -> Result<Tensor, BackendError> {
    let (w, h) = images.first().map(|i| i.dimensions()).unwrap_or((0, 0));
    if let Some(odd) = images.iter().find(|i| i.dimensions() != (w, h)) {
        return Err(BackendError::rejected(
            ErrorCode::ShapeMismatch,
            format!("image {:?} differs from batch size {:?}", odd.dimensions(), (w, h)),
        ));
    }
    let data = images.iter().flat_map(|i| i.as_raw().iter().map(|&v| v as f32)).collect();
    Tensor::new(vec![images.len(), h as usize, w as usize, 3], data)
}

pub fn unstack_images(t: &Tensor) -> Result<Vec<RgbImage>, BackendError> {
    let [n, h, w, 3] = t.shape[..] else {
        return Err(BackendError::rejected(
            ErrorCode::ShapeMismatch,
            format!("expected [N, H, W, 3] images, got {:?}", t.shape),
        ));
    };
    let per = h * w * 3;
    (0..n)
        .map(|i| {
            Tensor::new(vec![h, w, 3], t.data[i * per..(i + 1) * per].to_vec())?.to_rgb()
        })
        .collect()
}

pub fn stack_rows(rows: &[Vec<f32>]) -> Result<Tensor, BackendError> {
    let d = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != d) {
        return Err(BackendError::rejected(ErrorCode::ShapeMismatch, "ragged feature rows"));
    }
    Tensor::new(vec![rows.len(), d], rows.concat())
}

pub fn unstack_rows(t: &Tensor) -> Result<Vec<Vec<f32>>, BackendError> {
    let [n, d] = t.shape[..] else {
        return Err(BackendError::Malformed(format!("expected [N, D] features, got {:?}", t.shape)));
    };
    Ok((0..n).map(|i| t.data[i * d..(i + 1) * d].to_vec()).collect())
}
