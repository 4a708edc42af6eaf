//! Deterministic in-process backend.
//!
//! The latent codec reshapes each 8×8 pixel block into channels, so
//! `decode(encode(x)) == x` exactly and latent cells map to pixel blocks.

use std::collections::{HashSet, VecDeque};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    BackendError, BackendInfo, ControlInput, ControlKind, DenoiseRequest, DenoiserBackend, ErrorCode,
};
use crate::synthesis::{gaussian_like, LatentTensor, NoiseLevel, NoiseSchedule};

const FACTOR: usize = 8;
const IMAGE_SIZE: usize = 512;
const LATENT_SIZE: usize = IMAGE_SIZE / FACTOR;
pub const MOCK_LATENT_CHANNELS: usize = FACTOR * FACTOR * 3;
pub const MOCK_FEATURE_DIM: usize = 2048;
const TRAIN_STEPS: usize = 1000;
const SCHEDULE_PREFIX: &str = "mock-sd-scaled-linear-";
const CACHE_SLOTS: usize = 16;
/// At least one latent; denoise noise is a contiguous (wrapping) run of it.
const NOISE_BANK_LEN: usize = 1 << 21;

/// What `denoise` returns.
#[derive(Clone, Debug)]
pub enum MockMode {
    /// A prompt-colored image shaded by the depth and edge controls, noised
    /// to the next step's level.
    Synthetic,
    /// `forward_noise(target, ᾱ_next, eps(seed))`; exactly `target` at the
    /// last step. `eps(seed)` is read from a fixed standard-normal bank at an
    /// offset chosen by the seed.
    Target(LatentTensor),
    /// Always the given latent.
    Constant(LatentTensor),
}

/// Controls already validated for an embed, with the synthetic target they
/// produce. Holding the `Arc` keeps its address from being reused, so
/// pointer equality implies identical contents.
struct CachedControls {
    controls: Arc<[ControlInput]>,
    embed_id: String,
    target: Option<Arc<LatentTensor>>,
}

pub struct MockBackend {
    mode: MockMode,
    embeds: RwLock<HashSet<String>>,
    cache: Mutex<VecDeque<CachedControls>>,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new(MockMode::Synthetic)
    }
}

impl MockBackend {
    pub fn new(mode: MockMode) -> Self {
        Self {
            mode,
            embeds: RwLock::new(HashSet::new()),
            cache: Mutex::new(VecDeque::new()),
        }
    }

    pub fn latent_shape() -> [usize; 3] {
        [MOCK_LATENT_CHANNELS, LATENT_SIZE, LATENT_SIZE]
    }

    fn check_latent(&self, l: &LatentTensor) -> Result<(), BackendError> {
        if l.shape() != Self::latent_shape() {
            return Err(BackendError::rejected(
                ErrorCode::ShapeMismatch,
                format!("latent shape {:?}, expected {:?}", l.shape(), Self::latent_shape()),
            ));
        }
        if !l.is_finite() {
            return Err(BackendError::rejected(ErrorCode::InvalidRequest, "non-finite latent"));
        }
        Ok(())
    }

    fn validate(&self, req: &DenoiseRequest) -> Result<NoiseSchedule, BackendError> {
        self.check_latent(&req.latent)?;
        let invalid = |m: String| Err(BackendError::rejected(ErrorCode::InvalidRequest, m));
        let n: usize = req
            .schedule_id
            .strip_prefix(SCHEDULE_PREFIX)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                BackendError::rejected(
                    ErrorCode::UnknownHandle,
                    format!("unknown schedule {:?}", req.schedule_id),
                )
            })?;
        let schedule = sd_scaled_linear_schedule(n)?;
        if req.step_index >= n {
            return invalid(format!("step_index {} out of range for {n} steps", req.step_index));
        }
        if schedule.timesteps[req.step_index] != req.timestep {
            return invalid(format!(
                "timestep {} does not match step {} (expected {})",
                req.timestep, req.step_index, schedule.timesteps[req.step_index]
            ));
        }
        if !self.embeds.read().expect("embed registry poisoned").contains(&req.embed_id) {
            return Err(BackendError::rejected(
                ErrorCode::UnknownHandle,
                format!("unknown embed {:?}", req.embed_id),
            ));
        }
        if !(req.guidance_scale.is_finite() && req.guidance_scale >= 0.0) {
            return invalid(format!("guidance_scale {}", req.guidance_scale));
        }
        Ok(schedule)
    }

    fn validate_controls(controls: &[ControlInput]) -> Result<(), BackendError> {
        let invalid = |m: String| Err(BackendError::rejected(ErrorCode::InvalidRequest, m));
        let mut seen = HashSet::new();
        for c in controls {
            if !seen.insert(c.kind) {
                return invalid(format!("duplicate {} control", c.kind.as_str()));
            }
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return invalid(format!("{} weight {}", c.kind.as_str(), c.weight));
            }
            let expected = vec![IMAGE_SIZE, IMAGE_SIZE, c.kind.channels()];
            if c.image.shape != expected {
                return Err(BackendError::rejected(
                    ErrorCode::ShapeMismatch,
                    format!("{} control shape {:?}, expected {expected:?}", c.kind.as_str(), c.image.shape),
                ));
            }
            if c.image.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return invalid(format!("{} control values outside [0, 1]", c.kind.as_str()));
            }
        }
        Ok(())
    }

    /// Validates the controls once per distinct `Arc`; in synthetic mode
    /// also returns the target they shade.
    fn checked_target(&self, req: &DenoiseRequest) -> Result<Option<Arc<LatentTensor>>, BackendError> {
        let synthetic = matches!(self.mode, MockMode::Synthetic);
        let mut cache = self.cache.lock().expect("control cache poisoned");
        let hit = cache
            .iter()
            .find(|c| Arc::ptr_eq(&c.controls, &req.controls) && c.embed_id == req.embed_id);
        if let Some(c) = hit {
            return Ok(c.target.clone());
        }
        drop(cache);
        Self::validate_controls(&req.controls)?;
        let target = synthetic.then(|| Arc::new(self.synthetic_target(req)));
        cache = self.cache.lock().expect("control cache poisoned");
        if cache.len() == CACHE_SLOTS {
            cache.pop_front();
        }
        cache.push_back(CachedControls {
            controls: req.controls.clone(),
            embed_id: req.embed_id.clone(),
            target: target.clone(),
        });
        Ok(target)
    }

    fn synthetic_target(&self, req: &DenoiseRequest) -> LatentTensor {
        let digest = Sha256::digest(req.embed_id.as_bytes());
        let base = [0, 1, 2].map(|i| 40.0 + (digest[i] as f64 / 255.0) * 175.0);
        let control = |k: ControlKind| req.controls.iter().find(|c| c.kind == k);
        let depth = control(ControlKind::Depth);
        let edges = control(ControlKind::Edges);
        let mut out = LatentTensor::zeros(MOCK_LATENT_CHANNELS, LATENT_SIZE, LATENT_SIZE);
        let plane = LATENT_SIZE * LATENT_SIZE;
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                let i = y * IMAGE_SIZE + x;
                let mut shade = 1.0;
                if let Some(d) = depth {
                    shade -= 0.4 * d.weight.min(1.0) * d.image.data[i] as f64;
                }
                if let Some(e) = edges {
                    shade *= 1.0 - 0.5 * e.weight.min(1.0) * e.image.data[i] as f64;
                }
                let cell = (y / FACTOR) * LATENT_SIZE + x / FACTOR;
                let base_c = ((y % FACTOR) * FACTOR + x % FACTOR) * 3;
                for ch in 0..3 {
                    let v = (base[ch] * shade).round() as u8;
                    out.data[(base_c + ch) * plane + cell] = v as f32 / 127.5 - 1.0;
                }
            }
        }
        out
    }
}

/// Stable Diffusion's scaled-linear betas over 1000 training steps, sampled
/// with leading spacing: step `i` of `n` is timestep `(n−1−i)·⌊1000/n⌋ + 1`.
pub fn sd_scaled_linear_schedule(n: usize) -> Result<NoiseSchedule, BackendError> {
    if !(1..=TRAIN_STEPS).contains(&n) {
        return Err(BackendError::rejected(
            ErrorCode::InvalidRequest,
            format!("num_steps {n} outside 1..={TRAIN_STEPS}"),
        ));
    }
    let (lo, hi) = (0.00085f64.sqrt(), 0.012f64.sqrt());
    let mut alpha_cum = Vec::with_capacity(TRAIN_STEPS);
    let mut acc = 1.0;
    for t in 0..TRAIN_STEPS {
        let b = lo + (hi - lo) * t as f64 / (TRAIN_STEPS - 1) as f64;
        acc *= 1.0 - b * b;
        alpha_cum.push(acc);
    }
    let ratio = TRAIN_STEPS / n;
    let timesteps: Vec<u32> = (0..n).map(|i| ((n - 1 - i) * ratio + 1) as u32).collect();
    let alpha_bars = timesteps.iter().map(|&t| alpha_cum[t as usize]).collect();
    Ok(NoiseSchedule {
        schedule_id: format!("{SCHEDULE_PREFIX}{n}"),
        timesteps,
        alpha_bars,
    })
}

fn noise_bank() -> &'static [f32] {
    static BANK: OnceLock<Vec<f32>> = OnceLock::new();
    BANK.get_or_init(|| gaussian_like([1, 1, NOISE_BANK_LEN], &mut ChaCha8Rng::seed_from_u64(0x6e6f697365)).data)
}

fn noised(target: &LatentTensor, alpha_bar: f64, seed: u64) -> LatentTensor {
    let bank = noise_bank();
    let start = (seed % bank.len() as u64) as usize;
    let eps = bank[start..].iter().chain(bank);
    let level = NoiseLevel::new(alpha_bar);
    let data = target.data.iter().zip(eps).map(|(&x, &e)| level.apply(x, e)).collect();
    LatentTensor::from_vec(target.shape(), data).expect("shape preserved")
}

fn encode_blocks(img: &RgbImage) -> LatentTensor {
    let mut out = LatentTensor::zeros(MOCK_LATENT_CHANNELS, LATENT_SIZE, LATENT_SIZE);
    let plane = LATENT_SIZE * LATENT_SIZE;
    for (x, y, p) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        let cell = (y / FACTOR) * LATENT_SIZE + x / FACTOR;
        let base = ((y % FACTOR) * FACTOR + x % FACTOR) * 3;
        for ch in 0..3 {
            out.data[(base + ch) * plane + cell] = p.0[ch] as f32 / 127.5 - 1.0;
        }
    }
    out
}

fn decode_blocks(l: &LatentTensor) -> RgbImage {
    let plane = LATENT_SIZE * LATENT_SIZE;
    RgbImage::from_fn(IMAGE_SIZE as u32, IMAGE_SIZE as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let cell = (y / FACTOR) * LATENT_SIZE + x / FACTOR;
        let base = ((y % FACTOR) * FACTOR + x % FACTOR) * 3;
        Rgb([0, 1, 2].map(|ch| {
            let v = l.data[(base + ch) * plane + cell];
            ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
        }))
    })
}

fn embed_handle(prompt: &str, negative: &str) -> String {
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    h.update([0u8]);
    h.update(negative.as_bytes());
    format!("emb-{}", &hex::encode(h.finalize())[..16])
}

impl DenoiserBackend for MockBackend {
    fn info(&self) -> Result<BackendInfo, BackendError> {
        Ok(BackendInfo {
            name: "mock".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            latent_channels: MOCK_LATENT_CHANNELS,
            spatial_factor: FACTOR,
            image_size: IMAGE_SIZE,
            feature_dim: MOCK_FEATURE_DIM,
            schedule: "sd-scaled-linear(0.00085, 0.012, 1000), leading spacing".into(),
            controls: ControlKind::ALL.to_vec(),
        })
    }

    fn schedule(&self, num_steps: usize) -> Result<NoiseSchedule, BackendError> {
        sd_scaled_linear_schedule(num_steps)
    }

    fn encode(&self, rgb: &RgbImage) -> Result<LatentTensor, BackendError> {
        if rgb.dimensions() != (IMAGE_SIZE as u32, IMAGE_SIZE as u32) {
            return Err(BackendError::rejected(
                ErrorCode::ShapeMismatch,
                format!("image {:?}, expected {IMAGE_SIZE}x{IMAGE_SIZE}", rgb.dimensions()),
            ));
        }
        Ok(encode_blocks(rgb))
    }

    fn decode(&self, latent: &LatentTensor) -> Result<RgbImage, BackendError> {
        self.check_latent(latent)?;
        Ok(decode_blocks(latent))
    }

    fn text_embed(&self, prompt: &str, negative: &str) -> Result<String, BackendError> {
        let id = embed_handle(prompt, negative);
        self.embeds.write().expect("embed registry poisoned").insert(id.clone());
        Ok(id)
    }

    fn denoise(&self, req: &DenoiseRequest) -> Result<LatentTensor, BackendError> {
        let schedule = self.validate(req)?;
        let target = self.checked_target(req)?;
        let next = schedule.alpha_bar_after(req.step_index);
        Ok(match &self.mode {
            MockMode::Synthetic => noised(target.as_deref().expect("synthetic target cached"), next, req.seed),
            MockMode::Target(t) => noised(t, next, req.seed),
            MockMode::Constant(c) => c.clone(),
        })
    }

    fn features(&self, images: &[RgbImage]) -> Result<Vec<Vec<f32>>, BackendError> {
        use rand::Rng;
        use rand_distr::StandardNormal;
        Ok(images
            .iter()
            .map(|img| {
                let mut h = Sha256::new();
                h.update(img.width().to_le_bytes());
                h.update(img.height().to_le_bytes());
                h.update(img.as_raw());
                let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
                (0..MOCK_FEATURE_DIM).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
            })
            .collect())
    }
}
