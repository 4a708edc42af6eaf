//! Masked partial-noise inpainting driven through a [`DenoiserBackend`].
//!
//! [`DenoiserBackend`]: crate::backend::DenoiserBackend

mod config;
mod latent;
mod pipeline;
mod prompt;
mod schedule;

pub use config::{
    ControlWeights, GenerationConfig, PartStrengths, Preset, CONTROL_ABLATION_STRENGTH,
    CUMULATIVE_ORDER,
};
pub use latent::{downsample_mask, LatentMask, LatentTensor, LATENT_FACTOR, MASK_DILATION_PX};
pub use pipeline::{
    composited_step, control_inputs, denoise_masked, inpaint_part, part_eligibility, part_prompt,
    process_frame, process_frame_observed, Eligibility, FrameOutput, PartOutcome, PartPlan, PersonMasks, RunContext, StepContext,
    MIN_FACE_PIXELS, VISIBILITY_THRESHOLD,
};
pub use prompt::{build_prompt, fnv1a64, part_seed, ProcessPart, HAIR_COLORS, HAIR_TYPES, SHOE_TYPES};
pub use schedule::{forward_noise, forward_noise_fresh, gaussian_like, strength_to_start, NoiseLevel, NoiseSchedule};

use crate::backend::BackendError;
use crate::bodygeom::GeomError;
use crate::conditioning::CondError;
use crate::dataio::DataError;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("strength {0} outside (0, 1]")]
    InvalidStrength(f64),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("unknown part {0:?}")]
    UnknownPart(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("backend error{}: {source}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Backend {
        step: Option<usize>,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Conditioning(#[from] CondError),
    #[error(transparent)]
    Data(#[from] DataError),
}
