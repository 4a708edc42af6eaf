//! Per-part masked partial-noise inpainting and the frame driver.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::GenerationConfig;
use super::latent::{downsample_mask, LatentMask, LatentTensor, LATENT_FACTOR, MASK_DILATION_PX};
use super::prompt::{build_prompt, part_seed, ProcessPart};
use super::schedule::{forward_noise_fresh, strength_to_start, NoiseLevel, NoiseSchedule};
use super::SynthError;
use crate::backend::{BackendError, ControlInput, ControlKind, DenoiseRequest, DenoiserBackend, Tensor};
use crate::bodygeom::{project_points, rasterize_person, visibility_ratio, Joints2D, PartMaskSet};
use crate::conditioning::{compute_crop, CondError, ConditioningSet};
use crate::dataio::{
    encode_png_luma, write_atomic, BodyPart, FrameRecord, GenerationProvenance, PartRecord,
    PartStatus, PersonGT, SegMap,
};
use crate::raster::{CropWindow, Mask};

/// A person is processed only when strictly more than this fraction of its
/// silhouette is unoccluded.
pub const VISIBILITY_THRESHOLD: f64 = 0.8;

/// Head and hair need at least this many visible face pixels.
pub const MIN_FACE_PIXELS: usize = 100;

/// Everything the denoising loop needs besides the latents.
pub struct StepContext<'a> {
    pub schedule: &'a NoiseSchedule,
    pub embed_id: &'a str,
    pub controls: Arc<[ControlInput]>,
    pub guidance_scale: f64,
}

fn backend_err(step: Option<usize>) -> impl FnOnce(BackendError) -> SynthError {
    move |source| SynthError::Backend { step, source }
}

/// One reverse step with known-region merging. The known region is
/// re-noised to the level the backend denoised to, with fresh noise drawn
/// from `rng` for the unmasked elements only; after the last step it is
/// `x0` itself.
pub fn composited_step(
    backend: &dyn DenoiserBackend,
    x_t: &LatentTensor,
    x0: &LatentTensor,
    m: &LatentMask,
    step_index: usize,
    ctx: &StepContext<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<LatentTensor, SynthError> {
    let seed = rng.next_u64();
    let req = DenoiseRequest {
        latent: x_t.clone(),
        step_index,
        timestep: ctx.schedule.timesteps[step_index],
        schedule_id: ctx.schedule.schedule_id.clone(),
        embed_id: ctx.embed_id.to_string(),
        controls: ctx.controls.clone(),
        guidance_scale: ctx.guidance_scale,
        seed,
    };
    let mut x = backend.denoise(&req).map_err(backend_err(Some(step_index)))?;
    x0.ensure_same_shape(&x)?;
    if step_index + 1 == ctx.schedule.num_steps() {
        m.fill_unmasked(&mut x, |i| x0.data[i])?;
    } else {
        let level = NoiseLevel::new(ctx.schedule.alpha_bar_after(step_index));
        m.fill_unmasked(&mut x, |i| level.apply_fresh(x0.data[i], rng))?;
    }
    Ok(x)
}

/// Runs the last `k` steps of the schedule from `x0` noised to the level of
/// step `N − k`. `k = 0` returns `x0`.
pub fn denoise_masked(
    backend: &dyn DenoiserBackend,
    x0: &LatentTensor,
    m: &LatentMask,
    k: usize,
    ctx: &StepContext<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<LatentTensor, SynthError> {
    let n = ctx.schedule.num_steps();
    if k == 0 {
        return Ok(x0.clone());
    }
    let start = n - k.min(n);
    let mut x = forward_noise_fresh(x0, ctx.schedule.alpha_bars[start], rng);
    for i in start..n {
        x = composited_step(backend, &x, x0, m, i, ctx, rng)?;
    }
    Ok(x)
}

/// Settings for one part of one person.
#[derive(Clone, Debug, PartialEq)]
pub struct PartPlan {
    pub part: ProcessPart,
    pub strength: f64,
    pub prompt: String,
    pub negative_prompt: String,
    pub controls: Vec<(ControlKind, f64)>,
    pub guidance_scale: f64,
}

/// Control tensors for the enabled signals, in the plan's order.
pub fn control_inputs(cond: &ConditioningSet, controls: &[(ControlKind, f64)]) -> Vec<ControlInput> {
    let s = cond.window.size as usize;
    let rgb = |img: &RgbImage| img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    controls
        .iter()
        .map(|&(kind, weight)| {
            let data: Vec<f32> = match kind {
                ControlKind::Depth => cond.depth_norm.as_slice().to_vec(),
                ControlKind::Normals => rgb(&cond.normals),
                ControlKind::Edges => cond.edges.as_slice().iter().map(|&e| e as u8 as f32).collect(),
                ControlKind::Pose => rgb(&cond.pose),
            };
            ControlInput {
                kind,
                image: Tensor::new(vec![s, s, kind.channels()], data).expect("control sized to crop"),
                weight,
            }
        })
        .collect()
}

/// RNG driving latent noise for a part; independent of the prompt draws.
fn noise_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Regenerates the masked region of a model-resolution crop. Pixels
/// outside the dilated `pixel_mask` are returned unchanged.
pub fn inpaint_part(
    crop_rgb: &RgbImage,
    plan: &PartPlan,
    cond: &ConditioningSet,
    pixel_mask: &Mask,
    backend: &dyn DenoiserBackend,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<RgbImage, SynthError> {
    let k = strength_to_start(plan.strength, schedule.num_steps())?;
    if pixel_mask.is_empty() {
        return Err(CondError::EmptyMask.into());
    }
    let m = downsample_mask(pixel_mask, LATENT_FACTOR)?;
    let embed_id = backend
        .text_embed(&plan.prompt, &plan.negative_prompt)
        .map_err(backend_err(None))?;
    let ctx = StepContext {
        schedule,
        embed_id: &embed_id,
        controls: control_inputs(cond, &plan.controls).into(),
        guidance_scale: plan.guidance_scale,
    };
    let x0 = backend.encode(crop_rgb).map_err(backend_err(None))?;
    if (x0.height, x0.width) != (m.height, m.width) {
        return Err(SynthError::ShapeMismatch {
            expected: vec![m.height, m.width],
            found: vec![x0.height, x0.width],
        });
    }
    let x = denoise_masked(backend, &x0, &m, k, &ctx, &mut noise_rng(seed))?;
    let decoded = backend.decode(&x).map_err(backend_err(None))?;
    if decoded.dimensions() != crop_rgb.dimensions() {
        return Err(SynthError::ShapeMismatch {
            expected: vec![crop_rgb.height() as usize, crop_rgb.width() as usize],
            found: vec![decoded.height() as usize, decoded.width() as usize],
        });
    }
    let m_px = pixel_mask.dilate(MASK_DILATION_PX);
    let mut out = crop_rgb.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        if m_px.get(x, y) {
            *p = *decoded.get_pixel(x, y);
        }
    }
    Ok(out)
}

/// Frame-resolution masks of one person.
#[derive(Clone, Debug)]
pub struct PersonMasks {
    pub geometry: PartMaskSet,
    parts: [Mask; 4],
}

impl PersonMasks {
    /// Head is the rendered face, hair the rendered scalp, feet the rendered
    /// feet. Body is the simulated-cloth segmentation, plus the rendered
    /// body region when the person wears skin-texture clothing.
    pub fn new(geometry: PartMaskSet, seg: &SegMap, person: &PersonGT) -> Self {
        let mut body = seg.cloth_mask(person.person_id);
        if person.cloth_skin_mask_present {
            body = body.union(geometry.part(BodyPart::Body));
        }
        let parts = [
            geometry.part(BodyPart::Face).clone(),
            geometry.part(BodyPart::Scalp).clone(),
            body,
            geometry.part(BodyPart::Feet).clone(),
        ];
        Self { geometry, parts }
    }

    pub fn compute(frame: &FrameRecord, person: &PersonGT) -> Result<Self, SynthError> {
        let geometry = rasterize_person(
            &person.vertices,
            &person.faces,
            &person.part_labels,
            &frame.camera,
            frame.dims(),
            Some(&frame.depth),
        )?;
        Ok(Self::new(geometry, &frame.seg, person))
    }

    pub fn part(&self, part: ProcessPart) -> &Mask {
        &self.parts[part as usize]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Eligibility {
    pub visibility: f64,
    pub face_pixels: usize,
    /// Parts to process, in processing order.
    pub parts: Vec<ProcessPart>,
    /// Why each excluded part was dropped.
    pub dropped: BTreeMap<ProcessPart, String>,
}

impl Eligibility {
    pub fn contains(&self, part: ProcessPart) -> bool {
        self.parts.contains(&part)
    }
}

pub fn part_eligibility(masks: &PersonMasks) -> Eligibility {
    let visibility = visibility_ratio(&masks.geometry).unwrap_or(0.0);
    let face_pixels = masks.geometry.face_pixel_count;
    let mut parts = Vec::new();
    let mut dropped = BTreeMap::new();
    for part in ProcessPart::ORDER {
        let reason = if visibility <= VISIBILITY_THRESHOLD {
            Some(format!("person visibility {visibility:.4} <= {VISIBILITY_THRESHOLD}"))
        } else if matches!(part, ProcessPart::Head | ProcessPart::Hair) && face_pixels < MIN_FACE_PIXELS {
            Some(format!("{face_pixels} face pixels < {MIN_FACE_PIXELS}"))
        } else if masks.part(part).is_empty() {
            Some("empty mask".to_string())
        } else {
            None
        };
        match reason {
            Some(r) => {
                dropped.insert(part, r);
            }
            None => parts.push(part),
        }
    }
    Eligibility {
        visibility,
        face_pixels,
        parts,
        dropped,
    }
}

/// Run-wide state shared by every frame.
pub struct RunContext {
    /// Effective configuration, presets applied.
    pub config: GenerationConfig,
    pub config_hash: String,
    pub schedule: NoiseSchedule,
    pub backend_id: String,
    pub schedule_description: String,
}

impl RunContext {
    /// Validates `config` and negotiates the schedule with `backend`.
    pub fn negotiate(config: &GenerationConfig, backend: &dyn DenoiserBackend) -> Result<Self, SynthError> {
        config.validate()?;
        let effective = config.effective();
        effective.validate()?;
        let info = backend.info().map_err(backend_err(None))?;
        for (k, _) in effective.controls.enabled() {
            if !info.controls.contains(&k) {
                return Err(SynthError::Backend {
                    step: None,
                    source: BackendError::rejected(
                        crate::backend::ErrorCode::UnsupportedControl,
                        format!("backend {} lacks the {} control", info.identity(), k.as_str()),
                    ),
                });
            }
        }
        let schedule = backend.schedule(effective.steps).map_err(backend_err(None))?;
        schedule.validate()?;
        if schedule.num_steps() != effective.steps {
            return Err(SynthError::InvalidSchedule(format!(
                "backend returned {} steps for {}",
                schedule.num_steps(),
                effective.steps
            )));
        }
        Ok(Self {
            config_hash: config.config_hash(),
            schedule_description: format!("{} [{}]", schedule.schedule_id, info.schedule),
            backend_id: info.identity(),
            config: effective,
            schedule,
        })
    }

    pub fn plan(&self, part: ProcessPart, prompt: String) -> PartPlan {
        PartPlan {
            part,
            strength: self.config.strengths.get(part),
            prompt,
            negative_prompt: self.config.negative_prompt.clone(),
            controls: self.config.controls.enabled(),
            guidance_scale: self.config.guidance,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FrameOutput {
    pub rgb: RgbImage,
    pub provenance: GenerationProvenance,
}

/// Prompt for one part; drawn from the part seed's primary stream.
pub fn part_prompt(part: ProcessPart, person: &PersonGT, seed: u64) -> String {
    build_prompt(part, &person.meta(), &mut ChaCha8Rng::seed_from_u64(seed))
}

#[allow(clippy::too_many_arguments)]
fn run_part(
    frame: &FrameRecord,
    current: &RgbImage,
    person: &PersonGT,
    masks: &PersonMasks,
    joints: &Joints2D,
    plan: &PartPlan,
    seed: u64,
    run: &RunContext,
    backend: &dyn DenoiserBackend,
    dump_dir: Option<&Path>,
) -> Result<RgbImage, SynthError> {
    let mask = masks.part(plan.part);
    let window: CropWindow = compute_crop(mask, frame.dims())?;
    let cond = ConditioningSet::build(
        &frame.depth,
        &frame.camera,
        joints,
        masks.geometry.face_pixel_count,
        window,
        &run.config.canny,
    );
    let model_mask = mask.crop_resample(&window);
    if let Some(dir) = dump_dir {
        let d = dir
            .join(&frame.frame_id)
            .join("cond")
            .join(person.person_id.to_string())
            .join(plan.part.as_str());
        cond.dump(&d)?;
        write_atomic(&d.join("mask.png"), &encode_png_luma(&model_mask.to_luma()))?;
    }
    let crop = window.extract_rgb(current);
    let generated = inpaint_part(&crop, plan, &cond, &model_mask, backend, &run.schedule, seed)?;
    let restored = window.restore_rgb(&generated);
    let paste = mask.dilate(MASK_DILATION_PX);
    let mut out = current.clone();
    for y in window.y0..window.y0 + window.side {
        for x in window.x0..window.x0 + window.side {
            if paste.get(x, y) {
                out.put_pixel(x, y, *restored.get_pixel(x - window.x0, y - window.y0));
            }
        }
    }
    Ok(out)
}

/// A successfully processed part, as seen by a [`process_frame_observed`]
/// callback.
pub struct PartOutcome<'a> {
    pub person_id: u32,
    pub part: ProcessPart,
    /// Frame-resolution part mask, before dilation.
    pub mask: &'a Mask,
    pub before: &'a RgbImage,
    pub after: &'a RgbImage,
}

/// Upgrades one frame: persons in ascending id, parts in [`ProcessPart::ORDER`],
/// each part starting from the previous part's output. A failing part keeps
/// its original pixels and is recorded as failed. `dump_dir` receives the
/// conditioning images under `<frame>/cond/<person>/<part>/`.
pub fn process_frame(
    frame: &FrameRecord,
    run: &RunContext,
    backend: &dyn DenoiserBackend,
    dump_dir: Option<&Path>,
) -> Result<FrameOutput, SynthError> {
    process_frame_observed(frame, run, backend, dump_dir, &mut |_| {})
}

/// [`process_frame`], calling `on_part` after every part that succeeded.
pub fn process_frame_observed(
    frame: &FrameRecord,
    run: &RunContext,
    backend: &dyn DenoiserBackend,
    dump_dir: Option<&Path>,
    on_part: &mut dyn FnMut(&PartOutcome<'_>),
) -> Result<FrameOutput, SynthError> {
    frame.validate()?;
    let mut rgb = frame.rgb.clone();
    let mut records = Vec::new();
    let mut prompts = BTreeMap::new();
    let mut persons: Vec<&PersonGT> = frame.persons.iter().collect();
    persons.sort_by_key(|p| p.person_id);
    for person in persons {
        let pid = person.person_id;
        let seeds = ProcessPart::ORDER.map(|p| part_seed(run.config.global_seed, &frame.frame_id, pid, p));
        let skip_all = |records: &mut Vec<PartRecord>, why: String| {
            for (part, seed) in ProcessPart::ORDER.iter().zip(seeds) {
                records.push(PartRecord {
                    person_id: pid,
                    part: part.as_str().into(),
                    status: PartStatus::Skipped,
                    seed,
                    detail: Some(why.clone()),
                });
            }
        };
        let masks = match PersonMasks::compute(frame, person) {
            Ok(m) => m,
            Err(e) => {
                skip_all(&mut records, e.to_string());
                continue;
            }
        };
        let elig = part_eligibility(&masks);
        let joints = project_points(&person.joints3d, &frame.camera, frame.dims());
        for (part, seed) in ProcessPart::ORDER.into_iter().zip(seeds) {
            let mut record = PartRecord {
                person_id: pid,
                part: part.as_str().into(),
                status: PartStatus::Skipped,
                seed,
                detail: elig.dropped.get(&part).cloned(),
            };
            if elig.contains(part) {
                let prompt = part_prompt(part, person, seed);
                prompts.insert(GenerationProvenance::prompt_key(pid, part.as_str()), prompt.clone());
                let plan = run.plan(part, prompt);
                match run_part(frame, &rgb, person, &masks, &joints, &plan, seed, run, backend, dump_dir) {
                    Ok(next) => {
                        on_part(&PartOutcome {
                            person_id: pid,
                            part,
                            mask: masks.part(part),
                            before: &rgb,
                            after: &next,
                        });
                        rgb = next;
                        record.status = PartStatus::Done;
                    }
                    Err(e) => {
                        log::warn!("frame {} person {pid} part {part} failed: {e}", frame.frame_id);
                        record.status = PartStatus::Failed;
                        record.detail = Some(e.to_string());
                    }
                }
            }
            records.push(record);
        }
    }
    let provenance = GenerationProvenance {
        global_seed: run.config.global_seed,
        preset: run.config.preset.to_string(),
        config_hash: run.config_hash.clone(),
        steps: run.config.steps,
        guidance: run.config.guidance,
        negative_prompt: run.config.negative_prompt.clone(),
        strengths: run.config.strengths.as_map(),
        control_weights: run.config.controls.as_map(),
        prompts,
        backend: run.backend_id.clone(),
        schedule: run.schedule_description.clone(),
        parts: records,
    };
    Ok(FrameOutput { rgb, provenance })
}
