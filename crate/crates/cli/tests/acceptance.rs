//! Acceptance suite. Runs every criterion in sequence, prints one
//! `PASS`/`FAIL` line each, and exits non-zero if any failed.
//!
//! Run with `cargo test -p genb-cli --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use genb_core::backend::{
    sd_scaled_linear_schedule, CountingBackend, DenoiserBackend, MockBackend, MockMode,
};
use genb_core::bodygeom::{backproject, project};
use genb_core::conditioning::{canny_on_depth, crop_camera, decode_normal, normals_from_depth, valid_depth_mask, CannyParams};
use genb_core::dataio::{frame_passthrough_files, read_frame, CameraModel, PartStatus};
use genb_core::evaluation::{frechet_distance, gaussian_stats, FidStats};
use genb_core::fixture::{dataset_frame, gate_frame, two_person_frame, write_dataset};
use genb_core::raster::{CropWindow, FloatRaster, Mask};
use genb_core::synthesis::{
    denoise_masked, downsample_mask, forward_noise, forward_noise_fresh, gaussian_like,
    part_eligibility, process_frame, process_frame_observed, strength_to_start, GenerationConfig,
    LatentMask, LatentTensor, PersonMasks, ProcessPart, RunContext, StepContext,
};
use image::{Rgb, RgbImage};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

const GENB: &str = env!("CARGO_BIN_EXE_genb");
const FIXTURE_FRAMES: usize = 5;

fn main() {
    let scratch = tempfile::tempdir().expect("scratch dir");
    let mut ctx = Shared::new(scratch.path().to_path_buf());
    let criteria: Vec<(&str, fn(&mut Shared) -> Result<String>)> = vec![
        ("ground-truth invariance", gt_invariance),
        ("outside-mask invariance", outside_mask_invariance),
        ("compositing closed form", compositing_closed_form),
        ("noise mapping", noise_mapping),
        ("eligibility gates", eligibility_gates),
        ("FID oracle suite", fid_oracles),
        ("forward_noise statistics", forward_noise_statistics),
        ("conditioning oracles", conditioning_oracles),
        ("determinism and parallel safety", determinism_and_parallel_safety),
        ("ablation presets", ablation_presets),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t0 = Instant::now();
        let outcome = check(&mut ctx);
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.1} s): {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.1} s): {e:#}");
            }
        }
    }
    println!("acceptance: {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}

/// State reused across criteria: the fixture dataset and the reference run.
struct Shared {
    scratch: PathBuf,
    dataset: Option<PathBuf>,
    reference_run: Option<PathBuf>,
}

impl Shared {
    fn new(scratch: PathBuf) -> Self {
        Self { scratch, dataset: None, reference_run: None }
    }

    fn dataset(&mut self) -> Result<PathBuf> {
        if let Some(d) = &self.dataset {
            return Ok(d.clone());
        }
        let root = self.scratch.join("dataset");
        let ids = write_dataset(&root, FIXTURE_FRAMES)?;
        ensure!(ids.len() == FIXTURE_FRAMES);
        self.dataset = Some(root.clone());
        Ok(root)
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.scratch.join(name)
    }
}

fn genb(args: &[&str]) -> Command {
    let mut cmd = Command::new(GENB);
    cmd.args(args).stdout(Stdio::null()).stderr(Stdio::null()).env_remove("GENB_BACKEND_URL");
    cmd
}

fn run_genb(args: &[&str]) -> Result<ExitStatus> {
    genb(args).status().with_context(|| format!("spawning genb {args:?}"))
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 scratch path")
}

fn sha256_of(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Every file under `root` by relative path, excluding the run manifest.
fn tree(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) -> Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root)?.to_path_buf();
                if rel != Path::new("run_manifest.json") {
                    out.insert(rel, std::fs::read(&path)?);
                }
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out)?;
    Ok(out)
}

fn same_tree(a: &Path, b: &Path) -> Result<usize> {
    let (ta, tb) = (tree(a)?, tree(b)?);
    let ka: BTreeSet<_> = ta.keys().collect();
    let kb: BTreeSet<_> = tb.keys().collect();
    ensure!(ka == kb, "file sets differ: {:?}", ka.symmetric_difference(&kb).collect::<Vec<_>>());
    for (k, v) in &ta {
        ensure!(tb[k] == *v, "{} differs", k.display());
    }
    Ok(ta.len())
}

fn gt_invariance(ctx: &mut Shared) -> Result<String> {
    let root = ctx.dataset()?;
    let out = ctx.dir("run_w1");
    let t0 = Instant::now();
    let status = run_genb(&["generate", path_str(&root), path_str(&out), "--mock", "--workers", "1"])?;
    let secs = t0.elapsed().as_secs_f64();
    ensure!(status.success(), "generate exited with {status}");
    ctx.reference_run = Some(out.clone());

    let mut checked = 0;
    for name in ["faces.u32", "faces.json"] {
        ensure!(sha256_of(&root.join(name))? == sha256_of(&out.join(name))?, "{name} changed");
        checked += 1;
    }
    for i in 0..FIXTURE_FRAMES {
        let id = format!("frame_{i:04}");
        let src = root.join(&id);
        let files = frame_passthrough_files(&src)?;
        ensure!(files.iter().any(|f| f.starts_with("persons")), "{id}: no person sidecars listed");
        for rel in files {
            let (a, b) = (sha256_of(&src.join(&rel))?, sha256_of(&out.join(&id).join(&rel))?);
            ensure!(a == b, "{id}/{}: {a} != {b}", rel.display());
            checked += 1;
        }
        ensure!(out.join(&id).join("gen_rgb.png").is_file(), "{id}: no gen_rgb.png");
    }
    ensure!(secs < 10.0, "{FIXTURE_FRAMES}-frame run took {secs:.2} s (limit 10 s)");
    Ok(format!("{checked} sidecars identical, {FIXTURE_FRAMES} frames in {secs:.2} s"))
}

/// `changed` lies within the square dilation of radius 3 around `mask`.
fn changes_within_dilation(mask: &Mask, before: &RgbImage, after: &RgbImage) -> Result<usize> {
    let (w, h) = before.dimensions();
    let mut changed = 0;
    for (x, y, p) in after.enumerate_pixels() {
        if p == before.get_pixel(x, y) {
            continue;
        }
        changed += 1;
        let near = (y.saturating_sub(3)..=(y + 3).min(h - 1))
            .any(|yy| (x.saturating_sub(3)..=(x + 3).min(w - 1)).any(|xx| mask.get(xx, yy)));
        ensure!(near, "pixel ({x}, {y}) changed outside the dilated mask");
    }
    Ok(changed)
}

fn outside_mask_invariance(_: &mut Shared) -> Result<String> {
    let backend = MockBackend::default();
    let run = RunContext::negotiate(&GenerationConfig::default(), &backend)?;
    let frames: Vec<_> = (0..FIXTURE_FRAMES)
        .map(dataset_frame)
        .chain([two_person_frame("two_person")])
        .collect();
    let (mut parts, mut changed) = (0usize, 0usize);
    let mut errors = Vec::new();
    for frame in &frames {
        let out = process_frame_observed(frame, &run, &backend, None, &mut |o| {
            parts += 1;
            match changes_within_dilation(o.mask, o.before, o.after) {
                Ok(n) => changed += n,
                Err(e) => errors.push(format!("{} person {} {}: {e}", frame.frame_id, o.person_id, o.part.as_str())),
            }
        })?;
        let failed = out.provenance.parts.iter().filter(|p| p.status == PartStatus::Failed).count();
        ensure!(failed == 0, "{}: {failed} parts failed", frame.frame_id);
    }
    ensure!(errors.is_empty(), "{}", errors.join("; "));
    ensure!(parts > 0 && changed > 0, "nothing was generated");
    Ok(format!("{parts} parts, {changed} changed pixels, none outside their dilated masks"))
}

fn random_image(seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(512, 512, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

fn compositing_closed_form(_: &mut Shared) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape = MockBackend::latent_shape();
    let target = gaussian_like(shape, &mut rng);
    let backend = MockBackend::new(MockMode::Target(target.clone()));
    let schedule = sd_scaled_linear_schedule(40)?;
    let embed_id = backend.text_embed("a person", "")?;
    let step_ctx = StepContext {
        schedule: &schedule,
        embed_id: &embed_id,
        controls: Arc::from(Vec::new()),
        guidance_scale: 7.5,
    };
    let crop = random_image(12);
    let x0 = backend.encode(&crop)?;
    let ellipse = Mask::from_fn(512, 512, |x, y| {
        let (dx, dy) = ((x as f64 - 230.0) / 140.0, (y as f64 - 290.0) / 90.0);
        dx * dx + dy * dy <= 1.0
    });
    let m = downsample_mask(&ellipse, 8)?;
    ensure!(m.count() > 0 && m.count() < m.data.len());

    let mut worst = 0.0f32;
    for strength in [0.35, 0.5, 1.0] {
        let k = strength_to_start(strength, 40)?;
        let x = denoise_masked(&backend, &x0, &m, k, &step_ctx, &mut rng)?;
        ensure!(x.shape() == shape);
        let plane = shape[1] * shape[2];
        for (i, &v) in x.data.iter().enumerate() {
            let cell = i % plane;
            let inside = m.get(cell % shape[2], cell / shape[2]);
            let expected = if inside { target.data[i] } else { x0.data[i] };
            worst = worst.max((v - expected).abs());
        }
    }
    ensure!(worst <= 1e-6, "max deviation {worst:e} > 1e-6");

    let empty = LatentMask::filled(shape[1], shape[2], false);
    let x = denoise_masked(&backend, &x0, &empty, 14, &step_ctx, &mut rng)?;
    ensure!(backend.decode(&x)? == crop, "m = 0 did not reproduce the crop");
    Ok(format!("max |x − (m⊙target + (1−m)⊙x0)| = {worst:e}; m = 0 decodes bit-exactly"))
}

fn noise_mapping(_: &mut Shared) -> Result<String> {
    for (s, k) in [(0.3, 12), (0.35, 14), (0.5, 20), (0.7, 28), (0.9, 36)] {
        let got = strength_to_start(s, 40)?;
        ensure!(got == k, "strength {s}: k = {got}, expected {k}");
    }
    let cfg = GenerationConfig::default();
    ensure!(cfg.steps == 40, "default steps {}", cfg.steps);
    let expected = [(ProcessPart::Head, 0.35), (ProcessPart::Hair, 0.35), (ProcessPart::Body, 0.35), (ProcessPart::Feet, 0.5)];
    for (part, s) in expected {
        ensure!(cfg.strengths.get(part) == s, "default {} strength {}", part.as_str(), cfg.strengths.get(part));
    }
    Ok("{0.3, 0.35, 0.5, 0.7, 0.9} -> {12, 14, 20, 28, 36}; defaults head/hair/body 0.35, feet 0.5".into())
}

fn eligibility_gates(_: &mut Shared) -> Result<String> {
    use ProcessPart::*;
    let cfg = GenerationConfig::default();
    let mut lines = Vec::new();
    for (vis, face, expected) in [
        (79, 100, vec![]),
        (79, 99, vec![]),
        (81, 100, vec![Head, Hair, Body, Feet]),
        (81, 99, vec![Body, Feet]),
    ] {
        let frame = gate_frame(&format!("gate_{vis}_{face}"), vis, face);
        let person = &frame.persons[0];
        let elig = part_eligibility(&PersonMasks::compute(&frame, person)?);
        ensure!(
            (elig.visibility > 0.8) == (vis > 80) && (elig.face_pixels >= 100) == (face >= 100),
            "fixture measured visibility {} and {} face pixels",
            elig.visibility,
            elig.face_pixels
        );
        let backend = CountingBackend::new(MockBackend::default());
        let run = RunContext::negotiate(&cfg, &backend)?;
        backend.reset();
        let out = process_frame(&frame, &run, &backend, None)?;
        let c = backend.counts();
        let steps: usize = expected
            .iter()
            .map(|&p| strength_to_start(cfg.strengths.get(p), cfg.steps))
            .sum::<Result<_, _>>()?;
        let n = expected.len();
        ensure!(
            (c.text_embed, c.encode, c.decode, c.denoise) == (n, n, n, steps),
            "visibility {vis}% face {face}: calls embed/encode/decode/denoise = {}/{}/{}/{}, expected {n}/{n}/{n}/{steps}",
            c.text_embed, c.encode, c.decode, c.denoise
        );
        let done: Vec<String> = out
            .provenance
            .parts
            .iter()
            .filter(|p| p.status == PartStatus::Done)
            .map(|p| p.part.clone())
            .collect();
        let want: Vec<String> = expected.iter().map(|p| p.as_str().to_string()).collect();
        ensure!(done == want, "visibility {vis}% face {face}: processed {done:?}, expected {want:?}");
        lines.push(format!("{:.4}/{}px -> {} parts, {steps} steps", elig.visibility, elig.face_pixels, n));
    }
    Ok(lines.join("; "))
}

fn random_features(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Correlated features: a random mixing of independent normals plus an offset.
    let mix: Vec<f32> = (0..d).map(|_| rng.random_range(0.2..1.5)).collect();
    (0..n)
        .map(|_| {
            let z: Vec<f32> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            (0..d).map(|j| mix[j] * z[j] + 0.3 * z[(j + 1) % d] + 0.1 * j as f32 / d as f32).collect()
        })
        .collect()
}

fn two_pass(features: &[Vec<f32>]) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (features.len(), features[0].len());
    let mut mean = vec![0.0; d];
    for row in features {
        for j in 0..d {
            mean[j] += row[j] as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for row in features {
        for r in 0..d {
            let dr = row[r] as f64 - mean[r];
            for c in 0..d {
                cov[r * d + c] += dr * (row[c] as f64 - mean[c]);
            }
        }
    }
    cov.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    (mean, cov)
}

fn diag_stats(mu: &[f64], var: &[f64]) -> FidStats {
    FidStats {
        n: 100,
        mu: DVector::from_column_slice(mu),
        sigma: DMatrix::from_diagonal(&DVector::from_column_slice(var)),
    }
}

fn timed_fid(n: usize, d: usize) -> Result<(f64, f64)> {
    let (a, b) = (random_features(n, d, 1), random_features(n, d, 2));
    let t0 = Instant::now();
    let fid = frechet_distance(&gaussian_stats(&a)?, &gaussian_stats(&b)?)?.fid;
    Ok((fid, t0.elapsed().as_secs_f64()))
}

fn fid_oracles(_: &mut Shared) -> Result<String> {
    let a = random_features(600, 64, 3);
    let b = random_features(600, 64, 4);
    let (sa, sb) = (gaussian_stats(&a)?, gaussian_stats(&b)?);

    let identity = frechet_distance(&sa, &sa)?.fid;
    ensure!(identity <= 1e-6, "FID(X, X) = {identity:e}");
    let (ab, ba) = (frechet_distance(&sa, &sb)?.fid, frechet_distance(&sb, &sa)?.fid);
    ensure!((ab - ba).abs() <= 1e-6, "FID(A, B) = {ab}, FID(B, A) = {ba}");
    ensure!(ab > 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_closed = 0.0f64;
    for _ in 0..50 {
        let (m1, m2) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let (v1, v2): (f64, f64) = (rng.random_range(0.01..9.0), rng.random_range(0.01..9.0));
        let got = frechet_distance(&diag_stats(&[m1], &[v1]), &diag_stats(&[m2], &[v2]))?.fid;
        let want = (m1 - m2).powi(2) + v1 + v2 - 2.0 * (v1 * v2).sqrt();
        worst_closed = worst_closed.max((got - want).abs());
    }
    for _ in 0..20 {
        let d = 16;
        let mu1: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mu2: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v1: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..4.0)).collect();
        let v2: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..4.0)).collect();
        let got = frechet_distance(&diag_stats(&mu1, &v1), &diag_stats(&mu2, &v2))?.fid;
        let want: f64 = (0..d)
            .map(|j| (mu1[j] - mu2[j]).powi(2) + (v1[j].sqrt() - v2[j].sqrt()).powi(2))
            .sum();
        worst_closed = worst_closed.max((got - want).abs());
    }
    ensure!(worst_closed <= 1e-8, "closed-form deviation {worst_closed:e} > 1e-8");

    let (mean, cov) = two_pass(&a);
    let d = 64;
    let mut worst_cov = 0.0f64;
    for r in 0..d {
        worst_cov = worst_cov.max((sa.mu[r] - mean[r]).abs());
        for c in 0..d {
            worst_cov = worst_cov.max((sa.sigma[(r, c)] - cov[r * d + c]).abs());
        }
    }
    ensure!(worst_cov <= 1e-10, "covariance deviation {worst_cov:e} > 1e-10");

    let (_, t64) = timed_fid(2000, 64)?;
    ensure!(t64 < 5.0, "d = 64 took {t64:.2} s");
    let (fid_big, t2048) = timed_fid(2500, 2048)?;
    ensure!(fid_big.is_finite() && fid_big > 0.0, "d = 2048 FID {fid_big}");
    ensure!(t2048 < 60.0, "d = 2048 took {t2048:.2} s");
    Ok(format!(
        "identity {identity:.1e}, asymmetry {:.1e}, closed forms {worst_closed:.1e}, covariance {worst_cov:.1e}, d=64 {t64:.2} s, d=2048 {t2048:.1} s",
        (ab - ba).abs()
    ))
}

fn forward_noise_statistics(_: &mut Shared) -> Result<String> {
    let n = 100_000;
    let shape = [1, 250, 400];
    let mut worst = 0.0f64;
    for (seed, (alpha_bar, x)) in [(0.05, 0.7f32), (0.5, -0.4), (0.9, 1.2), (0.999, 0.0)].into_iter().enumerate() {
        let x0 = LatentTensor::from_vec(shape, vec![x; n])?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let eps = gaussian_like(shape, &mut rng);
        for (label, y) in [
            ("materialized", forward_noise(&x0, alpha_bar, &eps)?),
            ("fused", forward_noise_fresh(&x0, alpha_bar, &mut rng)),
        ] {
            let mean = y.data.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var = y.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let (mu, sd) = (alpha_bar.sqrt() * x as f64, (1.0 - alpha_bar).sqrt());
            let mean_z = (mean - mu) / (sd / (n as f64).sqrt());
            let sd_z = (var.sqrt() - sd) / (sd / (2.0 * n as f64).sqrt());
            ensure!(mean_z.abs() <= 3.0, "{label} ᾱ={alpha_bar}: mean {mean} vs {mu} ({mean_z:.2}σ)");
            ensure!(sd_z.abs() <= 3.0, "{label} ᾱ={alpha_bar}: std {} vs {sd} ({sd_z:.2}σ)", var.sqrt());
            worst = worst.max(mean_z.abs()).max(sd_z.abs());
        }
    }
    Ok(format!("8 mean/std pairs over 10^5 samples, worst {worst:.2}σ"))
}

fn plane_normal_error() -> Result<f64> {
    let cam = CameraModel { fx: 600.0, fy: 600.0, cx: 512.0, cy: 384.0 };
    let win = CropWindow { x0: 300, y0: 200, side: 256, size: 512 };
    let crop_cam = crop_camera(&cam, &win);
    let mut worst = 0.0f64;
    for (tx, ty) in [(0.0, 0.0), (0.5, 0.0), (0.0, -0.6), (0.7, 0.7), (-0.9, 0.3), (1.5, -0.2)] {
        for dist in [1.5, 4.0] {
            let len = (tx * tx + ty * ty + 1.0f64).sqrt();
            let n = [tx / len, ty / len, -1.0 / len];
            // Plane n·P = -dist; along the ray through a pixel center,
            // z = -dist / (n·(s, t, 1)).
            let depth = FloatRaster::from_fn(512, 512, |x, y| {
                let s = (x as f64 + 0.5 - crop_cam.cx) / crop_cam.fx;
                let t = (y as f64 + 0.5 - crop_cam.cy) / crop_cam.fy;
                (-dist / (n[0] * s + n[1] * t + n[2])) as f32
            });
            ensure!(depth.as_slice().iter().all(|&z| z > 0.0), "plane behind camera");
            let img = normals_from_depth(&depth, &crop_cam, &valid_depth_mask(&depth));
            for p in img.pixels() {
                let g = decode_normal(*p);
                let gl = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                let cos = (g[0] * n[0] + g[1] * n[1] + g[2] * n[2]) / gl;
                worst = worst.max(cos.clamp(-1.0, 1.0).acos().to_degrees());
            }
        }
    }
    Ok(worst)
}

/// Straightforward Canny: direct 2-D Gaussian, Sobel/8, slope-ratio
/// direction bins, and hysteresis by repeated growth to a fixed point.
fn reference_canny(img: &FloatRaster, p: &CannyParams) -> Mask {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let clamp_at = |v: &dyn Fn(i64, i64) -> f64, x: i64, y: i64| v(x.clamp(0, w - 1), y.clamp(0, h - 1));
    let r = ((1.5 * p.sigma).round() as i64).max(1);
    let g1: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * p.sigma * p.sigma)).exp()).collect();
    let total: f64 = g1.iter().sum();
    let src = |x: i64, y: i64| img.get(x as u32, y as u32) as f64;
    let mut blurred = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for j in -r..=r {
                let mut row = 0.0;
                for i in -r..=r {
                    row += g1[(i + r) as usize] / total * clamp_at(&src, x + i, y + j);
                }
                acc += g1[(j + r) as usize] / total * row;
            }
            blurred[(y * w + x) as usize] = acc;
        }
    }
    let b = |x: i64, y: i64| blurred[(y * w + x) as usize];
    let mut gx = vec![0.0; (w * h) as usize];
    let mut gy = gx.clone();
    let mut mag = gx.clone();
    for y in 0..h {
        for x in 0..w {
            let q = |dx: i64, dy: i64| clamp_at(&b, x + dx, y + dy);
            let sx = q(1, -1) + 2.0 * q(1, 0) + q(1, 1) - q(-1, -1) - 2.0 * q(-1, 0) - q(-1, 1);
            let sy = q(-1, 1) + 2.0 * q(0, 1) + q(1, 1) - q(-1, -1) - 2.0 * q(0, -1) - q(1, -1);
            let i = (y * w + x) as usize;
            gx[i] = sx / 8.0;
            gy[i] = sy / 8.0;
            mag[i] = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
        }
    }
    let (t1, t3) = (22.5f64.to_radians().tan(), 67.5f64.to_radians().tan());
    let m_at = |x: i64, y: i64| if x < 0 || y < 0 || x >= w || y >= h { 0.0 } else { mag[(y * w + x) as usize] };
    let mut thin = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let (ax, ay) = (gx[i].abs(), gy[i].abs());
            let (dx, dy) = if ay < t1 * ax || ay == 0.0 {
                (1, 0)
            } else if ay >= t3 * ax {
                (0, 1)
            } else if (gx[i] > 0.0) == (gy[i] > 0.0) {
                (1, 1)
            } else {
                (-1, 1)
            };
            let g = mag[i];
            if g > m_at(x - dx, y - dy) + 1e-9 && g >= m_at(x + dx, y + dy) - 1e-9 {
                thin[i] = g;
            }
        }
    }
    let mut edges: Vec<bool> = thin.iter().map(|&t| t >= p.high).collect();
    loop {
        let mut grew = false;
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) as usize;
                if edges[i] || thin[i] < p.low {
                    continue;
                }
                let touches = (-1..=1).any(|dy| {
                    (-1..=1).any(|dx| {
                        let (nx, ny) = (x + dx, y + dy);
                        nx >= 0 && ny >= 0 && nx < w && ny < h && edges[(ny * w + nx) as usize]
                    })
                });
                if touches {
                    edges[i] = true;
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
    }
    Mask::from_fn(w as u32, h as u32, |x, y| edges[(y as i64 * w + x as i64) as usize])
}

fn canny_images() -> Vec<(&'static str, FloatRaster)> {
    let (w, h) = (64, 48);
    let f = |g: fn(f64, f64) -> f64| FloatRaster::from_fn(w, h, move |x, y| g(x as f64, y as f64) as f32);
    vec![
        ("vertical step", f(|x, _| if x < 30.0 { 0.2 } else { 0.7 })),
        ("horizontal step", f(|_, y| if y < 17.0 { 0.9 } else { 0.35 })),
        ("diagonal step", f(|x, y| if x + y < 50.0 { 0.1 } else { 0.6 })),
        ("double step", f(|x, _| if x < 15.0 { 0.0 } else if x < 40.0 { 0.3 } else { 1.0 })),
        ("shallow ramp", f(|x, _| 0.02 * x)),
        ("steep clipped ramp", f(|x, _| (0.15 * (x - 25.0)).clamp(0.1, 0.8))),
        ("weak ramp", f(|x, y| 0.013 * (x + 2.0 * y))),
        ("disk", f(|x, y| if (x - 30.0).powi(2) + (y - 22.0).powi(2) < 150.0 { 0.25 } else { 0.75 })),
        ("step on ramp", f(|x, y| 0.01 * y + if x < 33.0 { 0.0 } else { 0.4 })),
    ]
}

fn conditioning_oracles(_: &mut Shared) -> Result<String> {
    let normal_err = plane_normal_error()?;
    ensure!(normal_err < 1.0, "plane normal error {normal_err:.3}°");

    let p = CannyParams::default();
    let mut edge_pixels = 0;
    let images = canny_images();
    for (name, img) in &images {
        let got = canny_on_depth(img, &p);
        let want = reference_canny(img, &p);
        if got != want {
            let diff = (0..img.height())
                .flat_map(|y| (0..img.width()).map(move |x| (x, y)))
                .filter(|&(x, y)| got.get(x, y) != want.get(x, y))
                .count();
            bail!("{name}: {diff} pixels differ from the reference");
        }
        edge_pixels += got.count();
    }
    ensure!(edge_pixels > 0, "no edges on any test image");

    let cam = CameraModel { fx: 1100.0, fy: 1050.0, cx: 640.5, cy: 359.25 };
    let win = CropWindow { x0: 211, y0: 97, side: 300, size: 512 };
    let crop_cam = crop_camera(&cam, &win);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_px = 0.0f64;
    for _ in 0..10_000 {
        let uv = [rng.random_range(-50.0..1330.0), rng.random_range(-50.0..770.0)];
        let z = rng.random_range(0.3..80.0);
        let back = project(backproject(uv, z, &cam), &cam);
        worst_px = worst_px.max((back[0] - uv[0]).abs()).max((back[1] - uv[1]).abs());
        let pt = backproject(uv, z, &cam);
        let in_crop = project(pt, &crop_cam);
        let mapped = win.frame_to_model(uv[0], uv[1]);
        worst_px = worst_px.max((in_crop[0] - mapped.0).abs()).max((in_crop[1] - mapped.1).abs());
    }
    ensure!(worst_px < 1e-6, "projection round trip error {worst_px:e} px");
    Ok(format!(
        "plane normals max {normal_err:.3}°, Canny matches reference on {} images ({edge_pixels} edge px), projection max {worst_px:.1e} px",
        images.len()
    ))
}

fn determinism_and_parallel_safety(ctx: &mut Shared) -> Result<String> {
    let root = ctx.dataset()?;
    let reference = match &ctx.reference_run {
        Some(r) => r.clone(),
        None => {
            let out = ctx.dir("run_w1");
            ensure!(run_genb(&["generate", path_str(&root), path_str(&out), "--mock", "--workers", "1"])?.success());
            out
        }
    };
    let w8 = ctx.dir("run_w8");
    ensure!(run_genb(&["generate", path_str(&root), path_str(&w8), "--mock", "--workers", "8"])?.success());
    let files = same_tree(&reference, &w8).context("workers 1 vs 8")?;

    let killed = ctx.dir("run_killed");
    let mut child = genb(&["generate", path_str(&root), path_str(&killed), "--mock", "--workers", "1"])
        .spawn()
        .context("spawning generate")?;
    let marker = killed.join("frame_0001").join("provenance.json");
    let deadline = Instant::now() + Duration::from_secs(120);
    while !marker.exists() {
        ensure!(Instant::now() < deadline, "no frame finished within 120 s");
        if let Some(status) = child.try_wait()? {
            bail!("run exited ({status}) before it could be interrupted");
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    child.kill()?;
    child.wait()?;
    let interrupted = (0..FIXTURE_FRAMES)
        .filter(|i| !killed.join(format!("frame_{i:04}")).join("provenance.json").exists())
        .count();
    ensure!(interrupted > 0, "every frame finished before the kill");
    ensure!(run_genb(&["generate", path_str(&root), path_str(&killed), "--mock", "--workers", "1", "--resume"])?.success());
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(killed.join("run_manifest.json"))?)?;
    let skipped = manifest["frames"]
        .as_array()
        .context("manifest frames")?
        .iter()
        .filter(|f| f["status"] == "skipped")
        .count();
    ensure!(skipped > 0, "resume regenerated every frame");
    same_tree(&reference, &killed).context("resumed vs uninterrupted")?;
    Ok(format!(
        "{files} files identical for workers 1 and 8; killed with {interrupted} frames left, resumed ({skipped} kept) to an identical tree"
    ))
}

fn ablation_presets(ctx: &mut Shared) -> Result<String> {
    let root = ctx.dataset()?;
    let all = ["depth", "edges", "normals", "pose"];
    let presets: [(&str, &[&str], f64); 11] = [
        ("single-edges", &["edges"], 0.5),
        ("single-depth", &["depth"], 0.5),
        ("single-normals", &["normals"], 0.5),
        ("single-pose", &["pose"], 0.5),
        ("cumulative-2", &["depth", "pose"], 0.5),
        ("cumulative-3", &["depth", "pose", "edges"], 0.5),
        ("cumulative-4", &all, 0.5),
        ("noise-0.3", &all, 0.3),
        ("noise-0.5", &all, 0.5),
        ("noise-0.7", &all, 0.7),
        ("noise-0.9", &all, 0.9),
    ];
    let frame = "frame_0002";
    let source = read_frame(&root, frame)?;
    let mut hashes = BTreeSet::new();
    for (name, controls, strength) in presets {
        let out = ctx.dir(&format!("preset_{name}"));
        let status = run_genb(&[
            "generate", path_str(&root), path_str(&out), "--mock", "--preset", name, "--frames", frame,
        ])?;
        ensure!(status.success(), "{name}: generate exited with {status}");
        let prov: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join(frame).join("provenance.json"))?)?;
        let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("run_manifest.json"))?)?;
        ensure!(prov["preset"] == name, "{name}: provenance preset {}", prov["preset"]);
        ensure!(manifest["config"]["preset"] == name, "{name}: manifest preset {}", manifest["config"]["preset"]);
        ensure!(prov["config_hash"] == manifest["config_hash"], "{name}: config hash mismatch");
        let weights: BTreeMap<String, f64> = serde_json::from_value(prov["control_weights"].clone())?;
        let want: BTreeMap<String, f64> = controls.iter().map(|c| (c.to_string(), 1.0)).collect();
        ensure!(weights == want, "{name}: control weights {weights:?}, expected {want:?}");
        let strengths: BTreeMap<String, f64> = serde_json::from_value(prov["strengths"].clone())?;
        let want: BTreeMap<String, f64> = ["body", "feet", "hair", "head"].iter().map(|p| (p.to_string(), strength)).collect();
        ensure!(strengths == want, "{name}: strengths {strengths:?}");
        ensure!(prov["steps"] == 40, "{name}: steps {}", prov["steps"]);
        let parts = prov["parts"].as_array().context("parts")?;
        ensure!(parts.len() == 4 * source.persons.len(), "{name}: {} part records", parts.len());
        for p in parts {
            ensure!(p["status"] == "done", "{name}: part {} {}", p["part"], p["status"]);
            let key = format!("{}/{}", p["person_id"], p["part"].as_str().unwrap_or_default());
            ensure!(prov["prompts"][&key].is_string(), "{name}: no prompt for {key}");
        }
        hashes.insert(prov["config_hash"].as_str().unwrap_or_default().to_string());
    }
    ensure!(hashes.len() == presets.len(), "config hashes collide across presets");
    Ok(format!("{} presets recorded with distinct config hashes", presets.len()))
}
