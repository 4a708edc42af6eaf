use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use genb_core::dataio::{list_frames, read_frame};
use genb_core::evaluation::{fid_between, FidReport, ImageSet};
use genb_core::backend::DenoiserBackend;
use image::{imageops, Rgb, RgbImage};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct ValidationIssue {
    pub frame: String,
    pub error: String,
}

#[derive(Debug, Serialize)]
pub struct ValidationReport {
    pub root: PathBuf,
    pub frames: usize,
    pub valid: usize,
    pub issues: Vec<ValidationIssue>,
}

/// Reads every frame under `root` through the full set of record checks.
pub fn cmd_validate(root: &Path) -> anyhow::Result<ValidationReport> {
    let ids = list_frames(root)?;
    if ids.is_empty() {
        bail!("no frames under {}", root.display());
    }
    let issues: Vec<ValidationIssue> = ids
        .iter()
        .filter_map(|id| {
            read_frame(root, id).err().map(|e| ValidationIssue {
                frame: id.clone(),
                error: e.to_string(),
            })
        })
        .collect();
    Ok(ValidationReport {
        root: root.to_path_buf(),
        frames: ids.len(),
        valid: ids.len() - issues.len(),
        issues,
    })
}

pub struct FidOptions {
    pub a: ImageSet,
    pub b: ImageSet,
    pub crop_size: u32,
    pub cache_dir: Option<PathBuf>,
}

pub fn cmd_fid(opts: &FidOptions, backend: &dyn DenoiserBackend) -> anyhow::Result<FidReport> {
    if let Some(d) = &opts.cache_dir {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    Ok(fid_between(&opts.a, &opts.b, backend, opts.crop_size, opts.cache_dir.as_deref())?)
}

const SHEET_PAD: u32 = 8;
const SHEET_BG: Rgb<u8> = Rgb([24, 24, 24]);

fn load_rgb(path: &Path) -> anyhow::Result<RgbImage> {
    Ok(image::open(path)
        .with_context(|| format!("reading {}", path.display()))?
        .to_rgb8())
}

fn thumbnail(img: &RgbImage, width: u32) -> RgbImage {
    let height = ((img.height() as u64 * width as u64) / img.width().max(1) as u64).max(1) as u32;
    imageops::resize(img, width, height, imageops::FilterType::Triangle)
}

/// One row per frame: the input `rgb.png` beside the output's `gen_rgb.png`
/// (or its `rgb.png` when nothing was generated). Frame sets must match.
pub fn cmd_contact_sheet(before: &Path, after: &Path, out: &Path, thumb_width: u32) -> anyhow::Result<usize> {
    if thumb_width == 0 {
        bail!("thumbnail width must be positive");
    }
    let a: BTreeSet<String> = list_frames(before)?.into_iter().collect();
    let b: BTreeSet<String> = list_frames(after)?.into_iter().collect();
    if a != b {
        let only_a: Vec<_> = a.difference(&b).collect();
        let only_b: Vec<_> = b.difference(&a).collect();
        if a.is_disjoint(&b) {
            bail!("no frames in common (before: {}, after: {})", a.len(), b.len());
        }
        bail!("frame ids differ: only before {only_a:?}, only after {only_b:?}");
    }
    if a.is_empty() {
        bail!("no frames in {} or {}", before.display(), after.display());
    }
    let mut rows = Vec::with_capacity(a.len());
    for id in &a {
        let src = load_rgb(&before.join(id).join("rgb.png"))?;
        let gen_path = after.join(id).join("gen_rgb.png");
        let gen = if gen_path.is_file() {
            load_rgb(&gen_path)?
        } else {
            load_rgb(&after.join(id).join("rgb.png"))?
        };
        rows.push((thumbnail(&src, thumb_width), thumbnail(&gen, thumb_width)));
    }
    let width = 2 * thumb_width + 3 * SHEET_PAD;
    let height = rows.iter().map(|(l, r)| l.height().max(r.height()) + SHEET_PAD).sum::<u32>() + SHEET_PAD;
    let mut sheet = RgbImage::from_pixel(width, height, SHEET_BG);
    let mut y = SHEET_PAD;
    for (l, r) in &rows {
        imageops::replace(&mut sheet, l, SHEET_PAD as i64, y as i64);
        imageops::replace(&mut sheet, r, (2 * SHEET_PAD + thumb_width) as i64, y as i64);
        y += l.height().max(r.height()) + SHEET_PAD;
    }
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).ok();
    }
    sheet.save(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(rows.len())
}
