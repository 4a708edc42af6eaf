//! Person-centered crops for feature extraction.

use std::path::{Path, PathBuf};

use image::{imageops, RgbImage};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataio::{list_frames, read_bytes, SegMap};
use crate::raster::Raster;

/// Default crop edge, matching the feature extractor's native input.
pub const DEFAULT_CROP_SIZE: u32 = 299;

/// Square crops span this multiple of the person's longer extent.
const CONTEXT_FACTOR: f64 = 1.2;

/// A set of images to compare.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageSet {
    /// A dataset root; person centers come from segmentation centroids.
    /// `gen_rgb.png` is used where present unless `source_only`.
    Synthetic { root: PathBuf, source_only: bool },
    /// A JSON manifest of images with person boxes.
    Manifest(PathBuf),
}

impl ImageSet {
    /// Directories are datasets, files are manifests.
    pub fn from_path(path: &Path) -> Self {
        if path.is_dir() {
            ImageSet::Synthetic {
                root: path.to_path_buf(),
                source_only: false,
            }
        } else {
            ImageSet::Manifest(path.to_path_buf())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    /// `[x, y, w, h]` per person, in pixels.
    pub boxes: Vec<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageManifest {
    pub images: Vec<ManifestEntry>,
}

fn load_png(path: &Path) -> Result<image::DynamicImage, EvalError> {
    let bytes = read_bytes(path)?;
    image::load_from_memory(&bytes).map_err(|e| EvalError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Square crop of `side` pixels centered on `center`, shifted to stay
/// inside the image, resized to `size × size`.
pub fn square_crop(img: &RgbImage, center: (f64, f64), side: f64, size: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let side = (side.ceil() as u32).clamp(1, w.min(h));
    let place = |c: f64, limit: u32| {
        let start = (c - side as f64 / 2.0).round();
        start.clamp(0.0, (limit - side) as f64) as u32
    };
    let (x0, y0) = (place(center.0, w), place(center.1, h));
    let view = imageops::crop_imm(img, x0, y0, side, side).to_image();
    if side == size {
        view
    } else {
        imageops::resize(&view, size, size, imageops::FilterType::Triangle)
    }
}

fn synthetic_crops(root: &Path, source_only: bool, size: u32) -> Result<Vec<RgbImage>, EvalError> {
    let mut out = Vec::new();
    for frame in list_frames(root)? {
        let dir = root.join(&frame);
        let gen = dir.join("gen_rgb.png");
        let rgb_path = if !source_only && gen.is_file() { gen } else { dir.join("rgb.png") };
        let rgb = load_png(&rgb_path)?.to_rgb8();
        let seg_img = load_png(&dir.join("seg.png"))?.to_luma8();
        let (sw, sh) = seg_img.dimensions();
        let seg = SegMap(Raster::from_vec(sw, sh, seg_img.into_raw()).expect("image buffer is w*h"));
        for pid in seg.referenced_persons() {
            let mask = seg.person_mask(pid);
            let (Some(c), Some(bb)) = (mask.centroid(), mask.bbox()) else { continue };
            let side = CONTEXT_FACTOR * bb.width().max(bb.height()) as f64;
            out.push(square_crop(&rgb, c, side, size));
        }
    }
    Ok(out)
}

fn manifest_crops(path: &Path, size: u32) -> Result<Vec<RgbImage>, EvalError> {
    let manifest: ImageManifest = serde_json::from_slice(&read_bytes(path)?).map_err(|e| EvalError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for entry in &manifest.images {
        let img = load_png(&base.join(&entry.path))?.to_rgb8();
        for &[x, y, w, h] in &entry.boxes {
            let center = (x + w / 2.0, y + h / 2.0);
            out.push(square_crop(&img, center, CONTEXT_FACTOR * w.max(h), size));
        }
    }
    Ok(out)
}

/// One `size × size` crop per person, in dataset order.
pub fn person_crops(set: &ImageSet, size: u32) -> Result<Vec<RgbImage>, EvalError> {
    let crops = match set {
        ImageSet::Synthetic { root, source_only } => synthetic_crops(root, *source_only, size)?,
        ImageSet::Manifest(path) => manifest_crops(path, size)?,
    };
    if crops.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    Ok(crops)
}
