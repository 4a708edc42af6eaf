//! Control images derived from ground-truth depth and joints: normalized
//! depth, surface normals, Canny edges on depth, and a rendered skeleton.

mod canny;
mod crop;
mod depth;
mod pose;

use std::path::Path;

use image::RgbImage;

pub use canny::{canny_on_depth, direction_offset, gaussian_kernel, gradients, CannyParams};
pub use crop::{compute_crop, crop_camera, MODEL_SIZE};
pub use depth::{
    decode_normal, encode_normal, normalize_depth, normals_from_depth, valid_depth_mask,
    UNDEFINED_NORMAL,
};
pub use pose::{
    face_footprint, openpose_keypoints, render_pose_image, FACE_KEYPOINTS, FACE_PIXEL_THRESHOLD,
    KEYPOINT_COLORS, LIMBS, SMPLX_TO_OPENPOSE,
};

use crate::bodygeom::Joints2D;
use crate::dataio::{encode_png_luma, encode_png_rgb, write_atomic, CameraModel, DataError};
use crate::raster::{CropWindow, FloatRaster, Mask};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CondError {
    #[error("target mask is empty")]
    EmptyMask,
}

/// The four control images for one crop, all `window.size` square.
#[derive(Clone, Debug)]
pub struct ConditioningSet {
    pub window: CropWindow,
    pub depth_norm: FloatRaster,
    pub normals: RgbImage,
    pub edges: Mask,
    pub pose: RgbImage,
}

impl ConditioningSet {
    /// Derives every control image for `window` from frame-resolution depth
    /// and projected joints. Depth is normalized per crop over valid pixels.
    pub fn build(
        depth: &FloatRaster,
        camera: &CameraModel,
        joints: &Joints2D,
        face_pixel_count: usize,
        window: CropWindow,
        canny: &CannyParams,
    ) -> Self {
        let crop_depth = depth.crop_resample(&window);
        let valid = valid_depth_mask(&crop_depth);
        let depth_norm = normalize_depth(&crop_depth, &valid);
        let normals = normals_from_depth(&crop_depth, &crop_camera(camera, &window), &valid);
        let edges = canny_on_depth(&depth_norm, canny);
        let pose = render_pose_image(joints, face_pixel_count, &window);
        Self {
            window,
            depth_norm,
            normals,
            edges,
            pose,
        }
    }

    pub fn depth_luma(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.window.size, self.window.size, |x, y| {
            image::Luma([(self.depth_norm.get(x, y) * 255.0).round().clamp(0.0, 255.0) as u8])
        })
    }

    /// Writes `depth.png`, `normals.png`, `edges.png` and `pose.png` into `dir`.
    pub fn dump(&self, dir: &Path) -> Result<(), DataError> {
        write_atomic(&dir.join("depth.png"), &encode_png_luma(&self.depth_luma()))?;
        write_atomic(&dir.join("normals.png"), &encode_png_rgb(&self.normals))?;
        write_atomic(&dir.join("edges.png"), &encode_png_luma(&self.edges.to_luma()))?;
        write_atomic(&dir.join("pose.png"), &encode_png_rgb(&self.pose))?;
        Ok(())
    }
}
