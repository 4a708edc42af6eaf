use crate::dataio::CameraModel;
use crate::raster::{CropWindow, Mask};

use super::CondError;

/// Side length of the model's input square.
pub const MODEL_SIZE: u32 = 512;

/// Square window around `target`: side `max(512, ⌈1.2·max(w, h)⌉)` of the
/// mask bbox, centered on the mask centroid, shifted just enough to contain
/// the bbox, then clamped inside the frame. Frames smaller than the side cap
/// it at the shorter frame dimension.
pub fn compute_crop(target: &Mask, frame_size: (u32, u32)) -> Result<CropWindow, CondError> {
    let bbox = target.bbox().ok_or(CondError::EmptyMask)?;
    let (cx, cy) = target.centroid().ok_or(CondError::EmptyMask)?;
    let (fw, fh) = frame_size;
    let longest = bbox.width().max(bbox.height()) as u64;
    let side = ((6 * longest).div_ceil(5) as u32)
        .max(MODEL_SIZE)
        .min(fw.min(fh));

    let place = |center: f64, lo: u32, hi: u32, extent: u32| -> u32 {
        let s = side as i64;
        let mut x0 = (center - side as f64 / 2.0).round() as i64;
        if s >= (hi - lo) as i64 {
            x0 = x0.min(lo as i64).max(hi as i64 - s);
        }
        x0.clamp(0, extent as i64 - s) as u32
    };
    Ok(CropWindow {
        x0: place(cx, bbox.x0, bbox.x1, fw),
        y0: place(cy, bbox.y0, bbox.y1, fh),
        side,
        size: MODEL_SIZE,
    })
}

/// Intrinsics of the resampled crop: principal point shifted by the window
/// origin, everything scaled by the resample factor.
pub fn crop_camera(cam: &CameraModel, win: &CropWindow) -> CameraModel {
    let s = win.scale();
    CameraModel {
        fx: cam.fx * s,
        fy: cam.fy * s,
        cx: (cam.cx - win.x0 as f64) * s,
        cy: (cam.cy - win.y0 as f64) * s,
    }
}
