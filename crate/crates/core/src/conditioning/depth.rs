use image::{Rgb, RgbImage};

use crate::bodygeom::backproject;
use crate::dataio::CameraModel;
use crate::raster::{FloatRaster, Mask};

/// Depth samples usable for conditioning: finite and in front of the camera.
pub fn valid_depth_mask(depth: &FloatRaster) -> Mask {
    Mask::from_fn(depth.width(), depth.height(), |x, y| {
        let d = depth.get(x, y);
        d.is_finite() && d > 0.0
    })
}

/// Min-max normalization over the valid pixels. Invalid pixels become 0; a
/// flat valid range maps to 0.5.
pub fn normalize_depth(depth: &FloatRaster, valid: &Mask) -> FloatRaster {
    let (w, h) = depth.dims();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in 0..h {
        for x in 0..w {
            if valid.get(x, y) {
                let d = depth.get(x, y) as f64;
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
    }
    if lo > hi {
        return FloatRaster::filled(w, h, 0.0);
    }
    let range = hi - lo;
    FloatRaster::from_fn(w, h, |x, y| {
        if !valid.get(x, y) {
            0.0
        } else if range == 0.0 {
            0.5
        } else {
            (((depth.get(x, y) as f64 - lo) / range) as f32).clamp(0.0, 1.0)
        }
    })
}

/// Encoded value of an undefined normal.
pub const UNDEFINED_NORMAL: Rgb<u8> = Rgb([128, 128, 128]);

fn encode_unit(c: f64) -> u8 {
    (255.0 * (c + 1.0) / 2.0).round().clamp(0.0, 255.0) as u8
}

/// Encodes a camera-space normal (+X right, +Y down, +Z forward) as RGB in
/// the viewer frame (+X right, +Y up, +Z toward the viewer), so a normal
/// facing the camera encodes as (128, 128, 255).
pub fn encode_normal(n: [f64; 3]) -> Rgb<u8> {
    Rgb([encode_unit(n[0]), encode_unit(-n[1]), encode_unit(-n[2])])
}

/// Inverse of [`encode_normal`], back to camera space.
pub fn decode_normal(px: Rgb<u8>) -> [f64; 3] {
    let d = |v: u8| v as f64 * 2.0 / 255.0 - 1.0;
    [d(px[0]), -d(px[1]), -d(px[2])]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Surface normals of the backprojected depth map. Tangents use central
/// differences, falling back to one-sided differences at invalid neighbours;
/// pixels without a tangent along either axis encode as [`UNDEFINED_NORMAL`].
/// `cam` must already be the crop's intrinsics.
pub fn normals_from_depth(depth: &FloatRaster, cam: &CameraModel, valid: &Mask) -> RgbImage {
    let (w, h) = depth.dims();
    let (wi, hi) = (w as i64, h as i64);
    let points: Vec<[f64; 3]> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| backproject([x as f64 + 0.5, y as f64 + 0.5], depth.get(x, y) as f64, cam))
        .collect();
    let valid = valid.as_slice();
    let at = |x: i64, y: i64| (y * wi + x) as usize;
    let ok = |x: i64, y: i64| x >= 0 && y >= 0 && x < wi && y < hi && valid[at(x, y)];
    let tangent = |x: i64, y: i64, dx: i64, dy: i64| -> Option<[f64; 3]> {
        let fwd = ok(x + dx, y + dy).then(|| points[at(x + dx, y + dy)]);
        let bwd = ok(x - dx, y - dy).then(|| points[at(x - dx, y - dy)]);
        match (fwd, bwd) {
            (Some(f), Some(b)) => Some(sub(f, b)),
            (Some(f), None) => Some(sub(f, points[at(x, y)])),
            (None, Some(b)) => Some(sub(points[at(x, y)], b)),
            (None, None) => None,
        }
    };
    RgbImage::from_fn(w, h, |x, y| {
        let (x, y) = (x as i64, y as i64);
        if !valid[at(x, y)] {
            return UNDEFINED_NORMAL;
        }
        let (Some(du), Some(dv)) = (tangent(x, y, 1, 0), tangent(x, y, 0, 1)) else {
            return UNDEFINED_NORMAL;
        };
        let mut n = cross(du, dv);
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if !(len > 0.0) || !len.is_finite() {
            return UNDEFINED_NORMAL;
        }
        if n[2] > 0.0 {
            n = n.map(|c| -c);
        }
        encode_normal(n.map(|c| c / len))
    })
}
