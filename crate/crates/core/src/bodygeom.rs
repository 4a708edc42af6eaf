//! Joint projection, part-labeled body mask rasterization and visibility.

use crate::dataio::{BodyPart, CameraModel};
use crate::raster::{FloatRaster, Mask};

/// Depth-test slack against the scene buffer, meters.
pub const SCENE_DEPTH_TOLERANCE: f64 = 0.005;

/// Projected joints keep their validity flag while inside the frame
/// extended by this many pixels on every side.
pub const JOINT_MARGIN_PX: f64 = 64.0;

/// Nearest allowed camera-space Z; triangles touching it are skipped.
const NEAR_Z: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeomError {
    #[error("mesh has no triangles")]
    DegenerateMesh,
    #[error("unoccluded silhouette is empty")]
    EmptyReference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joints2D {
    pub points: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
}

impl Joints2D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[inline]
pub fn project(p: [f64; 3], cam: &CameraModel) -> [f64; 2] {
    [cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy]
}

/// Inverse of [`project`] at known depth `z`.
#[inline]
pub fn backproject(uv: [f64; 2], z: f64, cam: &CameraModel) -> [f64; 3] {
    [z * (uv[0] - cam.cx) / cam.fx, z * (uv[1] - cam.cy) / cam.fy, z]
}

/// Pinhole projection of camera-space points. Points behind the camera,
/// non-finite points, and points landing outside the `bounds` frame
/// (extended by [`JOINT_MARGIN_PX`]) are flagged invalid.
pub fn project_points(points: &[[f32; 3]], cam: &CameraModel, bounds: (u32, u32)) -> Joints2D {
    let (w, h) = (bounds.0 as f64, bounds.1 as f64);
    let m = JOINT_MARGIN_PX;
    let mut out = Joints2D {
        points: Vec::with_capacity(points.len()),
        valid: Vec::with_capacity(points.len()),
    };
    for p in points {
        let p = [p[0] as f64, p[1] as f64, p[2] as f64];
        if !(p.iter().all(|c| c.is_finite()) && p[2] > 0.0) {
            out.points.push([f64::NAN, f64::NAN]);
            out.valid.push(false);
            continue;
        }
        let uv = project(p, cam);
        let inside = uv[0] >= -m && uv[0] <= w + m && uv[1] >= -m && uv[1] <= h + m;
        out.points.push(uv);
        out.valid.push(inside);
    }
    out
}

/// Per-person rasterization result.
#[derive(Clone, Debug)]
pub struct PartMaskSet {
    /// Indexed by [`BodyPart::index`]; occlusion-aware when a scene buffer
    /// was supplied.
    parts: [Mask; 5],
    /// Silhouette of the person rendered alone.
    pub unoccluded_body: Mask,
    /// Pixel count of the occlusion-aware `face` mask.
    pub face_pixel_count: usize,
}

impl PartMaskSet {
    pub fn part(&self, part: BodyPart) -> &Mask {
        &self.parts[part.index()]
    }

    /// Union of the occlusion-aware part masks.
    pub fn silhouette(&self) -> Mask {
        self.parts[1..]
            .iter()
            .fold(self.parts[0].clone(), |acc, m| acc.union(m))
    }

    pub fn from_parts(parts: [Mask; 5], unoccluded_body: Mask) -> Self {
        let face_pixel_count = parts[BodyPart::Face.index()].count();
        Self {
            parts,
            unoccluded_body,
            face_pixel_count,
        }
    }
}

/// Majority vote over a triangle's vertex labels; a three-way tie resolves to
/// the earliest label in enum order.
pub fn triangle_label(labels: [BodyPart; 3]) -> BodyPart {
    let [a, b, c] = labels;
    if a == b || a == c {
        a
    } else if b == c {
        b
    } else {
        a.min(b).min(c)
    }
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Top-left rule for y-down screen space with positive-area winding.
#[inline]
fn is_top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Label and depth buffers of a z-buffered mesh rasterization.
struct ZBuffer {
    width: u32,
    depth: Vec<f64>,
    label: Vec<Option<BodyPart>>,
}

fn rasterize_labels(
    vertices: &[[f32; 3]],
    faces: &[[u32; 3]],
    labels: &[BodyPart],
    cam: &CameraModel,
    (width, height): (u32, u32),
) -> ZBuffer {
    let n = width as usize * height as usize;
    let mut zb = ZBuffer {
        width,
        depth: vec![f64::INFINITY; n],
        label: vec![None; n],
    };
    for f in faces {
        let idx = f.map(|i| i as usize);
        let p3 = idx.map(|i| {
            let v = vertices[i];
            [v[0] as f64, v[1] as f64, v[2] as f64]
        });
        if p3.iter().any(|p| !(p[2] > NEAR_Z) || !p.iter().all(|c| c.is_finite())) {
            continue;
        }
        let mut s = p3.map(|p| project(p, cam));
        let mut z = p3.map(|p| p[2]);
        let mut area = edge(s[0], s[1], s[2]);
        if area == 0.0 {
            continue;
        }
        if area < 0.0 {
            s.swap(1, 2);
            z.swap(1, 2);
            area = -area;
        }
        let label = triangle_label(idx.map(|i| labels[i]));

        let min_x = s.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let max_x = s.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = s.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let max_y = s.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        // Pixel x has its center at x + 0.5.
        let x0 = (min_x - 0.5).ceil().max(0.0) as i64;
        let x1 = ((max_x - 0.5).floor() as i64).min(width as i64 - 1);
        let y0 = (min_y - 0.5).ceil().max(0.0) as i64;
        let y1 = ((max_y - 0.5).floor() as i64).min(height as i64 - 1);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let tl = [
            is_top_left(s[1], s[2]),
            is_top_left(s[2], s[0]),
            is_top_left(s[0], s[1]),
        ];
        let inv_z = z.map(|z| 1.0 / z);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let w = [edge(s[1], s[2], p), edge(s[2], s[0], p), edge(s[0], s[1], p)];
                let inside = w
                    .iter()
                    .zip(&tl)
                    .all(|(&wi, &t)| wi > 0.0 || (wi == 0.0 && t));
                if !inside {
                    continue;
                }
                let depth = area / (w[0] * inv_z[0] + w[1] * inv_z[1] + w[2] * inv_z[2]);
                let i = y as usize * width as usize + x as usize;
                if depth < zb.depth[i] {
                    zb.depth[i] = depth;
                    zb.label[i] = Some(label);
                }
            }
        }
    }
    zb
}

/// Renders the person's part-labeled masks.
///
/// With `scene_depth`, a pixel survives only if the person's nearest surface
/// is no farther than the scene depth plus [`SCENE_DEPTH_TOLERANCE`];
/// invalid (non-finite or non-positive) scene depth never occludes.
pub fn rasterize_person(
    vertices: &[[f32; 3]],
    faces: &[[u32; 3]],
    part_labels: &[BodyPart],
    cam: &CameraModel,
    resolution: (u32, u32),
    scene_depth: Option<&FloatRaster>,
) -> Result<PartMaskSet, GeomError> {
    if faces.is_empty() {
        return Err(GeomError::DegenerateMesh);
    }
    let (w, h) = resolution;
    let zb = rasterize_labels(vertices, faces, part_labels, cam, resolution);
    let mut parts: [Mask; 5] = std::array::from_fn(|_| Mask::new(w, h));
    let mut unoccluded = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y as usize * zb.width as usize + x as usize;
            let Some(label) = zb.label[i] else { continue };
            unoccluded.set(x, y, true);
            let visible = match scene_depth {
                None => true,
                Some(scene) => {
                    let sd = scene.get(x, y) as f64;
                    !(sd.is_finite() && sd > 0.0) || zb.depth[i] <= sd + SCENE_DEPTH_TOLERANCE
                }
            };
            if visible {
                parts[label.index()].set(x, y, true);
            }
        }
    }
    Ok(PartMaskSet::from_parts(parts, unoccluded))
}

/// Fraction of the person-alone silhouette that survives occlusion.
pub fn visibility_ratio(masks: &PartMaskSet) -> Result<f64, GeomError> {
    let reference = masks.unoccluded_body.count();
    if reference == 0 {
        return Err(GeomError::EmptyReference);
    }
    let visible = masks
        .silhouette()
        .intersect(&masks.unoccluded_body)
        .count();
    Ok(visible as f64 / reference as f64)
}
