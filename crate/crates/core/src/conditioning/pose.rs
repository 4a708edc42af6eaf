//! OpenPose-style skeleton rendering from projected body-model joints.

use image::{Rgb, RgbImage};

use crate::bodygeom::Joints2D;
use crate::raster::{CropWindow, Mask};

/// Body-model joint index for each OpenPose-18 keypoint (nose, neck,
/// R shoulder/elbow/wrist, L shoulder/elbow/wrist, R hip/knee/ankle,
/// L hip/knee/ankle, R eye, L eye, R ear, L ear).
pub const SMPLX_TO_OPENPOSE: [usize; 18] = [55, 12, 17, 19, 21, 16, 18, 20, 2, 5, 8, 1, 4, 7, 56, 57, 58, 59];

/// OpenPose keypoints dropped when the face is barely visible.
pub const FACE_KEYPOINTS: [usize; 5] = [0, 14, 15, 16, 17];

/// Face masks smaller than this many pixels suppress the face keypoints.
pub const FACE_PIXEL_THRESHOLD: usize = 100;

pub const LIMBS: [(usize, usize); 17] = [
    (1, 2),
    (1, 5),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (1, 8),
    (8, 9),
    (9, 10),
    (1, 11),
    (11, 12),
    (12, 13),
    (1, 0),
    (0, 14),
    (14, 16),
    (0, 15),
    (15, 17),
];

pub const KEYPOINT_COLORS: [[u8; 3]; 18] = [
    [255, 0, 0],
    [255, 85, 0],
    [255, 170, 0],
    [255, 255, 0],
    [170, 255, 0],
    [85, 255, 0],
    [0, 255, 0],
    [0, 255, 85],
    [0, 255, 170],
    [0, 255, 255],
    [0, 170, 255],
    [0, 85, 255],
    [0, 0, 255],
    [85, 0, 255],
    [170, 0, 255],
    [255, 0, 255],
    [255, 0, 170],
    [255, 0, 85],
];

const LIMB_HALF_WIDTH: f64 = 4.0;
const JOINT_RADIUS: f64 = 4.0;

fn limb_color(i: usize) -> Rgb<u8> {
    let c = KEYPOINT_COLORS[i];
    Rgb(c.map(|v| (v as f64 * 0.6) as u8))
}

enum Shape {
    Capsule([f64; 2], [f64; 2]),
    Disc([f64; 2]),
}

impl Shape {
    fn covers(&self, p: [f64; 2]) -> bool {
        match *self {
            Shape::Disc(c) => (p[0] - c[0]).hypot(p[1] - c[1]) <= JOINT_RADIUS,
            Shape::Capsule(a, b) => {
                let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 {
                    (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qx, qy) = (a[0] + t * dx, a[1] + t * dy);
                (p[0] - qx).hypot(p[1] - qy) <= LIMB_HALF_WIDTH
            }
        }
    }

    fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        match *self {
            Shape::Disc(c) => (
                [c[0] - JOINT_RADIUS, c[1] - JOINT_RADIUS],
                [c[0] + JOINT_RADIUS, c[1] + JOINT_RADIUS],
            ),
            Shape::Capsule(a, b) => (
                [a[0].min(b[0]) - LIMB_HALF_WIDTH, a[1].min(b[1]) - LIMB_HALF_WIDTH],
                [a[0].max(b[0]) + LIMB_HALF_WIDTH, a[1].max(b[1]) + LIMB_HALF_WIDTH],
            ),
        }
    }
}

struct Primitive {
    shape: Shape,
    color: Rgb<u8>,
    face: bool,
}

/// OpenPose keypoints in model coordinates; `None` where the source joint is
/// missing or invalid.
pub fn openpose_keypoints(joints: &Joints2D, win: &CropWindow) -> [Option<[f64; 2]>; 18] {
    SMPLX_TO_OPENPOSE.map(|j| {
        if j < joints.len() && joints.valid[j] {
            let [u, v] = joints.points[j];
            let (x, y) = win.frame_to_model(u, v);
            Some([x, y])
        } else {
            None
        }
    })
}

fn primitives(kp: &[Option<[f64; 2]>; 18], drop_face: bool) -> Vec<Primitive> {
    let is_face = |k: usize| FACE_KEYPOINTS.contains(&k);
    let mut prims = Vec::new();
    for (i, &(a, b)) in LIMBS.iter().enumerate() {
        let face = is_face(a) || is_face(b);
        if face && drop_face {
            continue;
        }
        if let (Some(pa), Some(pb)) = (kp[a], kp[b]) {
            prims.push(Primitive {
                shape: Shape::Capsule(pa, pb),
                color: limb_color(i),
                face,
            });
        }
    }
    for (k, p) in kp.iter().enumerate() {
        let face = is_face(k);
        if face && drop_face {
            continue;
        }
        if let Some(p) = p {
            prims.push(Primitive {
                shape: Shape::Disc(*p),
                color: Rgb(KEYPOINT_COLORS[k]),
                face,
            });
        }
    }
    prims
}

fn paint(prims: &[Primitive], size: u32, mut put: impl FnMut(u32, u32, &Primitive)) {
    for prim in prims {
        let (lo, hi) = prim.shape.bounds();
        let x0 = (lo[0] - 0.5).ceil().max(0.0) as i64;
        let y0 = (lo[1] - 0.5).ceil().max(0.0) as i64;
        let x1 = ((hi[0] - 0.5).floor() as i64).min(size as i64 - 1);
        let y1 = ((hi[1] - 0.5).floor() as i64).min(size as i64 - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if prim.shape.covers([x as f64 + 0.5, y as f64 + 0.5]) {
                    put(x as u32, y as u32, prim);
                }
            }
        }
    }
}

/// Renders the skeleton for `win` on black. Face keypoints and the limbs
/// touching them are omitted when `face_pixel_count` is below
/// [`FACE_PIXEL_THRESHOLD`].
pub fn render_pose_image(joints: &Joints2D, face_pixel_count: usize, win: &CropWindow) -> RgbImage {
    let kp = openpose_keypoints(joints, win);
    let prims = primitives(&kp, face_pixel_count < FACE_PIXEL_THRESHOLD);
    let mut img = RgbImage::new(win.size, win.size);
    paint(&prims, win.size, |x, y, p| img.put_pixel(x, y, p.color));
    img
}

/// Pixels covered by face keypoints or face limbs in the unpruned rendering.
pub fn face_footprint(joints: &Joints2D, win: &CropWindow) -> Mask {
    let kp = openpose_keypoints(joints, win);
    let prims: Vec<Primitive> = primitives(&kp, false).into_iter().filter(|p| p.face).collect();
    let mut m = Mask::new(win.size, win.size);
    paint(&prims, win.size, |x, y, _| m.set(x, y, true));
    m
}
