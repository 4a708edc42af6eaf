//! Synthetic frames built from flat, camera-facing rectangles.
//!
//! Each person is seven quads (scalp, face, two hands, body, two feet) at a
//! single depth. The fixture camera has power-of-two focal lengths, integer
//! principal points and power-of-two person depths, so projected vertices
//! land exactly on integer pixel edges and every rendered mask is exactly
//! the union of its rectangles. Depth, segmentation and RGB are painted
//! from the same rectangles.

use std::path::Path;
use std::sync::Arc;

use image::{Rgb, RgbImage};

use crate::bodygeom::backproject;
use crate::conditioning::SMPLX_TO_OPENPOSE;
use crate::dataio::{write_source_frame, BodyPart, CameraModel, DataError, FrameRecord, Gender, PersonGT, SegMap};
use crate::raster::{FloatRaster, Raster};

const FOCAL: f64 = 256.0;
const BACKGROUND_DEPTH: f32 = 8.0;
const JOINT_COUNT: usize = 127;

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Rect {
    pub const fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> usize {
        ((self.x1 - self.x0) * (self.y1 - self.y0)) as usize
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn translate(&self, dx: u32, dy: u32) -> Self {
        Self::new(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)
    }

    fn center(&self) -> [f64; 2] {
        [(self.x0 + self.x1) as f64 / 2.0, (self.y0 + self.y1) as f64 / 2.0]
    }
}

/// Pixel-space body plan of one person.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PersonLayout {
    pub scalp: Rect,
    pub face: Rect,
    pub hands: [Rect; 2],
    pub body: Rect,
    pub feet: [Rect; 2],
    /// Camera-space Z; keep it a power of two.
    pub depth: f32,
}

impl PersonLayout {
    /// 70 × 211 px figure with its top-left corner at `(x, y)`. Silhouette
    /// area is exactly 10 000 px, of which 100 are face and 8 800 body.
    pub fn standard(x: u32, y: u32, depth: f32) -> Self {
        let r = |x0, y0, x1, y1| Rect::new(x0, y0, x1, y1).translate(x, y);
        Self {
            scalp: r(20, 0, 50, 10),
            face: r(30, 10, 40, 20),
            hands: [r(0, 80, 10, 90), r(60, 80, 70, 90)],
            body: r(10, 20, 60, 196),
            feet: [r(15, 196, 35, 211), r(35, 196, 55, 211)],
            depth,
        }
    }

    fn quads(&self) -> [(Rect, BodyPart); 7] {
        [
            (self.scalp, BodyPart::Scalp),
            (self.face, BodyPart::Face),
            (self.hands[0], BodyPart::Hands),
            (self.hands[1], BodyPart::Hands),
            (self.body, BodyPart::Body),
            (self.feet[0], BodyPart::Feet),
            (self.feet[1], BodyPart::Feet),
        ]
    }

    pub fn silhouette_area(&self) -> usize {
        self.quads().iter().map(|(r, _)| r.area()).sum()
    }

    /// Part at pixel `(x, y)`, if the person covers it.
    pub fn part_at(&self, x: u32, y: u32) -> Option<BodyPart> {
        self.quads().iter().find(|(r, _)| r.contains(x, y)).map(|&(_, p)| p)
    }

    /// OpenPose-18 keypoints in pixel coordinates.
    fn keypoints(&self) -> [[f64; 2]; 18] {
        let b = self.body;
        let (l, r) = (b.x0 as f64, b.x1 as f64);
        let (top, bottom) = (b.y0 as f64, b.y1 as f64);
        let mid = (l + r) / 2.0;
        let f = self.face.center();
        let at = |t: f64| top + t * (bottom - top);
        [
            f,
            [mid, top + 2.0],
            [r - 4.0, top + 6.0],
            [r - 2.0, at(0.25)],
            self.hands[1].center(),
            [l + 4.0, top + 6.0],
            [l + 2.0, at(0.25)],
            self.hands[0].center(),
            [mid + 8.0, at(0.45)],
            [mid + 9.0, at(0.72)],
            self.feet[1].center(),
            [mid - 8.0, at(0.45)],
            [mid - 9.0, at(0.72)],
            self.feet[0].center(),
            [f[0] + 2.0, f[1] - 2.0],
            [f[0] - 2.0, f[1] - 2.0],
            [f[0] + 4.5, f[1]],
            [f[0] - 4.5, f[1]],
        ]
    }
}

/// Four vertices and two triangles per quad.
pub fn shared_faces() -> Arc<Vec<[u32; 3]>> {
    Arc::new(
        (0..7u32)
            .flat_map(|q| {
                let b = 4 * q;
                [[b, b + 1, b + 2], [b, b + 2, b + 3]]
            })
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixturePerson {
    pub layout: PersonLayout,
    pub gender: Gender,
    pub race: String,
    pub hair_color: Option<String>,
    pub cloth_skin_mask_present: bool,
}

impl FixturePerson {
    pub fn new(layout: PersonLayout, gender: Gender, race: &str) -> Self {
        Self {
            layout,
            gender,
            race: race.into(),
            hair_color: None,
            cloth_skin_mask_present: false,
        }
    }
}

/// Scene-space box drawn in front of (or behind) persons; segmented as
/// environment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Occluder {
    pub rect: Rect,
    pub depth: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub persons: Vec<FixturePerson>,
    pub occluders: Vec<Occluder>,
}

fn camera(width: u32, height: u32) -> CameraModel {
    CameraModel {
        fx: FOCAL,
        fy: FOCAL,
        cx: (width / 2) as f64,
        cy: (height / 2) as f64,
    }
}

fn lift(uv: [f64; 2], z: f32, cam: &CameraModel) -> [f32; 3] {
    backproject(uv, z as f64, cam).map(|c| c as f32)
}

fn part_color(part: BodyPart, pid: usize) -> [u8; 3] {
    let k = (pid as u8).wrapping_mul(37);
    match part {
        BodyPart::Scalp => [70 + k / 4, 48, 30],
        BodyPart::Face | BodyPart::Hands => [214, 170, 140u8.wrapping_sub(k / 8)],
        BodyPart::Body => [50 + k, 90, 170u8.wrapping_sub(k)],
        BodyPart::Feet => [200, 160, 130],
    }
}

impl Scene {
    pub fn build(&self, frame_id: &str) -> FrameRecord {
        let (w, h) = (self.width, self.height);
        let cam = camera(w, h);
        let faces = shared_faces();

        let mut depth = FloatRaster::filled(w, h, BACKGROUND_DEPTH);
        let mut seg = Raster::filled(w, h, 0u8);
        let mut rgb = RgbImage::from_fn(w, h, |x, y| {
            Rgb([(40 + x * 60 / w) as u8, (120 + y * 60 / h) as u8, 90])
        });
        for y in 0..h {
            for x in 0..w {
                let mut nearest = BACKGROUND_DEPTH;
                for (pid, p) in self.persons.iter().enumerate() {
                    let Some(part) = p.layout.part_at(x, y) else { continue };
                    if p.layout.depth < nearest {
                        nearest = p.layout.depth;
                        depth.set(x, y, nearest);
                        let label = if part == BodyPart::Body {
                            SegMap::cloth_label(pid as u32)
                        } else {
                            SegMap::body_label(pid as u32)
                        };
                        seg.set(x, y, label);
                        rgb.put_pixel(x, y, Rgb(part_color(part, pid)));
                    }
                }
                for o in &self.occluders {
                    if o.rect.contains(x, y) && o.depth < nearest {
                        nearest = o.depth;
                        depth.set(x, y, nearest);
                        seg.set(x, y, 0);
                        rgb.put_pixel(x, y, Rgb([118, 118, 124]));
                    }
                }
            }
        }

        let persons = self
            .persons
            .iter()
            .enumerate()
            .map(|(pid, p)| {
                let z = p.layout.depth;
                let mut vertices = Vec::new();
                let mut part_labels = Vec::new();
                for (r, part) in p.layout.quads() {
                    for uv in [[r.x0, r.y0], [r.x1, r.y0], [r.x1, r.y1], [r.x0, r.y1]] {
                        vertices.push(lift([uv[0] as f64, uv[1] as f64], z, &cam));
                        part_labels.push(part);
                    }
                }
                let body_center = lift(p.layout.body.center(), z, &cam);
                let mut joints3d = vec![body_center; JOINT_COUNT];
                for (op, kp) in p.layout.keypoints().iter().enumerate() {
                    joints3d[SMPLX_TO_OPENPOSE[op]] = lift(*kp, z, &cam);
                }
                PersonGT {
                    person_id: pid as u32,
                    gender: p.gender,
                    race: p.race.clone(),
                    hair_color: p.hair_color.clone(),
                    vertices,
                    faces: faces.clone(),
                    joints3d,
                    part_labels,
                    cloth_skin_mask_present: p.cloth_skin_mask_present,
                }
            })
            .collect();

        FrameRecord {
            frame_id: frame_id.to_string(),
            rgb,
            depth,
            seg: SegMap(seg),
            camera: cam,
            persons,
            source_dir: None,
            source_root: None,
        }
    }
}

/// Two fully visible persons at different depths.
pub fn two_person_frame(frame_id: &str) -> FrameRecord {
    Scene {
        width: 320,
        height: 240,
        persons: vec![
            FixturePerson::new(PersonLayout::standard(40, 14, 2.0), Gender::Female, "asian"),
            FixturePerson::new(PersonLayout::standard(200, 20, 4.0), Gender::Male, "black"),
        ],
        occluders: vec![],
    }
    .scene_checked()
    .build(frame_id)
}

/// One person with exactly `visible_pct` percent of the silhouette visible
/// and `face_pixels` (99 or 100) face pixels. Hidden area is whole body rows
/// behind a nearer occluder.
pub fn gate_frame(frame_id: &str, visible_pct: u32, face_pixels: u32) -> FrameRecord {
    let mut layout = PersonLayout::standard(80, 20, 2.0);
    match face_pixels {
        100 => {}
        99 => layout.face = Rect::new(layout.face.x0, layout.face.y0, layout.face.x0 + 9, layout.face.y0 + 11),
        other => panic!("gate_frame supports 99 or 100 face pixels, got {other}"),
    }
    assert!(visible_pct <= 100);
    // The body is 50 px wide and the silhouette 10 000 px, so each body row
    // hides half a percent.
    let rows = (100 - visible_pct) * 2;
    let b = layout.body;
    let occluders = (rows > 0)
        .then(|| Occluder {
            rect: Rect::new(b.x0, b.y0 + 60, b.x1, b.y0 + 60 + rows),
            depth: 1.0,
        })
        .into_iter()
        .collect();
    Scene {
        width: 256,
        height: 256,
        persons: vec![FixturePerson::new(layout, Gender::Female, "asian")],
        occluders,
    }
    .scene_checked()
    .build(frame_id)
}

impl Scene {
    fn scene_checked(self) -> Self {
        for p in &self.persons {
            for (r, _) in p.layout.quads() {
                assert!(r.x1 <= self.width && r.y1 <= self.height, "quad {r:?} leaves the frame");
            }
        }
        self
    }
}

/// `i`-th frame of the standard multi-frame fixture. Frames alternate
/// between one and two persons; every third frame hides most of one person
/// behind an occluder, and some persons carry skin-texture clothing or a
/// recorded hair color.
pub fn dataset_frame(i: usize) -> FrameRecord {
    let shift = (i as u32 * 7) % 40;
    let races = ["asian", "white", "black", "hispanic", "indian"];
    let genders = [Gender::Female, Gender::Male];
    let mut first = FixturePerson::new(PersonLayout::standard(30 + shift, 12, 2.0), genders[i % 2], races[i % 5]);
    first.cloth_skin_mask_present = i % 4 == 1;
    if i % 3 == 2 {
        first.hair_color = Some("blond".into());
    }
    let mut persons = vec![first];
    if i % 2 == 1 {
        persons.push(FixturePerson::new(
            PersonLayout::standard(190 + shift / 2, 22, 4.0),
            genders[(i + 1) % 2],
            races[(i + 2) % 5],
        ));
    }
    let occluders = if i % 3 == 0 {
        let b = persons[0].layout.body;
        vec![Occluder {
            rect: Rect::new(b.x0 - 5, b.y0 + 30, b.x1 + 5, b.y0 + 130),
            depth: 1.0,
        }]
    } else {
        vec![]
    };
    Scene { width: 320, height: 240, persons, occluders }
        .scene_checked()
        .build(&format!("frame_{i:04}"))
}

/// Writes `n` frames of [`dataset_frame`] under `root`.
pub fn write_dataset(root: &Path, n: usize) -> Result<Vec<String>, DataError> {
    (0..n)
        .map(|i| {
            let f = dataset_frame(i);
            write_source_frame(root, &f)?;
            Ok(f.frame_id)
        })
        .collect()
}
