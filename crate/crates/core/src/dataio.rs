//! Ground-truth archive I/O.
//!
//! On-disk layout of a dataset root:
//!
//! ```text
//! <root>/faces.u32, faces.json            shared mesh topology (F×3 u32)
//! <root>/<frame_id>/rgb.png               8-bit RGB
//! <root>/<frame_id>/depth.f32, depth.json planar Z depth in meters (H×W f32)
//! <root>/<frame_id>/seg.png               8-bit segmentation, see [`SegMap`]
//! <root>/<frame_id>/camera.json           {fx, fy, cx, cy}
//! <root>/<frame_id>/persons/<id>/verts.f32   V×3 f32, camera space, meters
//! <root>/<frame_id>/persons/<id>/joints.f32  J×3 f32, camera space, meters
//! <root>/<frame_id>/persons/<id>/labels.u8   V part labels, see [`BodyPart`]
//! <root>/<frame_id>/persons/<id>/meta.json   {gender, race, ...}
//! ```
//!
//! Raw arrays are little-endian and row-major. Output datasets add
//! `gen_rgb.png` and `provenance.json` to each frame directory and carry
//! every other file over byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::raster::{FloatRaster, Mask, Raster};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("missing asset: {0}")]
    MissingAsset(PathBuf),
    #[error("corrupt header in {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },
    #[error("resolution mismatch in {what}: expected {expected:?}, found {found:?}")]
    ResolutionMismatch {
        what: String,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("invalid provenance: {0}")]
    InvalidProvenance(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn corrupt(path: &Path, reason: impl Into<String>) -> DataError {
    DataError::CorruptHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Neutral,
}

impl Gender {
    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Neutral => "neutral",
        }
    }
}

/// Per-vertex UV region label. The discriminant is the on-disk byte and the
/// order used to break triangle-label ties.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum BodyPart {
    Scalp = 0,
    Face = 1,
    Hands = 2,
    Body = 3,
    Feet = 4,
}

impl BodyPart {
    pub const ALL: [BodyPart; 5] = [
        BodyPart::Scalp,
        BodyPart::Face,
        BodyPart::Hands,
        BodyPart::Body,
        BodyPart::Feet,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Pinhole intrinsics in pixels. Pixel centers sit at half-integer
/// coordinates, so pixel `(x, y)` covers `[x, x+1) × [y, y+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    pub fn validate(&self, width: u32, height: u32) -> Result<(), String> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if !(0.0..=width as f64).contains(&self.cx) || !(0.0..=height as f64).contains(&self.cy) {
            return Err(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, width, height
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonMeta {
    pub gender: Gender,
    pub race: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hair_color: Option<String>,
    #[serde(default)]
    pub cloth_skin_mask_present: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersonGT {
    pub person_id: u32,
    pub gender: Gender,
    pub race: String,
    /// Hair color from metadata, when the source dataset records one.
    pub hair_color: Option<String>,
    pub vertices: Vec<[f32; 3]>,
    pub faces: Arc<Vec<[u32; 3]>>,
    pub joints3d: Vec<[f32; 3]>,
    pub part_labels: Vec<BodyPart>,
    pub cloth_skin_mask_present: bool,
}

impl PersonGT {
    pub fn meta(&self) -> PersonMeta {
        PersonMeta {
            gender: self.gender,
            race: self.race.clone(),
            hair_color: self.hair_color.clone(),
            cloth_skin_mask_present: self.cloth_skin_mask_present,
        }
    }

    fn validate(&self) -> Result<(), String> {
        let v = self.vertices.len();
        if self.part_labels.len() != v {
            return Err(format!("{} labels for {} vertices", self.part_labels.len(), v));
        }
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i as usize >= v)) {
            return Err(format!("face {f:?} indexes past {v} vertices"));
        }
        if self.joints3d.iter().flatten().any(|c| !c.is_finite()) {
            return Err("non-finite joint coordinate".into());
        }
        Ok(())
    }
}

/// Segmentation raster. Palette: `0` environment; for person id `p`
/// (`p ≤ 126`), `1 + 2p` is body and `2 + 2p` is simulated cloth. `255` is
/// reserved and rejected on read.
#[derive(Clone, Debug, PartialEq)]
pub struct SegMap(pub Raster<u8>);

impl SegMap {
    pub const MAX_PERSON_ID: u32 = 126;

    pub fn body_label(person_id: u32) -> u8 {
        (1 + 2 * person_id) as u8
    }

    pub fn cloth_label(person_id: u32) -> u8 {
        (2 + 2 * person_id) as u8
    }

    /// Person id referenced by a palette entry, if any.
    pub fn person_of(label: u8) -> Option<u32> {
        match label {
            0 | 255 => None,
            l => Some((l as u32 - 1) / 2),
        }
    }

    pub fn dims(&self) -> (u32, u32) {
        self.0.dims()
    }

    pub fn body_mask(&self, person_id: u32) -> Mask {
        let l = Self::body_label(person_id);
        Mask::from_fn(self.0.width(), self.0.height(), |x, y| self.0.get(x, y) == l)
    }

    pub fn cloth_mask(&self, person_id: u32) -> Mask {
        let l = Self::cloth_label(person_id);
        Mask::from_fn(self.0.width(), self.0.height(), |x, y| self.0.get(x, y) == l)
    }

    pub fn person_mask(&self, person_id: u32) -> Mask {
        let (b, c) = (Self::body_label(person_id), Self::cloth_label(person_id));
        Mask::from_fn(self.0.width(), self.0.height(), |x, y| {
            let v = self.0.get(x, y);
            v == b || v == c
        })
    }

    pub fn referenced_persons(&self) -> Vec<u32> {
        let mut seen = [false; 256];
        for &v in self.0.as_slice() {
            seen[v as usize] = true;
        }
        let mut ids: Vec<u32> = (1..255u8)
            .filter(|&l| seen[l as usize])
            .filter_map(Self::person_of)
            .collect();
        ids.dedup();
        ids
    }
}

#[derive(Clone, Debug)]
pub struct FrameRecord {
    pub frame_id: String,
    pub rgb: RgbImage,
    /// Planar Z depth in meters; non-finite or non-positive values are invalid.
    pub depth: FloatRaster,
    pub seg: SegMap,
    pub camera: CameraModel,
    /// Sorted by ascending `person_id`.
    pub persons: Vec<PersonGT>,
    /// Directory the record was read from; GT files are copied from here.
    pub source_dir: Option<PathBuf>,
    pub source_root: Option<PathBuf>,
}

impl FrameRecord {
    pub fn dims(&self) -> (u32, u32) {
        self.rgb.dimensions()
    }

    pub fn person(&self, id: u32) -> Option<&PersonGT> {
        self.persons.iter().find(|p| p.person_id == id)
    }

    /// Checks the record-level invariants.
    pub fn validate(&self) -> Result<(), DataError> {
        let dims = self.dims();
        if self.depth.dims() != dims {
            return Err(DataError::ResolutionMismatch {
                what: "depth".into(),
                expected: dims,
                found: self.depth.dims(),
            });
        }
        if self.seg.dims() != dims {
            return Err(DataError::ResolutionMismatch {
                what: "seg".into(),
                expected: dims,
                found: self.seg.dims(),
            });
        }
        let here = self.source_dir.clone().unwrap_or_default();
        self.camera
            .validate(dims.0, dims.1)
            .map_err(|r| corrupt(&here.join("camera.json"), r))?;
        if self.seg.0.as_slice().contains(&255) {
            return Err(corrupt(&here.join("seg.png"), "reserved label 255 present"));
        }
        for id in self.seg.referenced_persons() {
            if self.person(id).is_none() {
                return Err(corrupt(
                    &here.join("seg.png"),
                    format!("segmentation references person {id} absent from persons/"),
                ));
            }
        }
        for p in &self.persons {
            if p.person_id > SegMap::MAX_PERSON_ID {
                return Err(corrupt(&here.join("persons"), format!("person id {} too large", p.person_id)));
            }
            p.validate()
                .map_err(|r| corrupt(&here.join("persons").join(p.person_id.to_string()), r))?;
        }
        Ok(())
    }
}

/// Sidecar header for raw arrays.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub order: String,
}

impl ArrayHeader {
    pub fn new(shape: Vec<usize>, dtype: &str) -> Self {
        Self {
            shape,
            dtype: dtype.into(),
            order: "C".into(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, DataError> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(DataError::MissingAsset(path.to_path_buf()))
        }
        Err(e) => Err(io_err(path)(e)),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| corrupt(path, e.to_string()))
}

fn read_header(path: &Path, dtype: &str, rank: usize) -> Result<ArrayHeader, DataError> {
    let h: ArrayHeader = read_json(path)?;
    if h.dtype != dtype {
        return Err(corrupt(path, format!("dtype {:?}, expected {dtype:?}", h.dtype)));
    }
    if h.order != "C" {
        return Err(corrupt(path, format!("order {:?}, expected \"C\"", h.order)));
    }
    if h.shape.len() != rank {
        return Err(corrupt(path, format!("rank {}, expected {rank}", h.shape.len())));
    }
    Ok(h)
}

pub fn f32s_from_le(path: &Path, bytes: &[u8]) -> Result<Vec<f32>, DataError> {
    if bytes.len() % 4 != 0 {
        return Err(corrupt(path, format!("{} bytes is not a whole number of f32", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn f32s_to_le(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_vec3s(path: &Path) -> Result<Vec<[f32; 3]>, DataError> {
    let bytes = read_bytes(path)?;
    if bytes.len() % 12 != 0 {
        return Err(corrupt(path, format!("{} bytes is not a whole number of f32×3 rows", bytes.len())));
    }
    Ok(f32s_from_le(path, &bytes)?
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect())
}

fn vec3s_to_le(rows: &[[f32; 3]]) -> Vec<u8> {
    rows.iter().flatten().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn read_faces(root: &Path) -> Result<Arc<Vec<[u32; 3]>>, DataError> {
    let hpath = root.join("faces.json");
    let header = read_header(&hpath, "u32", 2)?;
    if header.shape[1] != 3 {
        return Err(corrupt(&hpath, "faces must be F×3"));
    }
    let path = root.join("faces.u32");
    let bytes = read_bytes(&path)?;
    if bytes.len() != header.numel() * 4 {
        return Err(corrupt(
            &path,
            format!("{} bytes, header implies {}", bytes.len(), header.numel() * 4),
        ));
    }
    let faces = bytes
        .chunks_exact(12)
        .map(|c| {
            let g = |i: usize| u32::from_le_bytes([c[i], c[i + 1], c[i + 2], c[i + 3]]);
            [g(0), g(4), g(8)]
        })
        .collect();
    Ok(Arc::new(faces))
}

fn read_png_rgb(path: &Path) -> Result<RgbImage, DataError> {
    let bytes = read_bytes(path)?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map(|i| i.to_rgb8())
        .map_err(|e| corrupt(path, e.to_string()))
}

fn read_png_luma(path: &Path) -> Result<image::GrayImage, DataError> {
    let bytes = read_bytes(path)?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| corrupt(path, e.to_string()))?;
    match img {
        image::DynamicImage::ImageLuma8(g) => Ok(g),
        other => Err(corrupt(
            path,
            format!("expected 8-bit single-channel PNG, found {:?}", other.color()),
        )),
    }
}

fn read_person(dir: &Path, person_id: u32, faces: &Arc<Vec<[u32; 3]>>) -> Result<PersonGT, DataError> {
    let meta: PersonMeta = read_json(&dir.join("meta.json"))?;
    let vertices = read_vec3s(&dir.join("verts.f32"))?;
    let joints3d = read_vec3s(&dir.join("joints.f32"))?;
    let lpath = dir.join("labels.u8");
    let part_labels = read_bytes(&lpath)?
        .into_iter()
        .map(|b| BodyPart::from_u8(b).ok_or_else(|| corrupt(&lpath, format!("unknown part label {b}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PersonGT {
        person_id,
        gender: meta.gender,
        race: meta.race,
        hair_color: meta.hair_color,
        vertices,
        faces: faces.clone(),
        joints3d,
        part_labels,
        cloth_skin_mask_present: meta.cloth_skin_mask_present,
    })
}

/// Reads and validates one frame.
pub fn read_frame(root: &Path, frame_id: &str) -> Result<FrameRecord, DataError> {
    let dir = root.join(frame_id);
    if !dir.is_dir() {
        return Err(DataError::MissingAsset(dir));
    }
    let faces = read_faces(root)?;
    let rgb = read_png_rgb(&dir.join("rgb.png"))?;

    let dh_path = dir.join("depth.json");
    let dh = read_header(&dh_path, "f32", 2)?;
    let dpath = dir.join("depth.f32");
    let depth_values = f32s_from_le(&dpath, &read_bytes(&dpath)?)?;
    if depth_values.len() != dh.numel() {
        return Err(corrupt(
            &dpath,
            format!("{} values, header implies {}", depth_values.len(), dh.numel()),
        ));
    }
    let (dh_h, dh_w) = (dh.shape[0] as u32, dh.shape[1] as u32);
    let depth = Raster::from_vec(dh_w, dh_h, depth_values).expect("length checked above");

    let seg_img = read_png_luma(&dir.join("seg.png"))?;
    let (sw, sh) = seg_img.dimensions();
    let seg = SegMap(Raster::from_vec(sw, sh, seg_img.into_raw()).expect("image buffer is w*h"));

    let camera: CameraModel = read_json(&dir.join("camera.json"))?;

    let pdir = dir.join("persons");
    let mut persons = Vec::new();
    if pdir.is_dir() {
        for entry in fs::read_dir(&pdir).map_err(io_err(&pdir))? {
            let entry = entry.map_err(io_err(&pdir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let id: u32 = name
                .parse()
                .map_err(|_| corrupt(&entry.path(), "person directory name is not an integer id"))?;
            persons.push(read_person(&entry.path(), id, &faces)?);
        }
    }
    persons.sort_by_key(|p| p.person_id);

    let frame = FrameRecord {
        frame_id: frame_id.to_string(),
        rgb,
        depth,
        seg,
        camera,
        persons,
        source_dir: Some(dir),
        source_root: Some(root.to_path_buf()),
    };
    frame.validate()?;
    Ok(frame)
}

/// Frame ids under `root`: subdirectories holding an `rgb.png`, sorted.
pub fn list_frames(root: &Path) -> Result<Vec<String>, DataError> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        if entry.path().join("rgb.png").is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

static TMP_SEQ: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);

/// Writes `bytes` to `path` through a sibling temp file and a rename, so a
/// reader never observes a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let parent = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let seq = TMP_SEQ.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let tmp = parent.join(format!(
        ".{}.{}-{seq}.tmp",
        path.file_name().unwrap_or_default().to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn encode_png_rgb(img: &RgbImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    buf.into_inner()
}

pub fn encode_png_luma(img: &image::GrayImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    buf.into_inner()
}

fn to_json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

/// Serializes the shared topology into `root`, skipping the write when an
/// identical file already exists.
pub fn write_faces(root: &Path, faces: &[[u32; 3]]) -> Result<(), DataError> {
    let bytes: Vec<u8> = faces.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
    let header = to_json_bytes(&ArrayHeader::new(vec![faces.len(), 3], "u32"));
    for (name, content) in [("faces.u32", bytes), ("faces.json", header)] {
        let path = root.join(name);
        if fs::read(&path).ok().as_deref() != Some(&content[..]) {
            write_atomic(&path, &content)?;
        }
    }
    Ok(())
}

/// Serializes a frame (all GT plus `rgb.png`) into a dataset root in the
/// canonical encoding. Used to author fixtures and converted archives.
pub fn write_source_frame(root: &Path, frame: &FrameRecord) -> Result<(), DataError> {
    frame.validate()?;
    if let Some(p) = frame.persons.first() {
        write_faces(root, &p.faces)?;
    }
    let dir = root.join(&frame.frame_id);
    write_atomic(&dir.join("rgb.png"), &encode_png_rgb(&frame.rgb))?;
    let (w, h) = frame.depth.dims();
    write_atomic(&dir.join("depth.f32"), &f32s_to_le(frame.depth.as_slice()))?;
    write_atomic(
        &dir.join("depth.json"),
        &to_json_bytes(&ArrayHeader::new(vec![h as usize, w as usize], "f32")),
    )?;
    let seg = image::GrayImage::from_raw(w, h, frame.seg.0.as_slice().to_vec())
        .expect("seg dims validated");
    write_atomic(&dir.join("seg.png"), &encode_png_luma(&seg))?;
    write_atomic(&dir.join("camera.json"), &to_json_bytes(&frame.camera))?;
    for p in &frame.persons {
        let pdir = dir.join("persons").join(p.person_id.to_string());
        write_atomic(&pdir.join("verts.f32"), &vec3s_to_le(&p.vertices))?;
        write_atomic(&pdir.join("joints.f32"), &vec3s_to_le(&p.joints3d))?;
        let labels: Vec<u8> = p.part_labels.iter().map(|&l| l as u8).collect();
        write_atomic(&pdir.join("labels.u8"), &labels)?;
        write_atomic(&pdir.join("meta.json"), &to_json_bytes(&p.meta()))?;
    }
    Ok(())
}

/// Relative paths of the per-frame files that are carried over unchanged.
pub fn frame_passthrough_files(frame_dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut files: Vec<PathBuf> = ["rgb.png", "depth.f32", "depth.json", "seg.png", "camera.json"]
        .iter()
        .map(PathBuf::from)
        .collect();
    let pdir = frame_dir.join("persons");
    if pdir.is_dir() {
        let mut persons: Vec<_> = fs::read_dir(&pdir)
            .map_err(io_err(&pdir))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name())
            .collect();
        persons.sort();
        for p in persons {
            for name in ["verts.f32", "joints.f32", "labels.u8", "meta.json"] {
                files.push(Path::new("persons").join(&p).join(name));
            }
        }
    }
    Ok(files)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartStatus {
    Done,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartRecord {
    pub person_id: u32,
    pub part: String,
    pub status: PartStatus,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Everything needed to reproduce a generated frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationProvenance {
    pub global_seed: u64,
    pub preset: String,
    pub config_hash: String,
    pub steps: usize,
    pub guidance: f64,
    pub negative_prompt: String,
    pub strengths: BTreeMap<String, f64>,
    pub control_weights: BTreeMap<String, f64>,
    /// Keyed by `"<person_id>/<part>"`.
    pub prompts: BTreeMap<String, String>,
    pub backend: String,
    pub schedule: String,
    pub parts: Vec<PartRecord>,
}

impl GenerationProvenance {
    pub fn prompt_key(person_id: u32, part: &str) -> String {
        format!("{person_id}/{part}")
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for (part, &s) in &self.strengths {
            if !(s > 0.0 && s <= 1.0) {
                return Err(DataError::InvalidProvenance(format!(
                    "strength {s} for {part} outside (0, 1]"
                )));
            }
        }
        for rec in &self.parts {
            if rec.status != PartStatus::Skipped
                && !self
                    .prompts
                    .contains_key(&Self::prompt_key(rec.person_id, &rec.part))
            {
                return Err(DataError::InvalidProvenance(format!(
                    "no prompt recorded for person {} part {}",
                    rec.person_id, rec.part
                )));
            }
        }
        Ok(())
    }
}

/// Writes an upgraded frame: GT and source files byte-identical to the input,
/// plus `gen_rgb.png` and, last, `provenance.json`.
pub fn write_frame(
    out_root: &Path,
    frame: &FrameRecord,
    new_rgb: &RgbImage,
    provenance: &GenerationProvenance,
) -> Result<(), DataError> {
    provenance.validate()?;
    if new_rgb.dimensions() != frame.dims() {
        return Err(DataError::ResolutionMismatch {
            what: "generated rgb".into(),
            expected: frame.dims(),
            found: new_rgb.dimensions(),
        });
    }
    let out_dir = out_root.join(&frame.frame_id);
    match (&frame.source_dir, &frame.source_root) {
        (Some(src_dir), Some(src_root)) => {
            for rel in frame_passthrough_files(src_dir)? {
                let bytes = read_bytes(&src_dir.join(&rel))?;
                let dst = out_dir.join(&rel);
                if fs::read(&dst).ok().as_deref() != Some(&bytes[..]) {
                    write_atomic(&dst, &bytes)?;
                }
            }
            for name in ["faces.u32", "faces.json"] {
                let bytes = read_bytes(&src_root.join(name))?;
                let dst = out_root.join(name);
                if fs::read(&dst).ok().as_deref() != Some(&bytes[..]) {
                    write_atomic(&dst, &bytes)?;
                }
            }
        }
        _ => write_source_frame(out_root, frame)?,
    }
    write_atomic(&out_dir.join("gen_rgb.png"), &encode_png_rgb(new_rgb))?;
    write_atomic(&out_dir.join("provenance.json"), &to_json_bytes(provenance))?;
    Ok(())
}

pub fn read_provenance(frame_dir: &Path) -> Result<GenerationProvenance, DataError> {
    read_json(&frame_dir.join("provenance.json"))
}

pub fn read_generated_rgb(frame_dir: &Path) -> Result<RgbImage, DataError> {
    read_png_rgb(&frame_dir.join("gen_rgb.png"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, DataError> {
    Ok(sha256_hex(&read_bytes(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;

    fn prov() -> GenerationProvenance {
        GenerationProvenance {
            global_seed: 7,
            preset: "none".into(),
            config_hash: "x".into(),
            steps: 40,
            guidance: 7.5,
            negative_prompt: String::new(),
            strengths: [("head".to_string(), 0.35)].into_iter().collect(),
            control_weights: BTreeMap::new(),
            prompts: BTreeMap::new(),
            backend: "mock".into(),
            schedule: "s".into(),
            parts: vec![],
        }
    }

    #[test]
    fn fixture_frame_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let frame = fixture::two_person_frame("f0");
        write_source_frame(tmp.path(), &frame).unwrap();
        let back = read_frame(tmp.path(), "f0").unwrap();
        assert_eq!(back.persons.len(), 2);
        assert_eq!(back.persons, frame.persons);
        assert_eq!(back.depth, frame.depth);
        assert_eq!(back.seg, frame.seg);
        assert_eq!(back.rgb, frame.rgb);
        assert_eq!(back.camera, frame.camera);
    }

    #[test]
    fn depth_size_mismatch_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let frame = fixture::two_person_frame("f0");
        write_source_frame(tmp.path(), &frame).unwrap();
        let dir = tmp.path().join("f0");
        let (w, h) = frame.dims();
        let small = vec![1.0f32; ((w - 1) * h) as usize];
        fs::write(dir.join("depth.f32"), f32s_to_le(&small)).unwrap();
        fs::write(
            dir.join("depth.json"),
            serde_json::to_vec(&ArrayHeader::new(vec![h as usize, w as usize - 1], "f32")).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            read_frame(tmp.path(), "f0"),
            Err(DataError::ResolutionMismatch { .. })
        ));
    }

    #[test]
    fn unknown_person_in_mask_is_corrupt() {
        let tmp = tempfile::tempdir().unwrap();
        let frame = fixture::two_person_frame("f0");
        write_source_frame(tmp.path(), &frame).unwrap();
        fs::remove_dir_all(tmp.path().join("f0/persons/1")).unwrap();
        assert!(matches!(
            read_frame(tmp.path(), "f0"),
            Err(DataError::CorruptHeader { .. })
        ));
    }

    #[test]
    fn bad_dtype_and_missing_files() {
        let tmp = tempfile::tempdir().unwrap();
        let frame = fixture::two_person_frame("f0");
        write_source_frame(tmp.path(), &frame).unwrap();
        let dir = tmp.path().join("f0");
        fs::write(dir.join("depth.json"), br#"{"shape":[1,1],"dtype":"f64","order":"C"}"#).unwrap();
        assert!(matches!(read_frame(tmp.path(), "f0"), Err(DataError::CorruptHeader { .. })));
        fs::remove_file(dir.join("depth.json")).unwrap();
        assert!(matches!(read_frame(tmp.path(), "f0"), Err(DataError::MissingAsset(_))));
        assert!(matches!(read_frame(tmp.path(), "nope"), Err(DataError::MissingAsset(_))));
    }

    #[test]
    fn write_frame_passes_gt_through_byte_identically() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        write_source_frame(src.path(), &fixture::two_person_frame("f0")).unwrap();
        let frame = read_frame(src.path(), "f0").unwrap();
        write_frame(out.path(), &frame, &frame.rgb, &prov()).unwrap();
        for rel in frame_passthrough_files(&src.path().join("f0")).unwrap() {
            assert_eq!(
                sha256_file(&src.path().join("f0").join(&rel)).unwrap(),
                sha256_file(&out.path().join("f0").join(&rel)).unwrap(),
                "{rel:?}"
            );
        }
        let back = read_frame(out.path(), "f0").unwrap();
        assert_eq!(back.persons, frame.persons);
        assert_eq!(read_provenance(&out.path().join("f0")).unwrap(), prov());
    }

    #[test]
    fn provenance_strength_out_of_range_is_rejected() {
        let out = tempfile::tempdir().unwrap();
        let frame = fixture::two_person_frame("f0");
        let mut p = prov();
        p.strengths.insert("feet".into(), 1.5);
        assert!(matches!(
            write_frame(out.path(), &frame, &frame.rgb, &p),
            Err(DataError::InvalidProvenance(_))
        ));
    }

    #[test]
    fn provenance_requires_prompt_for_processed_part() {
        let mut p = prov();
        p.parts.push(PartRecord {
            person_id: 0,
            part: "head".into(),
            status: PartStatus::Done,
            seed: 1,
            detail: None,
        });
        assert!(p.validate().is_err());
        p.prompts.insert("0/head".into(), "Realistic x y face".into());
        assert!(p.validate().is_ok());
    }

    #[test]
    fn seg_palette() {
        assert_eq!(SegMap::body_label(0), 1);
        assert_eq!(SegMap::cloth_label(0), 2);
        assert_eq!(SegMap::person_of(SegMap::cloth_label(126)), Some(126));
        assert_eq!(SegMap::person_of(SegMap::body_label(3)), Some(3));
        assert_eq!(SegMap::person_of(0), None);
    }
}
