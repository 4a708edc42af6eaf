//! Small raster containers shared by the geometry, conditioning and synthesis
//! modules: binary masks, scalar float rasters and square crop windows.

use image::{imageops, RgbImage};

/// Axis-aligned pixel box, `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }
}

/// Row-major binary mask.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("count", &self.count())
            .finish()
    }
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; (width as usize) * (height as usize)],
        }
    }

    pub fn filled(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![true; (width as usize) * (height as usize)],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[self.idx(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.idx(x, y);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn bbox(&self) -> Option<BBox> {
        let mut bb: Option<BBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    let b = bb.get_or_insert(BBox {
                        x0: x,
                        y0: y,
                        x1: x + 1,
                        y1: y + 1,
                    });
                    b.x0 = b.x0.min(x);
                    b.y0 = b.y0.min(y);
                    b.x1 = b.x1.max(x + 1);
                    b.y1 = b.y1.max(y + 1);
                }
            }
        }
        bb
    }

    /// Mean of the set pixels' centers, in continuous pixel coordinates.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert_eq!(self.dims(), other.dims(), "mask dimensions differ");
        Mask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn union(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersect(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn subtract(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Square (Chebyshev) dilation: a pixel is set when any pixel within
    /// `radius` in both axes is set. Separable, so O(pixels · radius).
    pub fn dilate(&self, radius: u32) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width as i64, self.height as i64);
        let r = radius as i64;
        let mut horiz = Mask::new(self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                let lo = (x - r).max(0);
                let hi = (x + r).min(w - 1);
                if (lo..=hi).any(|xx| self.get(xx as u32, y as u32)) {
                    horiz.set(x as u32, y as u32, true);
                }
            }
        }
        let mut out = Mask::new(self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                let lo = (y - r).max(0);
                let hi = (y + r).min(h - 1);
                if (lo..=hi).any(|yy| horiz.get(x as u32, yy as u32)) {
                    out.set(x as u32, y as u32, true);
                }
            }
        }
        out
    }

    /// Nearest-neighbour resample of the window `win` into a `size × size` mask.
    pub fn crop_resample(&self, win: &CropWindow) -> Mask {
        Mask::from_fn(win.size, win.size, |x, y| {
            let (sx, sy) = win.to_source(x, y);
            self.get(sx, sy)
        })
    }

    /// Mask as an 8-bit luma image (0 / 255).
    pub fn to_luma(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width, self.height, |x, y| {
            image::Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }
}

/// Row-major scalar raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T> {
    width: u32,
    height: u32,
    data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    pub fn filled(width: u32, height: u32, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; (width as usize) * (height as usize)],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<T>) -> Option<Self> {
        (data.len() == (width as usize) * (height as usize)).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> T) -> Self {
        let mut data = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> T {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: T) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn crop_resample(&self, win: &CropWindow) -> Raster<T> {
        Raster::from_fn(win.size, win.size, |x, y| {
            let (sx, sy) = win.to_source(x, y);
            self.get(sx, sy)
        })
    }
}

/// Scalar float raster; depth maps in meters or normalized values.
pub type FloatRaster = Raster<f32>;

/// A square window of side `side` at `(x0, y0)` in the frame, resampled to
/// `size × size` for the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CropWindow {
    pub x0: u32,
    pub y0: u32,
    pub side: u32,
    pub size: u32,
}

impl CropWindow {
    /// Model pixels per frame pixel.
    pub fn scale(&self) -> f64 {
        self.size as f64 / self.side as f64
    }

    /// Frame pixel sampled by nearest-neighbour for model pixel `(x, y)`.
    #[inline]
    pub fn to_source(&self, x: u32, y: u32) -> (u32, u32) {
        let inv = self.side as f64 / self.size as f64;
        let sx = ((x as f64 + 0.5) * inv).floor() as u32;
        let sy = ((y as f64 + 0.5) * inv).floor() as u32;
        (
            self.x0 + sx.min(self.side - 1),
            self.y0 + sy.min(self.side - 1),
        )
    }

    /// Maps a continuous frame coordinate into model coordinates.
    pub fn frame_to_model(&self, u: f64, v: f64) -> (f64, f64) {
        let s = self.scale();
        ((u - self.x0 as f64) * s, (v - self.y0 as f64) * s)
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && y >= self.y0 && x < self.x0 + self.side && y < self.y0 + self.side
    }

    /// Extracts the window from `img` and resamples it (bilinear) to the
    /// model resolution. Identity windows are copied without filtering.
    pub fn extract_rgb(&self, img: &RgbImage) -> RgbImage {
        let view = imageops::crop_imm(img, self.x0, self.y0, self.side, self.side).to_image();
        if self.side == self.size {
            view
        } else {
            imageops::resize(&view, self.size, self.size, imageops::FilterType::Triangle)
        }
    }

    /// Resamples a model-resolution image back to the window's frame size.
    pub fn restore_rgb(&self, img: &RgbImage) -> RgbImage {
        if self.side == self.size {
            img.clone()
        } else {
            imageops::resize(img, self.side, self.side, imageops::FilterType::Triangle)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilation_of_single_pixel_is_square() {
        let mut m = Mask::new(11, 11);
        m.set(5, 5, true);
        let d = m.dilate(3);
        assert_eq!(d.count(), 49);
        assert!(d.get(2, 2) && d.get(8, 8));
        assert!(!d.get(1, 5) && !d.get(5, 9));
    }

    #[test]
    fn dilation_clips_at_border() {
        let mut m = Mask::new(8, 8);
        m.set(0, 0, true);
        assert_eq!(m.dilate(3).count(), 16);
    }

    #[test]
    fn bbox_and_centroid() {
        let m = Mask::from_fn(10, 10, |x, y| (2..5).contains(&x) && (3..9).contains(&y));
        let b = m.bbox().unwrap();
        assert_eq!((b.x0, b.y0, b.x1, b.y1), (2, 3, 5, 9));
        let (cx, cy) = m.centroid().unwrap();
        assert!((cx - 3.5).abs() < 1e-12 && (cy - 6.0).abs() < 1e-12);
        assert!(Mask::new(3, 3).bbox().is_none());
    }

    #[test]
    fn identity_window_resample_is_exact() {
        let img = RgbImage::from_fn(600, 520, |x, y| image::Rgb([x as u8, y as u8, (x ^ y) as u8]));
        let win = CropWindow {
            x0: 40,
            y0: 3,
            side: 512,
            size: 512,
        };
        let crop = win.extract_rgb(&img);
        assert_eq!(crop.get_pixel(0, 0), img.get_pixel(40, 3));
        assert_eq!(win.restore_rgb(&crop), crop);
        assert_eq!(win.to_source(511, 511), (40 + 511, 3 + 511));
    }

    #[test]
    fn nearest_mapping_stays_inside_window() {
        let win = CropWindow {
            x0: 10,
            y0: 20,
            side: 720,
            size: 512,
        };
        for i in [0, 1, 255, 511] {
            let (sx, sy) = win.to_source(i, i);
            assert!(win.contains(sx, sy));
        }
    }
}
