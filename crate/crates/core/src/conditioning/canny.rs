//! Canny edges on normalized depth.
//!
//! Gaussian blur (separable, replicate border) → Sobel gradients scaled by
//! 1/8 so magnitudes read as per-pixel slope → 4-direction non-maximum
//! suppression → 8-connected double-threshold hysteresis.

use serde::{Deserialize, Serialize};

use crate::raster::{FloatRaster, Mask};

/// Gradient differences below this are treated as ties in non-maximum
/// suppression, so mathematically symmetric profiles thin to one pixel
/// regardless of rounding.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    pub sigma: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            low: 0.04,
            high: 0.10,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma > 0.0) {
            return Err(format!("canny sigma must be positive, got {}", self.sigma));
        }
        if !(0.0 < self.low && self.low < self.high) {
            return Err(format!(
                "canny thresholds need 0 < low < high, got {} / {}",
                self.low, self.high
            ));
        }
        Ok(())
    }

    /// Kernel half-width: 2 (a 5×5 kernel) at the default sigma of 1.4.
    pub fn kernel_radius(&self) -> usize {
        ((1.5 * self.sigma).round() as usize).max(1)
    }
}

/// Normalized 1-D Gaussian taps of the given radius.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Row-major `w × h` grid with a replicated border of `pad` cells.
struct Padded {
    stride: usize,
    pad: usize,
    v: Vec<f64>,
}

impl Padded {
    fn new(w: usize, h: usize, pad: usize, at: impl Fn(usize, usize) -> f64) -> Self {
        let stride = w + 2 * pad;
        let mut v = Vec::with_capacity(stride * (h + 2 * pad));
        for py in 0..h + 2 * pad {
            let y = py.saturating_sub(pad).min(h - 1);
            for px in 0..stride {
                v.push(at(px.saturating_sub(pad).min(w - 1), y));
            }
        }
        Self { stride, pad, v }
    }

    /// Value at `(x + dx, y + dy)`, clamped into the grid.
    #[inline]
    fn at(&self, x: usize, y: usize, dx: isize, dy: isize) -> f64 {
        let px = (x + self.pad) as isize + dx;
        let py = (y + self.pad) as isize + dy;
        self.v[py as usize * self.stride + px as usize]
    }
}

/// Separable blur with replicated borders; taps summed in kernel order.
fn blur(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let padded = Padded::new(w, h, r, |x, y| src[y * w + x]);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * padded.at(x, y, k as isize - r as isize, 0);
            }
            tmp[y * w + x] = acc;
        }
    }
    let padded = Padded::new(w, h, r, |x, y| tmp[y * w + x]);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * padded.at(x, y, 0, k as isize - r as isize);
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Blurred Sobel gradients: `(gx, gy, magnitude)`, row-major.
pub fn gradients(input: &FloatRaster, params: &CannyParams) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (w, h) = (input.width() as usize, input.height() as usize);
    let src: Vec<f64> = input.as_slice().iter().map(|&v| v as f64).collect();
    let blurred = blur(&src, w, h, &gaussian_kernel(params.sigma, params.kernel_radius()));
    let b = Padded::new(w, h, 1, |x, y| blurred[y * w + x]);
    let n = w * h;
    let (mut gx, mut gy, mut mag) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for y in 0..h {
        for x in 0..w {
            let p = |dx: isize, dy: isize| b.at(x, y, dx, dy);
            let sx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let sy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let i = y * w + x;
            gx[i] = sx / 8.0;
            gy[i] = sy / 8.0;
            mag[i] = gx[i].hypot(gy[i]);
        }
    }
    (gx, gy, mag)
}

/// Offset of the neighbour along the positive gradient direction, quantized
/// to 0°, 45°, 90° or 135° in y-down image coordinates.
pub fn direction_offset(gx: f64, gy: f64) -> (i64, i64) {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        (1, 0)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

pub fn canny_on_depth(depth_norm: &FloatRaster, params: &CannyParams) -> Mask {
    let (w, h) = (depth_norm.width() as usize, depth_norm.height() as usize);
    let (gx, gy, mag) = gradients(depth_norm, params);
    let get = |x: i64, y: i64| {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };

    // A pixel survives if it strictly beats its backward neighbour and ties
    // or beats its forward one; plateaus keep only their first pixel.
    let mut thin = vec![0.0; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w + x as usize;
            let g = mag[i];
            let (dx, dy) = direction_offset(gx[i], gy[i]);
            let back = get(x - dx, y - dy);
            let fwd = get(x + dx, y + dy);
            if g > back + TIE_TOLERANCE && g >= fwd - TIE_TOLERANCE {
                thin[i] = g;
            }
        }
    }

    let mut out = Mask::new(w as u32, h as u32);
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if thin[y * w + x] >= params.high && !out.get(x as u32, y as u32) {
                out.set(x as u32, y as u32, true);
                stack.push((x as i64, y as i64));
                while let Some((cx, cy)) = stack.pop() {
                    for ny in cy - 1..=cy + 1 {
                        for nx in cx - 1..=cx + 1 {
                            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                                continue;
                            }
                            let (ux, uy) = (nx as u32, ny as u32);
                            if !out.get(ux, uy) && thin[ny as usize * w + nx as usize] >= params.low {
                                out.set(ux, uy, true);
                                stack.push((nx, ny));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
