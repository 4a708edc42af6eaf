use crate::raster::Mask;

use super::SynthError;

/// Spatial downsampling between model pixels and latent cells.
pub const LATENT_FACTOR: u32 = 8;

/// Pixel dilation applied before a mask is reduced to latent cells.
pub const MASK_DILATION_PX: u32 = 3;

/// `C × H × W` latent, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl LatentTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<f32>) -> Result<Self, SynthError> {
        let [channels, height, width] = shape;
        if data.len() != channels * height * width {
            return Err(SynthError::ShapeMismatch {
                expected: shape.to_vec(),
                found: vec![data.len()],
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn ensure_same_shape(&self, other: &LatentTensor) -> Result<(), SynthError> {
        if self.shape() != other.shape() {
            return Err(SynthError::ShapeMismatch {
                expected: self.shape().to_vec(),
                found: other.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &LatentTensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// Binary `H × W` latent mask; 1 marks cells to regenerate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatentMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl LatentMask {
    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn ensure_covers(&self, t: &LatentTensor) -> Result<(), SynthError> {
        if (t.height, t.width) != (self.height, self.width) {
            return Err(SynthError::ShapeMismatch {
                expected: vec![self.height, self.width],
                found: vec![t.height, t.width],
            });
        }
        Ok(())
    }

    /// Blend `inpainted` where the mask is set and `known` elsewhere.
    pub fn composite(
        &self,
        inpainted: &LatentTensor,
        known: &LatentTensor,
    ) -> Result<LatentTensor, SynthError> {
        inpainted.ensure_same_shape(known)?;
        let mut out = inpainted.clone();
        self.fill_unmasked(&mut out, |i| known.data[i])?;
        Ok(out)
    }

    /// Overwrites every element of `t` outside the mask with `known(i)`,
    /// visiting flat indices in ascending order.
    pub fn fill_unmasked(&self, t: &mut LatentTensor, mut known: impl FnMut(usize) -> f32) -> Result<(), SynthError> {
        self.ensure_covers(t)?;
        let plane = self.height * self.width;
        for (c, chunk) in t.data.chunks_mut(plane).enumerate() {
            for (j, v) in chunk.iter_mut().enumerate() {
                if !self.data[j] {
                    *v = known(c * plane + j);
                }
            }
        }
        Ok(())
    }
}

/// Reduces a model-resolution pixel mask to latent cells: dilate by
/// [`MASK_DILATION_PX`], then a cell is set if any pixel of its
/// `factor × factor` block is set.
pub fn downsample_mask(pixel_mask: &Mask, factor: u32) -> Result<LatentMask, SynthError> {
    let (w, h) = pixel_mask.dims();
    if factor == 0 || w % factor != 0 || h % factor != 0 {
        return Err(SynthError::ShapeMismatch {
            expected: vec![factor as usize],
            found: vec![w as usize, h as usize],
        });
    }
    let dilated = pixel_mask.dilate(MASK_DILATION_PX);
    let (lw, lh) = ((w / factor) as usize, (h / factor) as usize);
    let mut out = LatentMask::filled(lh, lw, false);
    for y in 0..h {
        for x in 0..w {
            if dilated.get(x, y) {
                out.data[(y / factor) as usize * lw + (x / factor) as usize] = true;
            }
        }
    }
    Ok(out)
}
