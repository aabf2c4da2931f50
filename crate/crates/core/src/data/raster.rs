use crate::error::{Error, Result};
use crate::kernels::bilinear_taps;

/// Interleaved `height × width × channels` raster with `f32` samples;
/// images hold values in `[0, 1]`, masks hold `{0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} raster needs {} samples, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_extent(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Copies the `h × w` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Raster> {
        if row + h > self.height || col + w > self.width {
            return Err(Error::Shape(format!(
                "crop {h}x{w} at ({row}, {col}) exceeds {}x{} raster",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for y in row..row + h {
            let start = (y * self.width + col) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Raster::from_vec(h, w, c, data)
    }

    /// True when any sample is non-zero.
    pub fn any_positive(&self) -> bool {
        self.data.iter().any(|&v| v > 0.0)
    }

    pub fn count_positive(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    /// Thresholds every sample: `v >= threshold` ↦ 1, else 0.
    pub fn binarize(&self, threshold: f32) -> Raster {
        Raster {
            data: self
                .data
                .iter()
                .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
                .collect(),
            ..self.clone()
        }
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Channel-major `f64` copy (`C, H, W`).
    pub fn to_planes(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = f64::from(v);
            }
        }
        out
    }
}

/// Bilinear resample with half-pixel centres. Constants map to constants
/// and a same-size target returns the input unchanged.
pub fn resize_bilinear(src: &Raster, height: usize, width: usize) -> Result<Raster> {
    if height == 0 || width == 0 || src.height == 0 || src.width == 0 {
        return Err(Error::Shape("resize to or from an empty raster".into()));
    }
    if height == src.height && width == src.width {
        return Ok(src.clone());
    }
    let ys = bilinear_taps(src.height, height);
    let xs = bilinear_taps(src.width, width);
    let c = src.channels;
    let mut out = Raster::new(height, width, c);
    for (oy, ty) in ys.iter().enumerate() {
        let fy = ty.frac as f32;
        for (ox, tx) in xs.iter().enumerate() {
            let fx = tx.frac as f32;
            for ch in 0..c {
                let top = src.get(ty.lo, tx.lo, ch) * (1.0 - fx) + src.get(ty.lo, tx.hi, ch) * fx;
                let bottom = src.get(ty.hi, tx.lo, ch) * (1.0 - fx) + src.get(ty.hi, tx.hi, ch) * fx;
                out.set(oy, ox, ch, top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(out)
}

/// Resizes a binary mask and re-binarizes it at 0.5.
pub fn resize_mask(mask: &Raster, height: usize, width: usize) -> Result<Raster> {
    Ok(resize_bilinear(mask, height, width)?.binarize(0.5))
}
