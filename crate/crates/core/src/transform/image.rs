use crate::error::{FcplError, Result};

pub const DEFAULT_WIDTH: usize = 32;
pub const DEFAULT_HEIGHT: usize = 32;
pub const CHANNELS: usize = 3;

/// Fixed-size RGB image with `f32` pixels in `[0, 1]`, stored row-major with
/// interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Image {
            width,
            height,
            pixels: vec![value.clamp(0.0, 1.0); width * height * CHANNELS],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        let expected = width * height * CHANNELS;
        if width == 0 || height == 0 {
            return Err(FcplError::InvalidArgument("image dimensions must be positive".into()));
        }
        if pixels.len() != expected {
            return Err(FcplError::DimensionMismatch {
                expected,
                actual: pixels.len(),
            });
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(FcplError::InvalidArgument(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub(crate) fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.pixels[(y * self.width + x) * CHANNELS + c] = v.clamp(0.0, 1.0);
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.pixels.len(), other.pixels.len());
        let total: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        total / self.pixels.len() as f64
    }

    /// Bilinear sample at continuous pixel coordinates, clamped to the border.
    pub(crate) fn sample_bilinear(&self, fx: f32, fy: f32, c: usize) -> f32 {
        let fx = fx.clamp(0.0, (self.width - 1) as f32);
        let fy = fy.clamp(0.0, (self.height - 1) as f32);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f32;
        let ty = fy - y0 as f32;
        let top = self.get(x0, y0, c) * (1.0 - tx) + self.get(x1, y0, c) * tx;
        let bottom = self.get(x0, y1, c) * (1.0 - tx) + self.get(x1, y1, c) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Resample the rectangle `[x0, x0+w) x [y0, y0+h)` (in source pixels) to
    /// a `width x height` image.
    pub(crate) fn resample_region(
        &self,
        x0: f32,
        y0: f32,
        w: f32,
        h: f32,
        width: usize,
        height: usize,
    ) -> Image {
        let mut out = Image::filled(width, height, 0.0);
        let sx = w / width as f32;
        let sy = h / height as f32;
        for y in 0..height {
            let fy = y0 + (y as f32 + 0.5) * sy - 0.5;
            for x in 0..width {
                let fx = x0 + (x as f32 + 0.5) * sx - 0.5;
                for c in 0..CHANNELS {
                    let v = self.sample_bilinear(fx, fy, c);
                    out.set(x, y, c, v);
                }
            }
        }
        out
    }
}
