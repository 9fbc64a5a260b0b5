//! Row-major `H×W×C` pixel grids and the handful of resampling and filtering
//! primitives the blending pipeline needs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Smallest side accepted by the blending pipeline.
pub const MIN_SIDE: usize = 32;

/// Pixel grid with values in `[0, 1]`, stored row-major with interleaved
/// channels (`data[(y * width + x) * channels + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Image<T> {
    /// Build from raw data, checking the dimensions and the value range.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("channels must be 1 or 3, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::Shape("image has a zero dimension".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < T::zero() || **v > T::one()) {
            return Err(Error::Numerical(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Image { height, width, channels, data })
    }

    /// Build from data that may leave `[0,1]`; values are clamped, NaN becomes 0.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<T>) -> Result<Self> {
        for v in data.iter_mut() {
            *v = if v.is_nan() { T::zero() } else { v.clamp_to(T::zero(), T::one()) };
        }
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        let value = value.clamp_to(T::zero(), T::one());
        Image {
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

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        let i = (y * self.width + x) * self.channels + c;
        self.data[i] = v.clamp_to(T::zero(), T::one());
    }

    /// Checks the pipeline-entry invariant (both sides at least [`MIN_SIDE`]).
    pub fn ensure_blendable(&self) -> Result<()> {
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return Err(Error::Shape(format!(
                "image {}x{} is smaller than the {MIN_SIDE}x{MIN_SIDE} minimum",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// One channel as a separate plane.
    pub fn plane(&self, c: usize) -> Vec<T> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn from_planes(height: usize, width: usize, planes: &[Vec<T>]) -> Result<Self> {
        let channels = planes.len();
        let mut data = vec![T::zero(); height * width * channels];
        for (c, p) in planes.iter().enumerate() {
            if p.len() != height * width {
                return Err(Error::Shape("plane size mismatch".into()));
            }
            for (i, v) in p.iter().enumerate() {
                data[i * channels + c] = *v;
            }
        }
        Self::from_clamped(height, width, channels, data)
    }

    /// Per-channel mean.
    pub fn channel_means(&self) -> Vec<T> {
        let n = T::from_usize_lossy(self.height * self.width);
        (0..self.channels)
            .map(|c| self.data.iter().skip(c).step_by(self.channels).copied().sum::<T>() / n)
            .collect()
    }

    /// Crop `[y0, y0+h) × [x0, x0+w)`; the window must lie inside the image.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || y0 + h > self.height || x0 + w > self.width {
            return Err(Error::Shape(format!(
                "crop {h}x{w}@({y0},{x0}) outside {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Image { height: h, width: w, channels: c, data })
    }

    /// Bilinear resize with pixel-center alignment and replicated borders.
    pub fn resize(&self, new_h: usize, new_w: usize) -> Self {
        if new_h == self.height && new_w == self.width {
            return self.clone();
        }
        let sy = T::from_usize_lossy(self.height) / T::from_usize_lossy(new_h);
        let sx = T::from_usize_lossy(self.width) / T::from_usize_lossy(new_w);
        let half = T::lit(0.5);
        let c = self.channels;
        let mut data = Vec::with_capacity(new_h * new_w * c);
        for y in 0..new_h {
            let fy = (T::from_usize_lossy(y) + half) * sy - half;
            for x in 0..new_w {
                let fx = (T::from_usize_lossy(x) + half) * sx - half;
                for ch in 0..c {
                    data.push(self.sample_bilinear(fy, fx, ch));
                }
            }
        }
        Image { height: new_h, width: new_w, channels: c, data }
    }

    /// Bilinear sample at fractional `(y, x)`, coordinates clamped to the grid.
    #[inline]
    pub fn sample_bilinear(&self, y: T, x: T, c: usize) -> T {
        let (h, w, ch) = (self.height, self.width, self.channels);
        sample_bilinear_strided(&self.data, h, w, ch, c, y, x)
    }

    /// Load an 8-bit PNG (gray or RGB; alpha is dropped).
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let scale = T::lit(1.0 / 255.0);
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            let data = rgb.as_raw().iter().map(|&b| T::lit(b as f64) * scale).collect();
            Self::from_clamped(h, w, 3, data)
        } else {
            let g = img.to_luma8();
            let data = g.as_raw().iter().map(|&b| T::lit(b as f64) * scale).collect();
            Self::from_clamped(h, w, 1, data)
        }
    }

    /// Quantize to 8 bits (round half up) and write as PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_u8();
        let (w, h) = (self.width as u32, self.height as u32);
        let color = if self.channels == 3 {
            image::ExtendedColorType::Rgb8
        } else {
            image::ExtendedColorType::L8
        };
        image::save_buffer(path, &bytes, w, h, color)?;
        Ok(())
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.to_f64_lossy() * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Convert to another scalar type.
    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Bilinear sample from a strided buffer; out-of-range coordinates are
/// clamped to the nearest edge pixel.
#[inline]
pub(crate) fn sample_bilinear_strided<T: Real>(
    data: &[T],
    h: usize,
    w: usize,
    stride: usize,
    c: usize,
    y: T,
    x: T,
) -> T {
    let maxy = T::from_usize_lossy(h - 1);
    let maxx = T::from_usize_lossy(w - 1);
    let y = y.clamp_to(T::zero(), maxy);
    let x = x.clamp_to(T::zero(), maxx);
    let y0 = y.floor();
    let x0 = x.floor();
    let dy = y - y0;
    let dx = x - x0;
    let y0i = y0.to_usize().unwrap_or(0);
    let x0i = x0.to_usize().unwrap_or(0);
    let y1i = (y0i + 1).min(h - 1);
    let x1i = (x0i + 1).min(w - 1);
    let at = |yy: usize, xx: usize| data[(yy * w + xx) * stride + c];
    if dy == T::zero() && dx == T::zero() {
        return at(y0i, x0i);
    }
    let top = at(y0i, x0i) * (T::one() - dx) + at(y0i, x1i) * dx;
    let bot = at(y1i, x0i) * (T::one() - dx) + at(y1i, x1i) * dx;
    top * (T::one() - dy) + bot * dy
}

/// Normalized 1-D Gaussian kernel with radius `ceil(3σ)`.
pub fn gaussian_kernel<T: Real>(sigma: T) -> Vec<T> {
    let radius = (sigma * T::lit(3.0)).ceil().to_usize().unwrap_or(0).max(1);
    let two_s2 = T::lit(2.0) * sigma * sigma;
    let mut k: Vec<T> = (0..=2 * radius)
        .map(|i| {
            let d = T::from_usize_lossy(i) - T::from_usize_lossy(radius);
            (-(d * d) / two_s2).exp()
        })
        .collect();
    let s: T = k.iter().copied().sum();
    for v in k.iter_mut() {
        *v /= s;
    }
    k
}

/// Separable Gaussian blur of a single `h×w` plane with replicated borders.
/// `sigma <= 0` returns the plane unchanged.
pub fn gaussian_blur_plane<T: Real>(plane: &[T], h: usize, w: usize, sigma: T) -> Vec<T> {
    if sigma <= T::zero() {
        return plane.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (i, kv) in k.iter().enumerate() {
                let xx = clampi(x as isize + i as isize - r, w);
                acc += *kv * plane[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (i, kv) in k.iter().enumerate() {
                let yy = clampi(y as isize + i as isize - r, h);
                acc += *kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}
