//! Random elastic warping and smoothing of binary region masks.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::polygon::BinaryMask;
use super::{RegionTag, SoftMask};
use crate::error::{Error, Result};
use crate::image::{gaussian_blur_plane, sample_bilinear_strided};
use crate::rng::rng_from_seed;
use crate::scalar::Real;

/// Concrete deformation applied to one mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskDeformParams {
    /// Peak displacement of the elastic field, in pixels.
    pub elastic_amplitude: f64,
    /// Spacing of the random control grid, in pixels.
    pub elastic_scale: f64,
    pub blur_sigma: f64,
    /// Final multiplier in `(0, 1]`.
    pub amplitude_scale: f64,
    pub seed: u64,
}

impl MaskDeformParams {
    /// No warp, no blur, full amplitude.
    pub fn identity(seed: u64) -> Self {
        MaskDeformParams {
            elastic_amplitude: 0.0,
            elastic_scale: 0.0,
            blur_sigma: 0.0,
            amplitude_scale: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.elastic_amplitude) || !ok(self.elastic_scale) || !ok(self.blur_sigma) {
            return Err(Error::Config(format!("negative or non-finite deformation magnitude: {self:?}")));
        }
        if !(self.amplitude_scale > 0.0 && self.amplitude_scale <= 1.0) {
            return Err(Error::Config(format!(
                "amplitude_scale {} outside (0, 1]",
                self.amplitude_scale
            )));
        }
        Ok(())
    }
}

/// Ranges from which per-mask deformation parameters are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskDeformConfig {
    pub elastic_amplitude: f64,
    pub elastic_scale: f64,
    pub blur_sigma_min: f64,
    pub blur_sigma_max: f64,
    pub amplitude_scales: Vec<f64>,
}

impl Default for MaskDeformConfig {
    fn default() -> Self {
        MaskDeformConfig {
            elastic_amplitude: 4.0,
            elastic_scale: 16.0,
            blur_sigma_min: 1.0,
            blur_sigma_max: 4.0,
            amplitude_scales: vec![0.25, 0.5, 0.75, 1.0],
        }
    }
}

impl MaskDeformConfig {
    /// Leaves masks untouched.
    pub fn none() -> Self {
        MaskDeformConfig {
            elastic_amplitude: 0.0,
            elastic_scale: 0.0,
            blur_sigma_min: 0.0,
            blur_sigma_max: 0.0,
            amplitude_scales: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blur_sigma_min > self.blur_sigma_max {
            return Err(Error::Config("blur_sigma_min > blur_sigma_max".into()));
        }
        if self.amplitude_scales.is_empty() {
            return Err(Error::Config("amplitude_scales is empty".into()));
        }
        for &a in &self.amplitude_scales {
            MaskDeformParams { amplitude_scale: a, ..MaskDeformParams::identity(0) }.validate()?;
        }
        MaskDeformParams {
            elastic_amplitude: self.elastic_amplitude,
            elastic_scale: self.elastic_scale,
            blur_sigma: self.blur_sigma_min,
            amplitude_scale: 1.0,
            seed: 0,
        }
        .validate()
    }

    pub fn sample(&self, seed: u64) -> MaskDeformParams {
        let mut rng = rng_from_seed(seed);
        let blur_sigma = if self.blur_sigma_max > self.blur_sigma_min {
            rng.random_range(self.blur_sigma_min..=self.blur_sigma_max)
        } else {
            self.blur_sigma_min
        };
        let amplitude_scale = self.amplitude_scales[rng.random_range(0..self.amplitude_scales.len())];
        MaskDeformParams {
            elastic_amplitude: self.elastic_amplitude,
            elastic_scale: self.elastic_scale,
            blur_sigma,
            amplitude_scale,
            seed: rng.random(),
        }
    }
}

/// Warp a binary mask with a smooth random displacement field, blur it and
/// scale it. Identical inputs give bit-identical output.
///
/// The displacement field is drawn on a control grid with spacing
/// `elastic_scale` (uniform in `[-amplitude, amplitude]` per axis) and
/// bilinearly interpolated to every pixel.
pub fn deform_mask<T: Real>(
    mask: &BinaryMask,
    region: RegionTag,
    params: &MaskDeformParams,
) -> Result<SoftMask<T>> {
    params.validate()?;
    let (h, w) = (mask.height, mask.width);
    if mask.count() == 0 {
        return Err(Error::DegenerateGeometry(format!("{region} mask has empty support")));
    }
    let mut values: Vec<T> = mask.bits.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();

    if params.elastic_amplitude > 0.0 && params.elastic_scale > 0.0 {
        let field = elastic_field(h, w, params);
        let src = values.clone();
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = field[y * w + x];
                let sy = T::lit(y as f64 + dy);
                let sx = T::lit(x as f64 + dx);
                values[y * w + x] = sample_bilinear_strided(&src, h, w, 1, 0, sy, sx);
            }
        }
    }
    if params.blur_sigma > 0.0 {
        values = gaussian_blur_plane(&values, h, w, T::lit(params.blur_sigma));
    }
    if params.amplitude_scale != 1.0 {
        let a = T::lit(params.amplitude_scale);
        for v in values.iter_mut() {
            *v *= a;
        }
    }
    for v in values.iter_mut() {
        *v = v.clamp_to(T::zero(), T::one());
    }
    if values.iter().all(|v| *v <= T::zero()) {
        return Err(Error::DegenerateGeometry(format!("{region} mask support vanished after warping")));
    }
    SoftMask::new(region, h, w, values)
}

fn elastic_field(h: usize, w: usize, params: &MaskDeformParams) -> Vec<(f64, f64)> {
    let mut rng = rng_from_seed(params.seed);
    let s = params.elastic_scale;
    let gh = (h as f64 / s).ceil() as usize + 2;
    let gw = (w as f64 / s).ceil() as usize + 2;
    let a = params.elastic_amplitude;
    let nodes: Vec<(f64, f64)> = (0..gh * gw)
        .map(|_| (rng.random_range(-a..=a), rng.random_range(-a..=a)))
        .collect();
    let mut field = Vec::with_capacity(h * w);
    for y in 0..h {
        let gy = y as f64 / s;
        let y0 = gy.floor() as usize;
        let ty = gy - y0 as f64;
        for x in 0..w {
            let gx = x as f64 / s;
            let x0 = gx.floor() as usize;
            let tx = gx - x0 as f64;
            let n = |yy: usize, xx: usize| nodes[yy * gw + xx];
            let lerp = |p: (f64, f64), q: (f64, f64), t: f64| (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1));
            let top = lerp(n(y0, x0), n(y0, x0 + 1), tx);
            let bot = lerp(n(y0 + 1, x0), n(y0 + 1, x0 + 1), tx);
            field.push(lerp(top, bot, ty));
        }
    }
    field
}
