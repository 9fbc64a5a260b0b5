//! Photometric and geometric view augmentation.
//!
//! Order of application: brightness → contrast → hue/saturation →
//! resize cycle → sharpen, then scale about the image center → translate
//! (bilinear, replicated borders). Every op whose parameter is at its
//! identity value is skipped, so identity parameters return the input
//! unchanged.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{derive_seed, rng_from_seed, tag, Rng};
use crate::scalar::Real;

/// Concrete perturbation for one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub brightness_delta: f64,
    pub contrast_factor: f64,
    /// Degrees.
    pub hue_shift: f64,
    pub saturation_factor: f64,
    /// Downscale by this factor and upscale back; `1` disables.
    pub resize_cycle_factor: f64,
    pub sharpen_amount: f64,
    /// Translation as a fraction of (width, height).
    pub translate: (f64, f64),
    pub scale_factor: f64,
}

impl AugmentationParams {
    pub const IDENTITY: AugmentationParams = AugmentationParams {
        brightness_delta: 0.0,
        contrast_factor: 1.0,
        hue_shift: 0.0,
        saturation_factor: 1.0,
        resize_cycle_factor: 1.0,
        sharpen_amount: 0.0,
        translate: (0.0, 0.0),
        scale_factor: 1.0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn is_geometric_identity(&self) -> bool {
        self.translate == (0.0, 0.0) && self.scale_factor == 1.0
    }

    /// Translation in pixels for an image of the given size.
    pub fn translate_pixels(&self, height: usize, width: usize) -> (f64, f64) {
        (self.translate.0 * width as f64, self.translate.1 * height as f64)
    }
}

impl Default for AugmentationParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    pub const fn point(v: f64) -> Self {
        Range { min: v, max: v }
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return Err(Error::Config(format!("{name}: invalid range [{}, {}]", self.min, self.max)));
        }
        Ok(())
    }
}

/// Sampling ranges for both views of a pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub brightness_delta: Range,
    pub contrast_factor: Range,
    pub hue_shift: Range,
    pub saturation_factor: Range,
    pub resize_cycle_factor: Range,
    pub sharpen_amount: Range,
    /// Fraction of width (dx) and height (dy).
    pub translate_frac: Range,
    pub scale_factor: Range,
    /// Each photometric op is applied with this probability (otherwise left
    /// at identity).
    pub photometric_prob: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            brightness_delta: Range::new(-0.1, 0.1),
            contrast_factor: Range::new(0.8, 1.2),
            hue_shift: Range::new(-10.0, 10.0),
            saturation_factor: Range::new(0.8, 1.2),
            resize_cycle_factor: Range::new(0.5, 1.0),
            sharpen_amount: Range::new(0.0, 0.5),
            translate_frac: Range::new(-0.03, 0.03),
            scale_factor: Range::new(0.97, 1.03),
            photometric_prob: 0.5,
        }
    }
}

impl AugmentationConfig {
    /// Every range collapsed to its identity value.
    pub fn identity() -> Self {
        AugmentationConfig {
            brightness_delta: Range::point(0.0),
            contrast_factor: Range::point(1.0),
            hue_shift: Range::point(0.0),
            saturation_factor: Range::point(1.0),
            resize_cycle_factor: Range::point(1.0),
            sharpen_amount: Range::point(0.0),
            translate_frac: Range::point(0.0),
            scale_factor: Range::point(1.0),
            photometric_prob: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.brightness_delta.check("brightness_delta")?;
        self.contrast_factor.check("contrast_factor")?;
        self.hue_shift.check("hue_shift")?;
        self.saturation_factor.check("saturation_factor")?;
        self.resize_cycle_factor.check("resize_cycle_factor")?;
        self.sharpen_amount.check("sharpen_amount")?;
        self.translate_frac.check("translate_frac")?;
        self.scale_factor.check("scale_factor")?;
        if self.contrast_factor.min < 0.0 || self.saturation_factor.min < 0.0 {
            return Err(Error::Config("contrast/saturation factors must be non-negative".into()));
        }
        if self.resize_cycle_factor.min <= 0.0 || self.resize_cycle_factor.max > 1.0 {
            return Err(Error::Config("resize_cycle_factor must lie in (0, 1]".into()));
        }
        if self.scale_factor.min <= 0.0 {
            return Err(Error::Config("scale_factor must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.photometric_prob) {
            return Err(Error::Config("photometric_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn sample_view(&self, rng: &mut Rng, geometric: bool) -> AugmentationParams {
        let p = self.photometric_prob;
        let pick = |r: &Range, identity: f64, rng: &mut Rng| {
            let v = r.sample(rng);
            let on = p >= 1.0 || rng.random::<f64>() < p;
            if on {
                v
            } else {
                identity
            }
        };
        let brightness_delta = pick(&self.brightness_delta, 0.0, rng);
        let contrast_factor = pick(&self.contrast_factor, 1.0, rng);
        let hue_shift = pick(&self.hue_shift, 0.0, rng);
        let saturation_factor = pick(&self.saturation_factor, 1.0, rng);
        let resize_cycle_factor = pick(&self.resize_cycle_factor, 1.0, rng);
        let sharpen_amount = pick(&self.sharpen_amount, 0.0, rng);
        let (dx, dy, s) = (
            self.translate_frac.sample(rng),
            self.translate_frac.sample(rng),
            self.scale_factor.sample(rng),
        );
        let (translate, scale_factor) = if geometric { ((dx, dy), s) } else { ((0.0, 0.0), 1.0) };
        AugmentationParams {
            brightness_delta,
            contrast_factor,
            hue_shift,
            saturation_factor,
            resize_cycle_factor,
            sharpen_amount,
            translate,
            scale_factor,
        }
    }
}

/// Draw (source, target) parameters for one pair. The two views use
/// independent streams derived from `seed`; only the source view receives a
/// geometric perturbation.
pub fn sample_aug_params(seed: u64, config: &AugmentationConfig) -> Result<(AugmentationParams, AugmentationParams)> {
    config.validate()?;
    let mut src_rng = rng_from_seed(derive_seed(seed, tag::AUG_SOURCE));
    let mut tgt_rng = rng_from_seed(derive_seed(seed, tag::AUG_TARGET));
    Ok((config.sample_view(&mut src_rng, true), config.sample_view(&mut tgt_rng, false)))
}

/// Apply `params` to `image`; output is clamped to `[0, 1]`.
pub fn apply_augmentation<T: Real>(image: &Image<T>, params: &AugmentationParams) -> Image<T> {
    let (h, w, c) = image.dims();
    let mut data = image.data().to_vec();

    if params.brightness_delta != 0.0 {
        let d = T::lit(params.brightness_delta);
        for v in data.iter_mut() {
            *v = (*v + d).clamp_to(T::zero(), T::one());
        }
    }
    if params.contrast_factor != 1.0 {
        contrast(&mut data, c, T::lit(params.contrast_factor));
    }
    if c == 3 && (params.hue_shift != 0.0 || params.saturation_factor != 1.0) {
        hue_saturation(&mut data, T::lit(params.hue_shift), T::lit(params.saturation_factor));
    }
    let mut img = Image::from_clamped(h, w, c, data).expect("dimensions unchanged");
    if params.resize_cycle_factor != 1.0 {
        let f = params.resize_cycle_factor;
        let sh = ((h as f64 * f).round() as usize).max(1);
        let sw = ((w as f64 * f).round() as usize).max(1);
        img = img.resize(sh, sw).resize(h, w);
    }
    if params.sharpen_amount != 0.0 {
        img = sharpen(&img, T::lit(params.sharpen_amount));
    }
    if !params.is_geometric_identity() {
        img = scale_translate(&img, params);
    }
    img
}

/// `out = clamp(mean_c + k · (in − mean_c))` with `mean_c` the per-channel mean.
fn contrast<T: Real>(data: &mut [T], channels: usize, k: T) {
    let n = T::from_usize_lossy(data.len() / channels);
    let means: Vec<T> = (0..channels)
        .map(|ch| data.iter().skip(ch).step_by(channels).copied().sum::<T>() / n)
        .collect();
    for (i, v) in data.iter_mut().enumerate() {
        let m = means[i % channels];
        *v = (m + k * (*v - m)).clamp_to(T::zero(), T::one());
    }
}

fn hue_saturation<T: Real>(data: &mut [T], hue_deg: T, sat: T) {
    let six = T::lit(6.0);
    let shift = hue_deg / T::lit(60.0);
    for px in data.chunks_exact_mut(3) {
        let (r, g, b) = (px[0], px[1], px[2]);
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let delta = max - min;
        let v = max;
        let s = if max > T::zero() { delta / max } else { T::zero() };
        let mut hh = if delta <= T::zero() {
            T::zero()
        } else if max == r {
            ((g - b) / delta) % six
        } else if max == g {
            (b - r) / delta + T::lit(2.0)
        } else {
            (r - g) / delta + T::lit(4.0)
        };
        hh = hh + shift;
        hh = hh - six * (hh / six).floor();
        let s = (s * sat).clamp_to(T::zero(), T::one());
        let cc = v * s;
        let x = cc * (T::one() - ((hh % T::lit(2.0)) - T::one()).abs());
        let m = v - cc;
        let sector = hh.floor().to_i32().unwrap_or(0).rem_euclid(6);
        let (r1, g1, b1) = match sector {
            0 => (cc, x, T::zero()),
            1 => (x, cc, T::zero()),
            2 => (T::zero(), cc, x),
            3 => (T::zero(), x, cc),
            4 => (x, T::zero(), cc),
            _ => (cc, T::zero(), x),
        };
        px[0] = (r1 + m).clamp_to(T::zero(), T::one());
        px[1] = (g1 + m).clamp_to(T::zero(), T::one());
        px[2] = (b1 + m).clamp_to(T::zero(), T::one());
    }
}

/// Unsharp mask with a 3×3 box blur: `out = in + a · (in − box(in))`.
fn sharpen<T: Real>(img: &Image<T>, amount: T) -> Image<T> {
    let (h, w, c) = img.dims();
    let ninth = T::lit(1.0 / 9.0);
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = T::zero();
                for dy in [-1isize, 0, 1] {
                    for dx in [-1isize, 0, 1] {
                        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        acc += img.get(yy, xx, ch);
                    }
                }
                let v = img.get(y, x, ch);
                data.push(v + amount * (v - acc * ninth));
            }
        }
    }
    Image::from_clamped(h, w, c, data).expect("dimensions unchanged")
}

/// Scale about the image center, then translate. Inverse-mapped bilinear
/// sampling with replicated borders.
fn scale_translate<T: Real>(img: &Image<T>, params: &AugmentationParams) -> Image<T> {
    let (h, w, c) = img.dims();
    let (tx, ty) = params.translate_pixels(h, w);
    let s = params.scale_factor;
    let (cx, cy) = (w as f64 / 2.0 - 0.5, h as f64 / 2.0 - 0.5);
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        let sy = cy + (y as f64 - cy - ty) / s;
        for x in 0..w {
            let sx = cx + (x as f64 - cx - tx) / s;
            for ch in 0..c {
                data.push(img.sample_bilinear(T::lit(sy), T::lit(sx), ch));
            }
        }
    }
    Image::from_clamped(h, w, c, data).expect("dimensions unchanged")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image<f64> {
        let data = (0..h * w * 3)
            .map(|i| {
                let p = i / 3;
                let (y, x, ch) = (p / w, p % w, i % 3);
                ((y * 7 + x * 3 + ch * 11) % 97) as f64 / 96.0
            })
            .collect();
        Image::new(h, w, 3, data).unwrap()
    }

    #[test]
    fn identity_params_return_input() {
        let img = ramp(33, 40);
        assert_eq!(apply_augmentation(&img, &AugmentationParams::IDENTITY), img);
    }

    #[test]
    fn brightness_is_additive() {
        let img = Image::filled(32, 32, 3, 0.5f64);
        let p = AugmentationParams { brightness_delta: 0.1, ..AugmentationParams::IDENTITY };
        let out = apply_augmentation(&img, &p);
        assert!(out.data().iter().all(|v| (v - 0.6).abs() < 1e-15));
    }

    #[test]
    fn hue_rotation_by_full_turn_is_near_identity() {
        let img = ramp(32, 32);
        let p = AugmentationParams { hue_shift: 360.0, ..AugmentationParams::IDENTITY };
        let out = apply_augmentation(&img, &p);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let p = AugmentationParams { saturation_factor: 0.0, ..AugmentationParams::IDENTITY };
        let gray = apply_augmentation(&img, &p);
        for px in gray.data().chunks(3) {
            assert!((px[0] - px[1]).abs() < 1e-12 && (px[1] - px[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn source_gets_geometry_target_does_not() {
        let cfg = AugmentationConfig::default();
        for seed in 0..50 {
            let (s, t) = sample_aug_params(seed, &cfg).unwrap();
            assert!(t.is_geometric_identity());
            assert!(s.scale_factor >= 0.97 && s.scale_factor <= 1.03);
            assert_eq!(sample_aug_params(seed, &cfg).unwrap(), (s, t));
        }
    }

    #[test]
    fn inverted_range_is_a_config_error() {
        let mut cfg = AugmentationConfig::default();
        cfg.brightness_delta = Range::new(0.2, -0.2);
        assert!(matches!(sample_aug_params(1, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn collapsed_ranges_give_identity_views() {
        let (s, t) = sample_aug_params(5, &AugmentationConfig::identity()).unwrap();
        assert!(s.is_identity() && t.is_identity());
    }

    #[test]
    fn translation_moves_content() {
        let mut img = Image::filled(32, 32, 1, 0.0f64);
        img.set(10, 10, 0, 1.0);
        let p = AugmentationParams { translate: (2.0 / 32.0, 1.0 / 32.0), ..AugmentationParams::IDENTITY };
        let out = apply_augmentation(&img, &p);
        assert!((out.get(11, 12, 0) - 1.0).abs() < 1e-12);
        assert!(out.get(10, 10, 0).abs() < 1e-12);
    }
}
