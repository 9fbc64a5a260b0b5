//! Region geometry and soft blending masks for the three facial
//! granularities: full face, lips, and lower face.

pub mod deform;
pub mod landmarks;
pub mod polygon;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, tag};
use crate::scalar::Real;

pub use deform::{deform_mask, MaskDeformConfig, MaskDeformParams};
pub use landmarks::{LandmarkRecord, LandmarkSet, Point};
pub use polygon::{rasterize, BinaryMask};

use landmarks::{JAW, MOUTH, NOSE_BASE};

/// Facial region a mask, pair or visual branch is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionTag {
    Face,
    Lip,
    LowerFace,
}

impl RegionTag {
    pub const ALL: [RegionTag; 3] = [RegionTag::Face, RegionTag::Lip, RegionTag::LowerFace];

    pub fn as_str(self) -> &'static str {
        match self {
            RegionTag::Face => "face",
            RegionTag::Lip => "lip",
            RegionTag::LowerFace => "lower-face",
        }
    }

    /// Code used in binary checkpoints.
    pub fn code(self) -> u8 {
        match self {
            RegionTag::Face => 0,
            RegionTag::Lip => 1,
            RegionTag::LowerFace => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(RegionTag::Face),
            1 => Some(RegionTag::Lip),
            2 => Some(RegionTag::LowerFace),
            _ => None,
        }
    }

    /// The enclosing region whose support clips this one, if any.
    pub fn parent(self) -> Option<RegionTag> {
        match self {
            RegionTag::Face => None,
            RegionTag::LowerFace => Some(RegionTag::Face),
            RegionTag::Lip => Some(RegionTag::LowerFace),
        }
    }

    fn seed_tag(self) -> u64 {
        match self {
            RegionTag::Face => tag::MASK_FACE,
            RegionTag::LowerFace => tag::MASK_LOWER_FACE,
            RegionTag::Lip => tag::MASK_LIP,
        }
    }
}

impl fmt::Display for RegionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegionTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "face" | "fb" => Ok(RegionTag::Face),
            "lip" | "lb" => Ok(RegionTag::Lip),
            "lower-face" | "lower_face" | "lowerface" | "lfb" => Ok(RegionTag::LowerFace),
            other => Err(Error::Config(format!("unknown region {other:?}"))),
        }
    }
}

/// Per-pixel blend weights in `[0, 1]` for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask<T> {
    region: RegionTag,
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Real> SoftMask<T> {
    pub fn new(region: RegionTag, height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "mask needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero() || *v > T::one()) {
            return Err(Error::Numerical("mask value outside [0,1]".into()));
        }
        Ok(SoftMask { region, height, width, values })
    }

    /// Constant mask, mostly for tests of the blend identities.
    pub fn constant(region: RegionTag, height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(region, height, width, vec![value; height * width])
    }

    pub fn region(&self) -> RegionTag {
        self.region
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> T {
        self.values[y * self.width + x]
    }

    pub fn support(&self) -> Vec<bool> {
        self.values.iter().map(|v| *v > T::zero()).collect()
    }

    pub fn support_size(&self) -> usize {
        self.values.iter().filter(|v| **v > T::zero()).count()
    }

    /// Zero every pixel outside the support of `outer`.
    pub fn clip_to_support_of(&mut self, outer: &SoftMask<T>) -> Result<()> {
        if outer.height != self.height || outer.width != self.width {
            return Err(Error::Shape("mask dimensions differ".into()));
        }
        for (v, o) in self.values.iter_mut().zip(&outer.values) {
            if *o <= T::zero() {
                *v = T::zero();
            }
        }
        Ok(())
    }
}

/// Geometry knobs for the region polygons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionOptions {
    /// Lip hull dilation as a fraction of mouth width.
    pub lip_dilation: f64,
    /// Raise the brow points by this fraction of the brow-to-chin height
    /// before taking the face hull. `0` keeps the plain hull.
    pub face_forehead_extend: f64,
}

impl Default for RegionOptions {
    fn default() -> Self {
        RegionOptions {
            lip_dilation: 0.15,
            face_forehead_extend: 0.0,
        }
    }
}

/// Polygon (pixel coordinates, clipped to the image) for a region.
///
/// * face: convex hull of all 68 points;
/// * lip: hull of points 48–67 dilated by `lip_dilation × mouth width`;
/// * lower face: jaw points 3–13 closed by a horizontal edge at the nose-base
///   height (landmark 33), with anything above that line cut away.
pub fn region_polygon(landmarks: &LandmarkSet, region: RegionTag, opts: &RegionOptions) -> Result<Vec<Point>> {
    let (w, h) = (landmarks.width() as f64, landmarks.height() as f64);
    let poly = match region {
        RegionTag::Face => {
            let mut pts = landmarks.points().to_vec();
            if opts.face_forehead_extend > 0.0 {
                let brows = landmarks.subset(landmarks::BROWS);
                let brow_y = brows.iter().map(|p| p.1).sum::<f64>() / brows.len() as f64;
                let lift = opts.face_forehead_extend * (landmarks.point(8).1 - brow_y).max(0.0);
                pts.extend(brows.iter().map(|&(x, y)| (x, y - lift)));
            }
            polygon::convex_hull(&pts)?
        }
        RegionTag::Lip => {
            let hull = polygon::convex_hull(landmarks.subset(MOUTH))?;
            polygon::dilate_convex(&hull, opts.lip_dilation * landmarks.mouth_width())?
        }
        RegionTag::LowerFace => {
            let top = landmarks.point(NOSE_BASE).1;
            let jaw = &landmarks.subset(JAW)[3..=13];
            let mut p = Vec::with_capacity(jaw.len() + 2);
            p.push((jaw[0].0, top));
            p.extend_from_slice(jaw);
            p.push((jaw[jaw.len() - 1].0, top));
            polygon::clip_below(&p, top)
        }
    };
    let clipped = polygon::clip_to_rect(&poly, w, h);
    if clipped.len() < 3 || polygon::area(&clipped) <= 1e-9 {
        return Err(Error::DegenerateGeometry(format!("{region} polygon has no area")));
    }
    Ok(clipped)
}

/// Deformation parameters for `region` under the per-seed policy: each region
/// in the chain gets its own stream derived from the pair seed.
pub fn region_deform_params(cfg: &MaskDeformConfig, region: RegionTag, seed: u64) -> MaskDeformParams {
    cfg.sample(derive_seed(seed, region.seed_tag()))
}

/// Build the soft mask for `region`, clipped to the supports of its enclosing
/// regions (lip ⊆ lower face ⊆ face). The enclosing masks are built with the
/// same seed policy so the chain is a pure function of its inputs.
pub fn region_mask<T: Real>(
    landmarks: &LandmarkSet,
    region: RegionTag,
    opts: &RegionOptions,
    deform: &MaskDeformConfig,
    seed: u64,
) -> Result<SoftMask<T>> {
    let chain: &[RegionTag] = match region {
        RegionTag::Face => &[RegionTag::Face],
        RegionTag::LowerFace => &[RegionTag::Face, RegionTag::LowerFace],
        RegionTag::Lip => &[RegionTag::Face, RegionTag::LowerFace, RegionTag::Lip],
    };
    let mut outer: Option<SoftMask<T>> = None;
    for &r in chain {
        let mut m = single_region_mask(landmarks, r, opts, &region_deform_params(deform, r, seed))?;
        if let Some(o) = &outer {
            m.clip_to_support_of(o)?;
            if m.support_size() == 0 {
                return Err(Error::DegenerateGeometry(format!("{r} mask vanished after nesting clip")));
            }
        }
        outer = Some(m);
    }
    Ok(outer.expect("chain is nonempty"))
}

/// All three nested masks at once.
pub fn region_masks<T: Real>(
    landmarks: &LandmarkSet,
    opts: &RegionOptions,
    deform: &MaskDeformConfig,
    seed: u64,
) -> Result<[SoftMask<T>; 3]> {
    let face = single_region_mask(landmarks, RegionTag::Face, opts, &region_deform_params(deform, RegionTag::Face, seed))?;
    let mut lower = single_region_mask(
        landmarks,
        RegionTag::LowerFace,
        opts,
        &region_deform_params(deform, RegionTag::LowerFace, seed),
    )?;
    lower.clip_to_support_of(&face)?;
    let mut lip = single_region_mask(landmarks, RegionTag::Lip, opts, &region_deform_params(deform, RegionTag::Lip, seed))?;
    lip.clip_to_support_of(&lower)?;
    for m in [&lower, &lip] {
        if m.support_size() == 0 {
            return Err(Error::DegenerateGeometry(format!("{} mask vanished after nesting clip", m.region())));
        }
    }
    Ok([face, lip, lower])
}

fn single_region_mask<T: Real>(
    landmarks: &LandmarkSet,
    region: RegionTag,
    opts: &RegionOptions,
    params: &MaskDeformParams,
) -> Result<SoftMask<T>> {
    let poly = region_polygon(landmarks, region, opts)?;
    let bin = rasterize(&poly, landmarks.height(), landmarks.width())?;
    deform_mask(&bin, region, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_landmarks() -> LandmarkSet {
        // Rough frontal layout on a 64x64 canvas.
        let mut pts = Vec::with_capacity(68);
        for i in 0..17 {
            let a = std::f64::consts::PI * (i as f64 / 16.0);
            pts.push((32.0 - 20.0 * a.cos(), 30.0 + 22.0 * a.sin()));
        }
        for i in 0..10 {
            pts.push((16.0 + 3.5 * i as f64, 18.0));
        }
        for i in 0..9 {
            pts.push((32.0 + (i as f64 - 4.0) * 0.8, 22.0 + i as f64 * 1.5));
        }
        for i in 0..12 {
            let a = std::f64::consts::TAU * i as f64 / 12.0;
            pts.push((if i < 6 { 24.0 } else { 40.0 } + 3.0 * a.cos(), 24.0 + 1.5 * a.sin()));
        }
        for i in 0..12 {
            let a = std::f64::consts::TAU * i as f64 / 12.0;
            pts.push((32.0 - 7.0 * a.cos(), 42.0 - 3.0 * a.sin()));
        }
        for i in 0..8 {
            let a = std::f64::consts::TAU * i as f64 / 8.0;
            pts.push((32.0 - 4.0 * a.cos(), 42.0 - 1.0 * a.sin()));
        }
        LandmarkSet::new(pts, 64, 64).unwrap()
    }

    #[test]
    fn region_tags_parse_and_print() {
        for r in RegionTag::ALL {
            assert_eq!(r.as_str().parse::<RegionTag>().unwrap(), r);
            assert_eq!(RegionTag::from_code(r.code()), Some(r));
        }
        assert!("nose".parse::<RegionTag>().is_err());
    }

    #[test]
    fn lower_face_sits_below_nose_base() {
        let lm = toy_landmarks();
        let poly = region_polygon(&lm, RegionTag::LowerFace, &RegionOptions::default()).unwrap();
        let top = lm.point(NOSE_BASE).1;
        assert!(poly.iter().all(|p| p.1 >= top - 1e-9));
        assert!(polygon::is_simple(&poly));
    }

    #[test]
    fn masks_nest() {
        let lm = toy_landmarks();
        for seed in 0..5 {
            let [face, lip, lower] =
                region_masks::<f64>(&lm, &RegionOptions::default(), &MaskDeformConfig::default(), seed).unwrap();
            let (f, l, lo) = (face.support(), lip.support(), lower.support());
            for i in 0..f.len() {
                assert!(!l[i] || lo[i]);
                assert!(!lo[i] || f[i]);
            }
        }
    }

    #[test]
    fn single_region_mask_matches_chain() {
        let lm = toy_landmarks();
        let cfg = MaskDeformConfig::default();
        let [_, lip, lower] = region_masks::<f64>(&lm, &RegionOptions::default(), &cfg, 4).unwrap();
        assert_eq!(region_mask::<f64>(&lm, RegionTag::Lip, &RegionOptions::default(), &cfg, 4).unwrap(), lip);
        assert_eq!(
            region_mask::<f64>(&lm, RegionTag::LowerFace, &RegionOptions::default(), &cfg, 4).unwrap(),
            lower
        );
    }

    #[test]
    fn forehead_extension_grows_the_face() {
        let lm = toy_landmarks();
        let plain = region_polygon(&lm, RegionTag::Face, &RegionOptions::default()).unwrap();
        let ext = region_polygon(
            &lm,
            RegionTag::Face,
            &RegionOptions { face_forehead_extend: 0.3, ..Default::default() },
        )
        .unwrap();
        assert!(polygon::area(&ext) > polygon::area(&plain));
    }
}
