//! Self-blended pseudo-forgery pairs.
//!
//! Two independently augmented views of the same frame are composited
//! through a region mask: `fake = source ⊙ M + target ⊙ (1 − M)`. The target
//! view is the "real" sample of the pair. Nothing but the base frame enters
//! a pair, so identity is preserved by construction.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{apply_augmentation, sample_aug_params, AugmentationConfig, AugmentationParams};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::masks::{region_mask, LandmarkSet, MaskDeformConfig, RegionOptions, RegionTag, SoftMask};
use crate::rng::{derive_seed, tag};
use crate::scalar::Real;

/// Everything that shapes pair generation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    pub augmentation: AugmentationConfig,
    pub deform: MaskDeformConfig,
    pub regions: RegionOptions,
}

impl PairConfig {
    /// No augmentation and no mask deformation.
    pub fn identity() -> Self {
        PairConfig {
            augmentation: AugmentationConfig::identity(),
            deform: MaskDeformConfig::none(),
            regions: RegionOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.augmentation.validate()?;
        self.deform.validate()
    }
}

/// A real view (label 0) and its self-blended counterpart (label 1).
#[derive(Debug, Clone, PartialEq)]
pub struct BlendPair<T> {
    pub region: RegionTag,
    pub base_id: String,
    pub real_view: Image<T>,
    pub fake_view: Image<T>,
    pub mask: SoftMask<T>,
    pub seed: u64,
    pub source_params: AugmentationParams,
    pub target_params: AugmentationParams,
    /// The blend reproduced the real view exactly; such pairs carry no
    /// signal and are dropped from training batches.
    pub degenerate_pair: bool,
}

/// Per-pixel, per-channel `source · M + target · (1 − M)`.
pub fn blend<T: Real>(source: &Image<T>, target: &Image<T>, mask: &SoftMask<T>) -> Result<Image<T>> {
    let (h, w, c) = source.dims();
    if target.dims() != (h, w, c) || mask.height() != h || mask.width() != w {
        return Err(Error::Shape(format!(
            "blend inputs differ: source {:?}, target {:?}, mask {}x{}",
            source.dims(),
            target.dims(),
            mask.height(),
            mask.width()
        )));
    }
    let m = mask.values();
    let data = source
        .data()
        .iter()
        .zip(target.data())
        .enumerate()
        .map(|(i, (&s, &t))| {
            let a = m[i / c];
            s * a + t * (T::one() - a)
        })
        .collect();
    Image::new(h, w, c, data)
}

/// Build one training pair: sample view parameters, augment both views,
/// build and deform the region mask, blend.
pub fn make_pair<T: Real>(
    base: &Image<T>,
    base_id: &str,
    landmarks: &LandmarkSet,
    region: RegionTag,
    seed: u64,
    config: &PairConfig,
) -> Result<BlendPair<T>> {
    base.ensure_blendable()?;
    if landmarks.width() != base.width() || landmarks.height() != base.height() {
        return Err(Error::Shape(format!(
            "landmarks are for {}x{}, image is {}x{}",
            landmarks.width(),
            landmarks.height(),
            base.width(),
            base.height()
        )));
    }
    config.deform.validate()?;
    let (source_params, target_params) = sample_aug_params(derive_seed(seed, tag::PAIR), &config.augmentation)?;
    let source = apply_augmentation(base, &source_params);
    let target = apply_augmentation(base, &target_params);
    let mask = region_mask(landmarks, region, &config.regions, &config.deform, seed)?;
    let fake_view = blend(&source, &target, &mask)?;
    let degenerate_pair = fake_view == target;
    Ok(BlendPair {
        region,
        base_id: base_id.to_string(),
        real_view: target,
        fake_view,
        mask,
        seed,
        source_params,
        target_params,
        degenerate_pair,
    })
}

/// Sidecar record written next to dumped pair images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairManifestEntry {
    pub base_id: String,
    pub region: RegionTag,
    pub seed: u64,
    pub label: u8,
    pub file: String,
    pub degenerate_pair: bool,
}

/// Write `<stem>_real.png`, `<stem>_fake.png` and `<stem>_mask.png` into
/// `dir`, returning the two labelled manifest entries.
pub fn dump_pair<T: Real>(pair: &BlendPair<T>, dir: &Path, stem: &str) -> Result<Vec<PairManifestEntry>> {
    let real = format!("{stem}_real.png");
    let fake = format!("{stem}_fake.png");
    pair.real_view.save_png(&dir.join(&real))?;
    pair.fake_view.save_png(&dir.join(&fake))?;
    let mask_img = Image::new(pair.mask.height(), pair.mask.width(), 1, pair.mask.values().to_vec())?;
    mask_img.save_png(&dir.join(format!("{stem}_mask.png")))?;
    let entry = |file: String, label: u8| PairManifestEntry {
        base_id: pair.base_id.clone(),
        region: pair.region,
        seed: pair.seed,
        label,
        file,
        degenerate_pair: pair.degenerate_pair,
    };
    Ok(vec![entry(real, 0), entry(fake, 1)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blend_identities() {
        let s = Image::filled(32, 32, 3, 0.0f64);
        let t = Image::filled(32, 32, 3, 1.0f64);
        let half = SoftMask::constant(RegionTag::Face, 32, 32, 0.5).unwrap();
        assert!(blend(&s, &t, &half).unwrap().data().iter().all(|v| *v == 0.5));
        let zero = SoftMask::constant(RegionTag::Face, 32, 32, 0.0).unwrap();
        assert_eq!(blend(&s, &t, &zero).unwrap(), t);
        let one = SoftMask::constant(RegionTag::Face, 32, 32, 1.0).unwrap();
        assert_eq!(blend(&s, &t, &one).unwrap(), s);
    }

    #[test]
    fn blend_rejects_mismatched_shapes() {
        let s = Image::filled(32, 32, 3, 0.2f64);
        let t = Image::filled(32, 33, 3, 0.2f64);
        let m = SoftMask::constant(RegionTag::Lip, 32, 32, 0.5).unwrap();
        assert!(matches!(blend(&s, &t, &m), Err(Error::Shape(_))));
    }
}
