//! Region-specific real-vs-blend classifiers.
//!
//! All three branches share one encoder architecture and differ only in the
//! region used to build their training blends. Two encoder kinds exist:
//!
//! * `tiny_conv`: four 3×3 stride-2 convolutions with ReLU, global average
//!   pooling, then an affine projection to `feature_dim`;
//! * `patch_stats`: fixed per-patch statistics (channel mean and mean squared
//!   finite-difference energy on a `patch_grid × patch_grid` grid) followed by
//!   an affine projection. Its trainable path is affine only.
//!
//! The classifier is an affine map to one logit, clipped to `[-30, 30]`
//! before the sigmoid. Probabilities mean P(pseudo-fake).

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::masks::{LandmarkSet, RegionTag};
use crate::nn::{self, Param, Sgd, SgdConfig};
use crate::pseudo_forgery::{make_pair, PairConfig};
use crate::rng::{derive_seed, rng_from_seed, tag};
use crate::scalar::{sigmoid, Real};

pub const LOGIT_CLIP: f64 = 30.0;
pub const PROB_CLIP: f64 = 1e-7;
/// Upper bound on frames sampled per video at inference.
pub const MAX_VIDEO_FRAMES: usize = 8;
/// Margin added around the landmark bounding box before cropping, as a
/// fraction of its larger side.
pub const CROP_MARGIN: f64 = 0.1;
/// Encoders always see three channels; gray frames are replicated.
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    TinyConv,
    PatchStats,
}

impl EncoderKind {
    pub fn code(self) -> u8 {
        match self {
            EncoderKind::TinyConv => 0,
            EncoderKind::PatchStats => 1,
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::TinyConv => "tiny_conv",
            EncoderKind::PatchStats => "patch_stats",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny_conv" => Ok(EncoderKind::TinyConv),
            "patch_stats" => Ok(EncoderKind::PatchStats),
            other => Err(Error::Config(format!("unknown encoder kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    /// Side of the square encoder input.
    pub input_size: usize,
    pub feature_dim: usize,
    /// Output channels of the four convolution blocks (`tiny_conv`).
    pub conv_channels: [usize; 4],
    /// Patches per side (`patch_stats`).
    pub patch_grid: usize,
    pub seed: u64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            kind: EncoderKind::TinyConv,
            input_size: 128,
            feature_dim: 128,
            conv_channels: [8, 16, 32, 64],
            patch_grid: 4,
            seed: 0,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 8 {
            return Err(Error::Config(format!("feature_dim {} < 8", self.feature_dim)));
        }
        if self.input_size < 8 {
            return Err(Error::Config(format!("input_size {} < 8", self.input_size)));
        }
        if self.conv_channels.contains(&0) {
            return Err(Error::Config("conv_channels must be positive".into()));
        }
        if self.patch_grid == 0 || self.patch_grid > self.input_size {
            return Err(Error::Config("patch_grid must lie in [1, input_size]".into()));
        }
        Ok(())
    }

    fn stats_len(&self) -> usize {
        self.patch_grid * self.patch_grid * INPUT_CHANNELS * 2
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.feature_dim;
        let mut out = Vec::new();
        let proj_in = match self.kind {
            EncoderKind::TinyConv => {
                let mut c_in = INPUT_CHANNELS;
                for (k, &c) in self.conv_channels.iter().enumerate() {
                    out.push((format!("conv{k}.weight"), vec![c, c_in, 3, 3]));
                    out.push((format!("conv{k}.bias"), vec![c]));
                    c_in = c;
                }
                c_in
            }
            EncoderKind::PatchStats => self.stats_len(),
        };
        out.push(("proj.weight".into(), vec![d, proj_in]));
        out.push(("proj.bias".into(), vec![d]));
        out.push(("cls.weight".into(), vec![1, d]));
        out.push(("cls.bias".into(), vec![1]));
        out
    }
}

/// Provenance recorded with a trained branch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub steps: u64,
    pub seed: u64,
    pub config_hash: String,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchModel<T> {
    pub region: RegionTag,
    pub spec: EncoderSpec,
    pub params: Vec<Param<T>>,
    pub meta: TrainingMeta,
}

/// Intermediate values of one forward pass, kept for backprop.
struct Trace<T> {
    /// Input of each conv block, then the pooled vector (`tiny_conv`), or the
    /// statistics vector (`patch_stats`).
    acts: Vec<Vec<T>>,
    sides: Vec<usize>,
    feature: Vec<T>,
    logit: T,
}

impl<T: Real> BranchModel<T> {
    /// Seeded He-normal initialization; biases start at zero.
    pub fn init(region: RegionTag, spec: &EncoderSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_from_seed(derive_seed(spec.seed, tag::INIT));
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with(".bias") {
                    Param::zeros(&name, &shape)
                } else {
                    let fan_in = shape[1..].iter().product();
                    Param::he_normal(&name, &shape, fan_in, &mut rng)
                }
            })
            .collect();
        Ok(BranchModel {
            region,
            spec: spec.clone(),
            params,
            meta: TrainingMeta { seed: spec.seed, ..Default::default() },
        })
    }

    /// Every parameter zero.
    pub fn zeroed(region: RegionTag, spec: &EncoderSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| Param::zeros(&name, &shape))
            .collect();
        Ok(BranchModel { region, spec: spec.clone(), params, meta: TrainingMeta::default() })
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    fn head_index(&self) -> usize {
        self.params.len() - 4
    }

    /// Check shapes against the spec and that every value is finite.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.spec.param_shapes();
        if shapes.len() != self.params.len() {
            return Err(Error::Shape("parameter count does not match encoder spec".into()));
        }
        for ((name, shape), p) in shapes.iter().zip(&self.params) {
            if *name != p.name || *shape != p.shape || p.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Shape(format!("parameter {} does not match spec", p.name)));
            }
            if !p.all_finite() {
                return Err(Error::Numerical(format!("parameter {} has non-finite values", p.name)));
            }
        }
        Ok(())
    }

    fn to_chw(&self, image: &Image<T>) -> Result<Vec<T>> {
        let s = self.spec.input_size;
        if image.height() != s || image.width() != s {
            return Err(Error::Shape(format!(
                "encoder expects {s}x{s} input, got {}x{}",
                image.height(),
                image.width()
            )));
        }
        let c = image.channels();
        let mut out = vec![T::zero(); INPUT_CHANNELS * s * s];
        for ch in 0..INPUT_CHANNELS {
            let src = if c == 1 { 0 } else { ch };
            for i in 0..s * s {
                out[ch * s * s + i] = image.data()[i * c + src];
            }
        }
        Ok(out)
    }

    fn forward(&self, x: Vec<T>) -> Result<Trace<T>> {
        let s = self.spec.input_size;
        let mut acts = Vec::new();
        let mut sides = Vec::new();
        let pooled = match self.spec.kind {
            EncoderKind::TinyConv => {
                let mut cur = x;
                let mut side = s;
                let mut c_in = INPUT_CHANNELS;
                for k in 0..4 {
                    let c_out = self.spec.conv_channels[k];
                    let (w, b) = (&self.params[2 * k].data, &self.params[2 * k + 1].data);
                    let mut y = nn::conv3x3s2_forward(&cur, c_in, side, side, w, b, c_out);
                    nn::relu_inplace(&mut y);
                    acts.push(std::mem::replace(&mut cur, y));
                    sides.push(side);
                    side = nn::conv_out_len(side);
                    c_in = c_out;
                }
                let hw = side * side;
                let inv = T::one() / T::from_usize_lossy(hw);
                let pooled: Vec<T> = (0..c_in)
                    .map(|c| cur[c * hw..(c + 1) * hw].iter().copied().sum::<T>() * inv)
                    .collect();
                acts.push(cur);
                sides.push(side);
                pooled
            }
            EncoderKind::PatchStats => patch_stats(&x, s, self.spec.patch_grid),
        };
        let h = self.head_index();
        let mut feature = vec![T::zero(); self.spec.feature_dim];
        nn::dense_forward(&self.params[h].data, &self.params[h + 1].data, &pooled, &mut feature);
        acts.push(pooled);
        let mut logit = [T::zero()];
        nn::dense_forward(&self.params[h + 2].data, &self.params[h + 3].data, &feature, &mut logit);
        if !logit[0].is_finite() || feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("encoder produced a non-finite value".into()));
        }
        Ok(Trace { acts, sides, feature, logit: logit[0] })
    }

    /// Feature vector of an `input_size × input_size` image.
    pub fn encode(&self, image: &Image<T>) -> Result<Vec<T>> {
        Ok(self.forward(self.to_chw(image)?)?.feature)
    }

    /// Unclipped affine score of a feature vector.
    pub fn affine_score(&self, feature: &[T]) -> Result<T> {
        if feature.len() != self.spec.feature_dim {
            return Err(Error::Shape(format!(
                "feature length {} != {}",
                feature.len(),
                self.spec.feature_dim
            )));
        }
        let h = self.head_index();
        let mut out = [T::zero()];
        nn::dense_forward(&self.params[h + 2].data, &self.params[h + 3].data, feature, &mut out);
        Ok(out[0])
    }

    /// `σ(clip(w·f + b, ±30))`.
    pub fn classify(&self, feature: &[T]) -> Result<T> {
        Ok(prob_from_logit(self.affine_score(feature)?))
    }

    /// Probability for one prepared image.
    pub fn predict(&self, image: &Image<T>) -> Result<T> {
        Ok(prob_from_logit(self.forward(self.to_chw(image)?)?.logit))
    }

    /// BCE loss of one prepared image and its gradient, the loss scaled by
    /// `weight` (the batch averaging factor).
    pub fn loss_and_grad(&self, image: &Image<T>, label: T, weight: T) -> Result<(T, Vec<Param<T>>)> {
        let trace = self.forward(self.to_chw(image)?)?;
        let loss = bce_single(prob_from_logit(trace.logit), label) * weight;
        let dlogit = bce_logit_grad(trace.logit, label) * weight;
        Ok((loss, self.backward(&trace, dlogit)))
    }

    fn backward(&self, trace: &Trace<T>, dlogit: T) -> Vec<Param<T>> {
        let mut grads: Vec<Param<T>> = self.params.iter().map(Param::zeros_like).collect();
        if dlogit == T::zero() {
            return grads;
        }
        let h = self.head_index();
        let d = self.spec.feature_dim;
        let mut dfeat = vec![T::zero(); d];
        {
            let (lo, hi) = grads.split_at_mut(h + 3);
            nn::dense_backward(
                &self.params[h + 2].data,
                &trace.feature,
                &[dlogit],
                &mut lo[h + 2].data,
                &mut hi[0].data,
                Some(&mut dfeat),
            );
        }
        let pooled = trace.acts.last().expect("pooled input");
        let need_dx = self.spec.kind == EncoderKind::TinyConv;
        let mut dpooled = vec![T::zero(); pooled.len()];
        {
            let (lo, hi) = grads.split_at_mut(h + 1);
            nn::dense_backward(
                &self.params[h].data,
                pooled,
                &dfeat,
                &mut lo[h].data,
                &mut hi[0].data,
                if need_dx { Some(&mut dpooled) } else { None },
            );
        }
        if !need_dx {
            return grads;
        }
        // Unpool, then walk the conv blocks backwards.
        let last = &trace.acts[4];
        let side = trace.sides[4];
        let hw = side * side;
        let inv = T::one() / T::from_usize_lossy(hw);
        let mut dy: Vec<T> = vec![T::zero(); last.len()];
        for (c, g) in dpooled.iter().enumerate() {
            dy[c * hw..(c + 1) * hw].iter_mut().for_each(|v| *v = *g * inv);
        }
        nn::relu_backward_inplace(last, &mut dy);
        for k in (0..4).rev() {
            let c_in = if k == 0 { INPUT_CHANNELS } else { self.spec.conv_channels[k - 1] };
            let c_out = self.spec.conv_channels[k];
            let side = trace.sides[k];
            let (gw, gb) = {
                let (lo, hi) = grads.split_at_mut(2 * k + 1);
                (&mut lo[2 * k].data, &mut hi[0].data)
            };
            let dx = nn::conv3x3s2_backward(
                &trace.acts[k],
                c_in,
                side,
                side,
                &self.params[2 * k].data,
                c_out,
                &dy,
                gw,
                gb,
                k > 0,
            );
            if let Some(mut dx) = dx {
                nn::relu_backward_inplace(&trace.acts[k], &mut dx);
                dy = dx;
            }
        }
        grads
    }
}

/// Per-patch channel mean and mean squared forward-difference energy.
fn patch_stats<T: Real>(x: &[T], s: usize, grid: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(grid * grid * INPUT_CHANNELS * 2);
    for c in 0..INPUT_CHANNELS {
        let plane = &x[c * s * s..(c + 1) * s * s];
        for gy in 0..grid {
            let (y0, y1) = (gy * s / grid, (gy + 1) * s / grid);
            for gx in 0..grid {
                let (x0, x1) = (gx * s / grid, (gx + 1) * s / grid);
                let mut sum = T::zero();
                let mut energy = T::zero();
                for y in y0..y1 {
                    for xx in x0..x1 {
                        let v = plane[y * s + xx];
                        sum += v;
                        if xx + 1 < s {
                            let d = plane[y * s + xx + 1] - v;
                            energy += d * d;
                        }
                        if y + 1 < s {
                            let d = plane[(y + 1) * s + xx] - v;
                            energy += d * d;
                        }
                    }
                }
                let n = T::from_usize_lossy((y1 - y0) * (x1 - x0)).max(T::one());
                out.push(sum / n);
                // Scaled so typical textures land near unit magnitude.
                out.push(energy / n * T::lit(100.0));
            }
        }
    }
    out
}

/// `σ(clip(z, ±30))`.
pub fn prob_from_logit<T: Real>(z: T) -> T {
    let c = T::lit(LOGIT_CLIP);
    sigmoid(z.clamp_to(-c, c))
}

fn clip_prob<T: Real>(p: T) -> T {
    p.clamp_to(T::lit(PROB_CLIP), T::one() - T::lit(PROB_CLIP))
}

fn bce_single<T: Real>(p: T, y: T) -> T {
    let p = clip_prob(p);
    -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
}

/// Exact derivative of `bce(clip(σ(clip(z))), y)` with respect to `z`.
fn bce_logit_grad<T: Real>(z: T, y: T) -> T {
    let c = T::lit(LOGIT_CLIP);
    if z < -c || z > c {
        return T::zero();
    }
    let p = sigmoid(z);
    if p < T::lit(PROB_CLIP) || p > T::one() - T::lit(PROB_CLIP) {
        return T::zero();
    }
    p - y
}

/// Mean binary cross-entropy with probabilities clipped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss<T: Real>(probabilities: &[T], labels: &[T]) -> Result<T> {
    if probabilities.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probabilities vs {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    if probabilities.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    if labels.iter().any(|y| *y != T::zero() && *y != T::one()) {
        return Err(Error::Data("labels must be 0 or 1".into()));
    }
    let n = T::from_usize_lossy(labels.len());
    Ok(probabilities.iter().zip(labels).map(|(p, y)| bce_single(*p, *y)).sum::<T>() / n)
}

/// Crop a frame to the (margin-padded, squared) landmark bounding box and
/// resize to the encoder input size.
pub fn prepare_input<T: Real>(image: &Image<T>, landmarks: &LandmarkSet, input_size: usize) -> Result<Image<T>> {
    let (x0, y0, x1, y1) = landmarks.bbox();
    let side = (x1 - x0).max(y1 - y0) * (1.0 + 2.0 * CROP_MARGIN);
    let side = side.max(8.0).min(image.width().min(image.height()) as f64);
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let side_px = side.round().max(1.0) as usize;
    let max_x = image.width() - side_px;
    let max_y = image.height() - side_px;
    let left = ((cx - side / 2.0).round().max(0.0) as usize).min(max_x);
    let top = ((cy - side / 2.0).round().max(0.0) as usize).min(max_y);
    Ok(image.crop(top, left, side_px, side_px)?.resize(input_size, input_size))
}

/// `k = min(8, T)` indices `⌊i·T/k⌋`, `i = 0..k`.
pub fn sample_frame_indices(num_frames: usize) -> Vec<usize> {
    let k = num_frames.min(MAX_VIDEO_FRAMES);
    (0..k).map(|i| i * num_frames / k).collect()
}

/// How per-frame probabilities become a video score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoAggregation {
    #[default]
    MeanProbability,
    MeanLogit,
}

/// Aggregate per-frame probabilities over the uniformly sampled frames.
pub fn aggregate_video<T: Real>(frame_probs: &[T], agg: VideoAggregation) -> Result<T> {
    if frame_probs.is_empty() {
        return Err(Error::Data("video has no frames".into()));
    }
    let idx = sample_frame_indices(frame_probs.len());
    let k = T::from_usize_lossy(idx.len());
    Ok(match agg {
        VideoAggregation::MeanProbability => idx.iter().map(|&i| frame_probs[i]).sum::<T>() / k,
        VideoAggregation::MeanLogit => {
            let m = idx.iter().map(|&i| crate::scalar::logit(clip_prob(frame_probs[i]))).sum::<T>() / k;
            sigmoid(m)
        }
    })
}

/// Video-level probability: only the sampled frames are encoded.
pub fn score_video<T: Real>(
    frames: &[(Image<T>, LandmarkSet)],
    model: &BranchModel<T>,
    agg: VideoAggregation,
) -> Result<T> {
    if frames.is_empty() {
        return Err(Error::Data("video has no frames".into()));
    }
    let idx = sample_frame_indices(frames.len());
    let probs = idx
        .iter()
        .map(|&i| {
            let (img, lm) = &frames[i];
            model.predict(&prepare_input(img, lm, model.spec.input_size)?)
        })
        .collect::<Result<Vec<T>>>()?;
    // Already subsampled: aggregate over all of `probs`.
    let k = T::from_usize_lossy(probs.len());
    Ok(match agg {
        VideoAggregation::MeanProbability => probs.iter().copied().sum::<T>() / k,
        VideoAggregation::MeanLogit => {
            sigmoid(probs.iter().map(|p| crate::scalar::logit(clip_prob(*p))).sum::<T>() / k)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// `0` gives plain SGD.
    pub momentum: f64,
    /// Frames in the fixed probe batch used to track training progress.
    pub probe_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            steps: 500,
            seed: 0,
            momentum: 0.9,
            probe_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// A real frame available for pair generation.
#[derive(Debug, Clone)]
pub struct TrainFrame<T> {
    pub id: String,
    pub image: Image<T>,
    pub landmarks: LandmarkSet,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub step_losses: Vec<f64>,
    pub initial_probe_loss: f64,
    pub final_probe_loss: f64,
    pub skipped_pairs: usize,
}

/// Prepared (real, fake) encoder inputs for one frame and seed, or `None`
/// when the frame yields no usable pair.
fn prepared_pair<T: Real>(
    frame: &TrainFrame<T>,
    region: RegionTag,
    seed: u64,
    pairs: &PairConfig,
    input_size: usize,
) -> Result<Option<(Image<T>, Image<T>)>> {
    match make_pair(&frame.image, &frame.id, &frame.landmarks, region, seed, pairs) {
        Ok(p) if p.degenerate_pair => Ok(None),
        Ok(p) => Ok(Some((
            prepare_input(&p.real_view, &frame.landmarks, input_size)?,
            prepare_input(&p.fake_view, &frame.landmarks, input_size)?,
        ))),
        Err(Error::DegenerateGeometry(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Labelled batch of prepared images (real → 0, fake → 1).
fn build_batch<T: Real>(
    frames: &[TrainFrame<T>],
    picks: &[(usize, u64)],
    region: RegionTag,
    pairs: &PairConfig,
    input_size: usize,
) -> Result<(Vec<(Image<T>, T)>, usize)> {
    let built: Vec<Result<Option<(Image<T>, Image<T>)>>> = picks
        .par_iter()
        .map(|&(i, seed)| prepared_pair(&frames[i], region, seed, pairs, input_size))
        .collect();
    let mut batch = Vec::with_capacity(2 * picks.len());
    let mut skipped = 0;
    for b in built {
        match b? {
            Some((real, fake)) => {
                batch.push((real, T::zero()));
                batch.push((fake, T::one()));
            }
            None => skipped += 1,
        }
    }
    Ok((batch, skipped))
}

/// Mean loss and summed gradient over a labelled batch. Per-sample work runs
/// in parallel; the reduction is sequential so results do not depend on
/// thread count.
pub fn batch_loss_and_grad<T: Real>(model: &BranchModel<T>, batch: &[(Image<T>, T)]) -> Result<(T, Vec<Param<T>>)> {
    let weight = T::one() / T::from_usize_lossy(batch.len());
    let parts: Vec<Result<(T, Vec<Param<T>>)>> = batch
        .par_iter()
        .map(|(img, y)| model.loss_and_grad(img, *y, weight))
        .collect();
    let mut total = T::zero();
    let mut grads: Vec<Param<T>> = model.params.iter().map(Param::zeros_like).collect();
    for p in parts {
        let (l, g) = p?;
        total += l;
        nn::accumulate(&mut grads, &g);
    }
    Ok((total, grads))
}

/// Mean BCE over a labelled batch (no gradient).
pub fn batch_loss<T: Real>(model: &BranchModel<T>, batch: &[(Image<T>, T)]) -> Result<T> {
    let probs = batch.par_iter().map(|(img, _)| model.predict(img)).collect::<Result<Vec<T>>>()?;
    let labels: Vec<T> = batch.iter().map(|(_, y)| *y).collect();
    bce_loss(&probs, &labels)
}

/// Train one region branch on self-blended pairs built on the fly from real
/// frames.
pub fn train_branch<T: Real>(
    frames: &[TrainFrame<T>],
    region: RegionTag,
    spec: &EncoderSpec,
    cfg: &TrainConfig,
    pairs: &PairConfig,
    config_hash: &str,
) -> Result<(BranchModel<T>, TrainReport)> {
    cfg.validate()?;
    pairs.validate()?;
    let mut model = BranchModel::init(region, spec)?;
    model.meta = TrainingMeta { steps: 0, seed: cfg.seed, config_hash: config_hash.to_string(), final_loss: f64::NAN };
    let mut report = TrainReport::default();
    if cfg.steps == 0 {
        return Ok((model, report));
    }
    if frames.is_empty() {
        return Err(Error::Data("no training frames".into()));
    }
    for f in frames {
        f.image.ensure_blendable()?;
    }

    let probe_picks: Vec<(usize, u64)> = (0..cfg.probe_size.min(frames.len()))
        .map(|i| (i, derive_seed(cfg.seed, tag::PROBE.wrapping_mul(1 << 20) + i as u64)))
        .collect();
    let (probe, _) = build_batch(frames, &probe_picks, region, pairs, spec.input_size)?;
    if !probe.is_empty() {
        report.initial_probe_loss = batch_loss(&model, &probe)?.to_f64_lossy();
    }

    let mut opt = Sgd::new(SgdConfig { learning_rate: cfg.learning_rate, momentum: cfg.momentum }, &model.params);
    for step in 0..cfg.steps {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, tag::BATCH ^ ((step as u64) << 8)));
        let picks: Vec<(usize, u64)> = (0..cfg.batch_size)
            .map(|_| (rng.random_range(0..frames.len()), rng.random::<u64>()))
            .collect();
        let (batch, skipped) = build_batch(frames, &picks, region, pairs, spec.input_size)?;
        report.skipped_pairs += skipped;
        if batch.is_empty() {
            return Err(Error::Data(format!(
                "step {step}: every frame in the batch produced a degenerate pair"
            )));
        }
        let (loss, grads) = batch_loss_and_grad(&model, &batch)?;
        opt.step(&mut model.params, &grads);
        report.step_losses.push(loss.to_f64_lossy());
        log::debug!("{region} step {step}: loss {loss}");
    }
    model.validate()?;
    if !probe.is_empty() {
        report.final_probe_loss = batch_loss(&model, &probe)?.to_f64_lossy();
    }
    model.meta.steps = cfg.steps as u64;
    model.meta.final_loss = report.step_losses.last().copied().unwrap_or(f64::NAN);
    Ok((model, report))
}

/// Options for [`gradcheck_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Denominator floor: `|a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Check at most this many randomly chosen coordinates per tensor
    /// (`None` checks all).
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { step: 1e-5, floor: 1e-6, max_coords_per_tensor: None, seed: 0 }
    }
}

impl GradcheckOptions {
    /// Step 1e-4 for patch_stats, 1e-5 for tiny_conv.
    pub fn for_encoder(kind: EncoderKind) -> Self {
        match kind {
            EncoderKind::TinyConv => GradcheckOptions::default(),
            EncoderKind::PatchStats => GradcheckOptions { step: 1e-4, ..GradcheckOptions::default() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coords_checked: usize,
    pub grad_norm: f64,
}

/// Small random check instance: an encoder with jittered biases (zero biases
/// put pre-activations of dead receptive fields exactly on the ReLU kink) and
/// a batch of uniform images labeled alternately 0 and 1.
pub fn gradcheck_instance<T: Real>(
    kind: EncoderKind,
    seed: u64,
    batch_size: usize,
) -> Result<(BranchModel<T>, Vec<(Image<T>, T)>)> {
    let spec = EncoderSpec { kind, input_size: 16, feature_dim: 8, conv_channels: [2, 3, 3, 4], patch_grid: 2, seed };
    let mut model = BranchModel::<T>::init(RegionTag::Face, &spec)?;
    let mut rng = rng_from_seed(derive_seed(seed, tag::GRADCHECK));
    for p in model.params.iter_mut().filter(|p| p.name.ends_with(".bias")) {
        p.data.iter_mut().for_each(|v| *v = T::lit(rng.random_range(-0.1..0.1)));
    }
    let side = spec.input_size;
    let batch = (0..batch_size)
        .map(|i| {
            let data = (0..side * side * 3).map(|_| T::lit(rng.random::<f64>())).collect();
            Ok((Image::new(side, side, 3, data)?, T::lit((i % 2) as f64)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((model, batch))
}

/// Analytic gradient of mean BCE∘classify∘encode versus central finite
/// differences over every parameter.
pub fn gradcheck<T: Real>(model: &BranchModel<T>, batch: &[(Image<T>, T)]) -> Result<GradcheckReport> {
    gradcheck_with(model, batch, &GradcheckOptions::for_encoder(model.spec.kind))
}

pub fn gradcheck_with<T: Real>(
    model: &BranchModel<T>,
    batch: &[(Image<T>, T)],
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    if batch.is_empty() {
        return Err(Error::Data("empty gradcheck batch".into()));
    }
    let (_, grads) = batch_loss_and_grad(model, batch)?;
    let mut rng = rng_from_seed(opts.seed);
    let mut probe = model.clone();
    let h = T::lit(opts.step);
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        coords_checked: 0,
        grad_norm: nn::grad_norm(&grads).to_f64_lossy(),
    };
    for (t, g) in grads.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords_per_tensor {
            Some(k) if k < g.len() => (0..k).map(|_| rng.random_range(0..g.len())).collect(),
            _ => (0..g.len()).collect(),
        };
        for i in coords {
            let orig = probe.params[t].data[i];
            probe.params[t].data[i] = orig + h;
            let up = batch_loss(&probe, batch)?;
            probe.params[t].data[i] = orig - h;
            let down = batch_loss(&probe, batch)?;
            probe.params[t].data[i] = orig;
            let numeric = ((up - down) / (h + h)).to_f64_lossy();
            let analytic = g.data[i].to_f64_lossy();
            let abs = (analytic - numeric).abs();
            let rel = abs / analytic.abs().max(numeric.abs()).max(opts.floor);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.coords_checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(kind: EncoderKind) -> EncoderSpec {
        EncoderSpec { kind, input_size: 16, feature_dim: 8, conv_channels: [2, 3, 3, 4], patch_grid: 2, seed: 3 }
    }

    fn noise_image(seed: u64, s: usize) -> Image<f64> {
        let mut rng = rng_from_seed(seed);
        Image::new(s, s, 3, (0..s * s * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn zero_model_gives_half_and_bias_features() {
        for kind in [EncoderKind::TinyConv, EncoderKind::PatchStats] {
            let mut m = BranchModel::<f64>::zeroed(RegionTag::Face, &small_spec(kind)).unwrap();
            let img = Image::filled(16, 16, 3, 0.0);
            assert!(m.encode(&img).unwrap().iter().all(|v| *v == 0.0));
            assert_eq!(m.predict(&img).unwrap(), 0.5);
            m.param_mut("proj.bias").unwrap().data = (0..8).map(|i| i as f64).collect();
            assert_eq!(m.encode(&img).unwrap(), (0..8).map(|i| i as f64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn classify_clips_logits() {
        let mut m = BranchModel::<f64>::zeroed(RegionTag::Lip, &small_spec(EncoderKind::PatchStats)).unwrap();
        m.param_mut("cls.bias").unwrap().data[0] = 1e6;
        let p = m.classify(&[0.0; 8]).unwrap();
        assert_eq!(p, sigmoid(30.0));
        m.param_mut("cls.bias").unwrap().data[0] = -1e6;
        assert_eq!(m.classify(&[0.0; 8]).unwrap(), sigmoid(-30.0));
        assert!(m.classify(&[0.0; 7]).is_err());
    }

    #[test]
    fn bce_basics() {
        let l = bce_loss(&[0.5f64; 4], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let l = bce_loss(&[0.0f64, 1.0], &[0.0, 1.0]).unwrap();
        assert!(l <= 1e-6 * (1e-7f64).ln().abs());
        assert!(matches!(bce_loss(&[0.5f64], &[0.0, 1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn frame_indices_follow_floor_formula() {
        assert_eq!(sample_frame_indices(20), vec![0, 2, 5, 7, 10, 12, 15, 17]);
        assert_eq!(sample_frame_indices(3), vec![0, 1, 2]);
        assert_eq!(sample_frame_indices(1), vec![0]);
        assert!(sample_frame_indices(0).is_empty());
    }

    #[test]
    fn aggregate_video_means() {
        let probs: Vec<f64> = (0..20).map(|i| i as f64 / 40.0 + 0.1).collect();
        let expect = [0, 2, 5, 7, 10, 12, 15, 17].iter().map(|&i| probs[i]).sum::<f64>() / 8.0;
        let got = aggregate_video(&probs, VideoAggregation::MeanProbability).unwrap();
        assert!((got - expect).abs() < 1e-15);
        assert_eq!(aggregate_video(&[0.3f64], VideoAggregation::MeanProbability).unwrap(), 0.3);
        assert!(aggregate_video::<f64>(&[], VideoAggregation::MeanProbability).is_err());
        let same = aggregate_video(&[0.7f64; 8], VideoAggregation::MeanLogit).unwrap();
        assert!((same - 0.7).abs() < 1e-12);
    }

    #[test]
    fn gradcheck_small_models() {
        for kind in [EncoderKind::PatchStats, EncoderKind::TinyConv] {
            let m = BranchModel::<f64>::init(RegionTag::Face, &small_spec(kind)).unwrap();
            let batch: Vec<_> = (0..4).map(|i| (noise_image(i, 16), (i % 2) as f64)).collect();
            let r = gradcheck(&m, &batch).unwrap();
            assert!(r.max_rel_error < 1e-3, "{kind}: {r:?}");
        }
    }

    #[test]
    fn saturated_model_has_no_gradient() {
        let mut m = BranchModel::<f64>::zeroed(RegionTag::Face, &small_spec(EncoderKind::TinyConv)).unwrap();
        m.param_mut("cls.bias").unwrap().data[0] = 40.0;
        let batch = vec![(noise_image(1, 16), 1.0), (noise_image(2, 16), 1.0)];
        let r = gradcheck(&m, &batch).unwrap();
        assert!(r.grad_norm < 1e-6);
    }
}
