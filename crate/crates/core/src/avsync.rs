//! Audio-visual synchronization branch.
//!
//! A pairwise scorer `s(a_i, v_j)` (four dense layers over the concatenated
//! feature vectors, layer norm before each ReLU, scalar output) is trained so
//! that, for every audio step `i`, the true visual step wins a softmax over
//! the temporal neighborhood `N(i) = {j : |j − i| ≤ w}` (truncated at the clip
//! boundaries):
//!
//! `p(v_i | a_i) = exp s(a_i, v_i) / Σ_{j∈N(i)} exp s(a_i, v_j)`,
//! `L = −(1/T) Σ_i log p(v_i | a_i)`.
//!
//! The per-video misalignment score is the mean per-frame negative
//! log-posterior; higher means more likely fake.

use std::fmt;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, LnCache, Param, Sgd, SgdConfig};
use crate::rng::{derive_seed, rng_from_seed, tag};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Audio,
    Visual,
}

impl Modality {
    pub fn code(self) -> u8 {
        match self {
            Modality::Audio => 0,
            Modality::Visual => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Modality::Audio),
            1 => Some(Modality::Visual),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
        })
    }
}

/// `T × D` frame-rate-aligned features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<T> {
    pub modality: Modality,
    frames: usize,
    dim: usize,
    values: Vec<T>,
    pub frame_rate: f32,
}

impl<T: Real> FeatureSequence<T> {
    pub fn new(modality: Modality, frames: usize, dim: usize, values: Vec<T>, frame_rate: f32) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Shape("feature sequence needs T ≥ 1 and D ≥ 1".into()));
        }
        if values.len() != frames * dim {
            return Err(Error::Shape(format!("expected {} values, got {}", frames * dim, values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("feature sequence contains non-finite values".into()));
        }
        Ok(FeatureSequence { modality, frames, dim, values, frame_rate })
    }

    pub fn len(&self) -> usize {
        self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[T] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    /// Delay the sequence by `k` frames (`out_t = in_{t−k}`), replicating
    /// the edge frame. Negative `k` advances it.
    pub fn shifted(&self, k: isize) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for t in 0..self.frames {
            let src = (t as isize - k).clamp(0, self.frames as isize - 1) as usize;
            values.extend_from_slice(self.row(src));
        }
        FeatureSequence { values, ..self.clone() }
    }
}

/// Check that an audio/visual pair can be scored together.
pub fn check_pair<T: Real>(audio: &FeatureSequence<T>, visual: &FeatureSequence<T>) -> Result<()> {
    if audio.len() != visual.len() {
        return Err(Error::Shape(format!("audio has {} frames, visual {}", audio.len(), visual.len())));
    }
    if audio.frame_rate != visual.frame_rate {
        return Err(Error::Shape("audio and visual frame rates differ".into()));
    }
    Ok(())
}

/// Temporal neighborhood of step `i` in a clip of `t` frames.
pub fn neighborhood(i: usize, t: usize, w: usize) -> std::ops::Range<usize> {
    i.saturating_sub(w)..(i + w + 1).min(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerSpec {
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Start the output layer at zero (every score 0 until trained).
    pub zero_output_layer: bool,
}

impl ScorerSpec {
    pub fn new(audio_dim: usize, visual_dim: usize) -> Self {
        ScorerSpec { audio_dim, visual_dim, hidden: 256, seed: 0, zero_output_layer: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.audio_dim == 0 || self.visual_dim == 0 || self.hidden < 2 {
            return Err(Error::Config("scorer dimensions must be positive (hidden ≥ 2)".into()));
        }
        Ok(())
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (h, d) = (self.hidden, self.audio_dim + self.visual_dim);
        let mut out = Vec::new();
        for (k, n_in) in [(1, d), (2, h), (3, h)] {
            out.push((format!("fc{k}.weight"), vec![h, n_in]));
            out.push((format!("fc{k}.bias"), vec![h]));
            out.push((format!("ln{k}.gain"), vec![h]));
            out.push((format!("ln{k}.shift"), vec![h]));
        }
        out.push(("fc4.weight".into(), vec![1, h]));
        out.push(("fc4.bias".into(), vec![1]));
        out
    }
}

// Parameter slots.
const W1: usize = 0;
const B1: usize = 1;
const W4: usize = 12;
const B4: usize = 13;

/// The pairwise alignment scorer `s(a_i, v_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentScorer<T> {
    pub spec: ScorerSpec,
    pub params: Vec<Param<T>>,
    pub config_hash: String,
}

struct PairTrace<T> {
    ln: [LnCache<T>; 3],
    act: [Vec<T>; 3],
}

impl<T: Real> AlignmentScorer<T> {
    pub fn init(spec: &ScorerSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_from_seed(derive_seed(spec.seed, tag::INIT));
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with(".gain") {
                    Param::filled(&name, &shape, T::one())
                } else if name.ends_with(".bias") || name.ends_with(".shift") {
                    Param::zeros(&name, &shape)
                } else if name == "fc4.weight" && spec.zero_output_layer {
                    Param::zeros(&name, &shape)
                } else {
                    Param::he_normal(&name, &shape, shape[1], &mut rng)
                }
            })
            .collect();
        Ok(AlignmentScorer { spec: spec.clone(), params, config_hash: String::new() })
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.spec.param_shapes();
        if shapes.len() != self.params.len() {
            return Err(Error::Shape("scorer parameter count does not match spec".into()));
        }
        for ((name, shape), p) in shapes.iter().zip(&self.params) {
            if *name != p.name || *shape != p.shape {
                return Err(Error::Shape(format!("scorer parameter {} does not match spec", p.name)));
            }
            if !p.all_finite() {
                return Err(Error::Numerical(format!("scorer parameter {} is non-finite", p.name)));
            }
        }
        Ok(())
    }

    /// Score one (audio, visual) feature pair.
    pub fn score_pair(&self, a: &[T], v: &[T]) -> Result<T> {
        if a.len() != self.spec.audio_dim || v.len() != self.spec.visual_dim {
            return Err(Error::Shape(format!(
                "scorer expects ({}, {}) features, got ({}, {})",
                self.spec.audio_dim,
                self.spec.visual_dim,
                a.len(),
                v.len()
            )));
        }
        let x: Vec<T> = a.iter().chain(v).copied().collect();
        let mut pre1 = vec![T::zero(); self.spec.hidden];
        nn::dense_forward(&self.params[W1].data, &self.params[B1].data, &x, &mut pre1);
        let (s, _) = self.tail_forward(pre1);
        if !s.is_finite() {
            return Err(Error::Numerical("alignment score is not finite".into()));
        }
        Ok(s)
    }

    /// Everything after the first affine map.
    fn tail_forward(&self, pre1: Vec<T>) -> (T, PairTrace<T>) {
        let h = self.spec.hidden;
        let mut ln_in: [Vec<T>; 3] = [pre1, Vec::new(), Vec::new()];
        let mut caches: Vec<LnCache<T>> = Vec::with_capacity(3);
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(3);
        for k in 0..3 {
            let base = 4 * k;
            let mut y = vec![T::zero(); h];
            let c = nn::layer_norm_forward(&ln_in[k], &self.params[base + 2].data, &self.params[base + 3].data, &mut y);
            nn::relu_inplace(&mut y);
            caches.push(c);
            if k < 2 {
                let nb = 4 * (k + 1);
                let mut next = vec![T::zero(); h];
                nn::dense_forward(&self.params[nb].data, &self.params[nb + 1].data, &y, &mut next);
                ln_in[k + 1] = next;
            }
            acts.push(y);
        }
        let mut out = [T::zero()];
        nn::dense_forward(&self.params[W4].data, &self.params[B4].data, &acts[2], &mut out);
        let ln: [LnCache<T>; 3] = caches.try_into().unwrap_or_else(|_| unreachable!());
        let act: [Vec<T>; 3] = acts.try_into().unwrap_or_else(|_| unreachable!());
        (out[0], PairTrace { ln, act })
    }

    /// Backprop `ds` through the tail; returns `d pre1` and accumulates the
    /// tail parameter gradients (and `fc1.bias`) into `grads`.
    fn tail_backward(&self, trace: &PairTrace<T>, ds: T, grads: &mut [Param<T>]) -> Vec<T> {
        let h = self.spec.hidden;
        let mut dy = vec![T::zero(); h];
        {
            let (lo, hi) = grads.split_at_mut(B4);
            nn::dense_backward(&self.params[W4].data, &trace.act[2], &[ds], &mut lo[W4].data, &mut hi[0].data, Some(&mut dy));
        }
        let mut dpre = vec![T::zero(); h];
        for k in (0..3).rev() {
            let base = 4 * k;
            nn::relu_backward_inplace(&trace.act[k], &mut dy);
            {
                let (lo, hi) = grads.split_at_mut(base + 3);
                nn::layer_norm_backward(
                    &trace.ln[k],
                    &self.params[base + 2].data,
                    &dy,
                    &mut lo[base + 2].data,
                    &mut hi[0].data,
                    &mut dpre,
                );
            }
            if k > 0 {
                let prev_act = &trace.act[k - 1];
                let (lo, hi) = grads.split_at_mut(base + 1);
                nn::dense_backward(&self.params[base].data, prev_act, &dpre, &mut lo[base].data, &mut hi[0].data, Some(&mut dy));
            }
        }
        for (g, d) in grads[B1].data.iter_mut().zip(&dpre) {
            *g += *d;
        }
        dpre
    }

    /// First-layer projections of every frame: audio part (with bias) and
    /// visual part, each `T × hidden`.
    fn project(&self, audio: &FeatureSequence<T>, visual: &FeatureSequence<T>) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
        let (h, da, dv) = (self.spec.hidden, self.spec.audio_dim, self.spec.visual_dim);
        let w = &self.params[W1].data;
        let b = &self.params[B1].data;
        let d = da + dv;
        let pa = (0..audio.len())
            .map(|t| {
                let a = audio.row(t);
                (0..h)
                    .map(|o| b[o] + w[o * d..o * d + da].iter().zip(a).map(|(x, y)| *x * *y).sum::<T>())
                    .collect()
            })
            .collect();
        let pv = (0..visual.len())
            .map(|t| {
                let v = visual.row(t);
                (0..h)
                    .map(|o| w[o * d + da..(o + 1) * d].iter().zip(v).map(|(x, y)| *x * *y).sum::<T>())
                    .collect()
            })
            .collect();
        (pa, pv)
    }

    fn check_dims(&self, audio: &FeatureSequence<T>, visual: &FeatureSequence<T>) -> Result<()> {
        check_pair(audio, visual)?;
        if audio.dim() != self.spec.audio_dim || visual.dim() != self.spec.visual_dim {
            return Err(Error::Shape(format!(
                "scorer expects ({}, {}) features, clip has ({}, {})",
                self.spec.audio_dim,
                self.spec.visual_dim,
                audio.dim(),
                visual.dim()
            )));
        }
        Ok(())
    }

    /// Scores `s(a_i, v_j)` for every `j ∈ N(i)`, one row per `i`.
    pub fn neighborhood_scores(
        &self,
        audio: &FeatureSequence<T>,
        visual: &FeatureSequence<T>,
        w: usize,
    ) -> Result<Vec<Vec<T>>> {
        self.check_dims(audio, visual)?;
        let t = audio.len();
        let (pa, pv) = self.project(audio, visual);
        let rows: Vec<Vec<T>> = (0..t)
            .map(|i| {
                neighborhood(i, t, w)
                    .map(|j| {
                        let pre: Vec<T> = pa[i].iter().zip(&pv[j]).map(|(x, y)| *x + *y).collect();
                        self.tail_forward(pre).0
                    })
                    .collect()
            })
            .collect();
        if rows.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::Numerical("alignment score is not finite".into()));
        }
        Ok(rows)
    }

    /// InfoNCE loss over the anchors `anchors` (all steps when `None`) and
    /// its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        audio: &FeatureSequence<T>,
        visual: &FeatureSequence<T>,
        w: usize,
        anchors: Option<&[usize]>,
    ) -> Result<(T, Vec<Param<T>>)> {
        self.check_dims(audio, visual)?;
        let t = audio.len();
        let all: Vec<usize>;
        let anchors = match anchors {
            Some(a) => a,
            None => {
                all = (0..t).collect();
                &all
            }
        };
        let n = T::from_usize_lossy(anchors.len().max(1));
        let (pa, pv) = self.project(audio, visual);
        let (h, da, dv) = (self.spec.hidden, self.spec.audio_dim, self.spec.visual_dim);
        let mut grads: Vec<Param<T>> = self.params.iter().map(Param::zeros_like).collect();
        let mut dpa = vec![vec![T::zero(); h]; t];
        let mut dpv = vec![vec![T::zero(); h]; t];
        let mut loss = T::zero();
        for &i in anchors {
            let nb = neighborhood(i, t, w);
            let traces: Vec<(T, PairTrace<T>)> = nb
                .clone()
                .map(|j| {
                    let pre: Vec<T> = pa[i].iter().zip(&pv[j]).map(|(x, y)| *x + *y).collect();
                    self.tail_forward(pre)
                })
                .collect();
            let scores: Vec<T> = traces.iter().map(|(s, _)| *s).collect();
            let self_pos = i - nb.start;
            let (nll, probs) = nll_and_softmax(&scores, self_pos);
            loss += nll;
            for (k, (j, (_, tr))) in nb.zip(&traces).enumerate() {
                let target = if k == self_pos { T::one() } else { T::zero() };
                let ds = (probs[k] - target) / n;
                if ds == T::zero() {
                    continue;
                }
                let dpre = self.tail_backward(tr, ds, &mut grads);
                for o in 0..h {
                    dpa[i][o] += dpre[o];
                    dpv[j][o] += dpre[o];
                }
            }
        }
        // First-layer weights from the projection gradients.
        let d = da + dv;
        let gw = &mut grads[W1].data;
        for tt in 0..t {
            let (a, v) = (audio.row(tt), visual.row(tt));
            for o in 0..h {
                let (ga, gv) = (dpa[tt][o], dpv[tt][o]);
                let row = &mut gw[o * d..(o + 1) * d];
                if ga != T::zero() {
                    for (g, x) in row[..da].iter_mut().zip(a) {
                        *g += ga * *x;
                    }
                }
                if gv != T::zero() {
                    for (g, x) in row[da..].iter_mut().zip(v) {
                        *g += gv * *x;
                    }
                }
            }
        }
        Ok((loss / n, grads))
    }
}

/// `−log softmax(scores)[target]` and the softmax itself, with max
/// subtraction.
pub fn nll_and_softmax<T: Real>(scores: &[T], target: usize) -> (T, Vec<T>) {
    let m = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scores.iter().map(|s| (*s - m).exp()).collect();
    let z: T = exps.iter().copied().sum();
    let nll = z.ln() - (scores[target] - m);
    (nll.max(T::zero()), exps.into_iter().map(|e| e / z).collect())
}

/// `p(v_i | a_i)` from a score function over indices.
pub fn posterior_from_scores<T: Real>(score: impl Fn(usize, usize) -> T, t: usize, i: usize, w: usize) -> T {
    let nb = neighborhood(i, t, w);
    let scores: Vec<T> = nb.clone().map(|j| score(i, j)).collect();
    let (_, p) = nll_and_softmax(&scores, i - nb.start);
    p[i - nb.start]
}

/// Mean over `i` of `−log p(v_i | a_i)` from a score function over indices.
pub fn infonce_from_scores<T: Real>(score: impl Fn(usize, usize) -> T, t: usize, w: usize) -> T {
    per_frame_nll_from_scores(score, t, w).into_iter().sum::<T>() / T::from_usize_lossy(t)
}

pub fn per_frame_nll_from_scores<T: Real>(score: impl Fn(usize, usize) -> T, t: usize, w: usize) -> Vec<T> {
    (0..t)
        .map(|i| {
            let nb = neighborhood(i, t, w);
            let scores: Vec<T> = nb.clone().map(|j| score(i, j)).collect();
            nll_and_softmax(&scores, i - nb.start).0
        })
        .collect()
}

/// `p(v_i | a_i)` under a trained scorer.
pub fn alignment_posterior<T: Real>(
    audio: &FeatureSequence<T>,
    visual: &FeatureSequence<T>,
    i: usize,
    model: &AlignmentScorer<T>,
    w: usize,
) -> Result<T> {
    model.check_dims(audio, visual)?;
    if i >= audio.len() {
        return Err(Error::Shape(format!("step {i} outside clip of {} frames", audio.len())));
    }
    let t = audio.len();
    let nb = neighborhood(i, t, w);
    let scores = nb
        .clone()
        .map(|j| model.score_pair(audio.row(i), visual.row(j)))
        .collect::<Result<Vec<T>>>()?;
    let (_, p) = nll_and_softmax(&scores, i - nb.start);
    Ok(p[i - nb.start])
}

/// InfoNCE loss of a clip under `model`.
pub fn infonce_loss<T: Real>(
    audio: &FeatureSequence<T>,
    visual: &FeatureSequence<T>,
    model: &AlignmentScorer<T>,
    w: usize,
) -> Result<T> {
    let rows = model.neighborhood_scores(audio, visual, w)?;
    let t = audio.len();
    let total: T = rows
        .iter()
        .enumerate()
        .map(|(i, r)| nll_and_softmax(r, i - neighborhood(i, t, w).start).0)
        .sum();
    Ok(total / T::from_usize_lossy(t))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncAggregation {
    #[default]
    Mean,
    Max,
}

/// Per-frame negative log-posteriors and their aggregate (higher ⇒ more
/// likely misaligned).
#[derive(Debug, Clone, PartialEq)]
pub struct SyncScore<T> {
    pub per_frame_nll: Vec<T>,
    pub aggregate: T,
}

pub fn misalignment_score<T: Real>(
    audio: &FeatureSequence<T>,
    visual: &FeatureSequence<T>,
    model: &AlignmentScorer<T>,
    w: usize,
    agg: SyncAggregation,
) -> Result<SyncScore<T>> {
    let rows = model.neighborhood_scores(audio, visual, w)?;
    let t = audio.len();
    let per_frame_nll: Vec<T> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| nll_and_softmax(r, i - neighborhood(i, t, w).start).0)
        .collect();
    let aggregate = match agg {
        SyncAggregation::Mean => per_frame_nll.iter().copied().sum::<T>() / T::from_usize_lossy(t),
        SyncAggregation::Max => per_frame_nll.iter().copied().fold(T::zero(), T::max),
    };
    Ok(SyncScore { per_frame_nll, aggregate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncConfig {
    pub window_radius: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub clips_per_step: usize,
    pub steps: usize,
    pub seed: u64,
    /// Random anchors per clip per step (`None` uses every step).
    pub anchors_per_clip: Option<usize>,
    /// Clips in the fixed probe set used to track progress.
    pub probe_clips: usize,
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig {
            window_radius: 15,
            learning_rate: 1e-2,
            momentum: 0.9,
            clips_per_step: 4,
            steps: 300,
            seed: 0,
            anchors_per_clip: None,
            probe_clips: 8,
        }
    }
}

impl SyncConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_radius < 1 {
            return Err(Error::Config("window_radius must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("invalid learning rate or momentum".into()));
        }
        if self.clips_per_step == 0 {
            return Err(Error::Config("clips_per_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SyncTrainReport {
    pub step_losses: Vec<f64>,
    pub initial_probe_loss: f64,
    pub final_probe_loss: f64,
}

pub type AvPair<T> = (FeatureSequence<T>, FeatureSequence<T>);

fn mean_probe_loss<T: Real>(model: &AlignmentScorer<T>, probe: &[&AvPair<T>], w: usize) -> Result<f64> {
    let losses = probe
        .par_iter()
        .map(|(a, v)| infonce_loss(a, v, model, w))
        .collect::<Result<Vec<T>>>()?;
    Ok(losses.iter().map(|l| l.to_f64_lossy()).sum::<f64>() / losses.len().max(1) as f64)
}

/// Train the scorer on aligned (real) clips with SGD on the InfoNCE loss.
pub fn train_avsync<T: Real>(
    corpus: &[AvPair<T>],
    cfg: &SyncConfig,
    spec: &ScorerSpec,
    config_hash: &str,
) -> Result<(AlignmentScorer<T>, SyncTrainReport)> {
    cfg.validate()?;
    let mut model = AlignmentScorer::init(spec)?;
    model.config_hash = config_hash.to_string();
    let mut report = SyncTrainReport::default();
    if cfg.steps == 0 {
        return Ok((model, report));
    }
    let valid: Vec<&AvPair<T>> = corpus
        .iter()
        .filter(|(a, v)| a.len() >= 2 && model.check_dims(a, v).is_ok())
        .collect();
    if valid.is_empty() {
        return Err(Error::Data("no valid audio-visual pairs with T ≥ 2".into()));
    }
    let w = cfg.window_radius;
    let probe: Vec<&AvPair<T>> = valid.iter().take(cfg.probe_clips.max(1)).copied().collect();
    report.initial_probe_loss = mean_probe_loss(&model, &probe, w)?;

    let mut opt = Sgd::new(SgdConfig { learning_rate: cfg.learning_rate, momentum: cfg.momentum }, &model.params);
    for step in 0..cfg.steps {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, tag::BATCH ^ ((step as u64) << 8)));
        let jobs: Vec<(usize, Option<Vec<usize>>)> = (0..cfg.clips_per_step)
            .map(|_| {
                let c = rng.random_range(0..valid.len());
                let t = valid[c].0.len();
                let anchors = cfg
                    .anchors_per_clip
                    .filter(|&k| k < t)
                    .map(|k| (0..k).map(|_| rng.random_range(0..t)).collect());
                (c, anchors)
            })
            .collect();
        let parts = jobs
            .par_iter()
            .map(|(c, anchors)| {
                let (a, v) = valid[*c];
                model.loss_and_grad(a, v, w, anchors.as_deref())
            })
            .collect::<Result<Vec<_>>>()?;
        let inv = T::one() / T::from_usize_lossy(parts.len());
        let mut grads: Vec<Param<T>> = model.params.iter().map(Param::zeros_like).collect();
        let mut loss = T::zero();
        for (l, g) in &parts {
            loss += *l * inv;
            nn::accumulate(&mut grads, g);
        }
        nn::scale_grads(&mut grads, inv);
        opt.step(&mut model.params, &grads);
        report.step_losses.push(loss.to_f64_lossy());
        log::debug!("avsync step {step}: loss {loss}");
    }
    model.validate()?;
    report.final_probe_loss = mean_probe_loss(&model, &probe, w)?;
    Ok((model, report))
}

/// Options for [`infonce_gradcheck`]; same conventions as the visual
/// gradcheck.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncGradcheckOptions {
    pub step: f64,
    pub floor: f64,
}

impl Default for SyncGradcheckOptions {
    fn default() -> Self {
        SyncGradcheckOptions { step: 1e-6, floor: 1e-6 }
    }
}

/// Max relative error between the analytic InfoNCE gradient and central
/// finite differences over every scorer parameter.
pub fn infonce_gradcheck<T: Real>(
    model: &AlignmentScorer<T>,
    audio: &FeatureSequence<T>,
    visual: &FeatureSequence<T>,
    w: usize,
    opts: &SyncGradcheckOptions,
) -> Result<f64> {
    let (_, grads) = model.loss_and_grad(audio, visual, w, None)?;
    let mut probe = model.clone();
    let h = T::lit(opts.step);
    let mut worst: f64 = 0.0;
    for (t, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let orig = probe.params[t].data[i];
            probe.params[t].data[i] = orig + h;
            let up = infonce_loss(audio, visual, &probe, w)?;
            probe.params[t].data[i] = orig - h;
            let down = infonce_loss(audio, visual, &probe, w)?;
            probe.params[t].data[i] = orig;
            let numeric = ((up - down) / (h + h)).to_f64_lossy();
            let analytic = g.data[i].to_f64_lossy();
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(opts.floor);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
