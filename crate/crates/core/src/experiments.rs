//! Synthetic end-to-end training experiments for the visual and sync branches.

use std::time::Instant;

use rayon::prelude::*;

use crate::avsync::{misalignment_score, train_avsync, AvPair, ScorerSpec, SyncAggregation, SyncConfig};
use crate::error::{Error, Result};
use crate::masks::RegionTag;
use crate::metrics::{auc, LabeledScores};
use crate::pseudo_forgery::{make_pair, PairConfig};
use crate::rng::derive_seed;
use crate::scalar::Real;
use crate::synth::{synth_av, synth_face, SynthAvSpec, SynthFaceSpec};
use crate::visual::{prepare_input, train_branch, EncoderKind, EncoderSpec, TrainConfig, TrainFrame};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub auc: f64,
    pub n_real: usize,
    pub n_fake: usize,
    pub initial_probe_loss: f64,
    pub final_probe_loss: f64,
    pub train_seconds: f64,
    pub total_seconds: f64,
}

/// Train one region branch on synthetic faces, then score held-out real and
/// blended views.
#[derive(Debug, Clone)]
pub struct VisualExperiment {
    pub seed: u64,
    pub canvas: usize,
    pub train_faces: usize,
    pub eval_faces: usize,
    pub region: RegionTag,
    pub encoder: EncoderSpec,
    pub train: TrainConfig,
    pub pairs: PairConfig,
}

impl VisualExperiment {
    pub fn new(seed: u64) -> Self {
        VisualExperiment {
            seed,
            canvas: 96,
            train_faces: 200,
            eval_faces: 100,
            region: RegionTag::Face,
            encoder: EncoderSpec {
                kind: EncoderKind::TinyConv,
                input_size: 64,
                feature_dim: 32,
                conv_channels: [8, 16, 32, 32],
                patch_grid: 4,
                seed: derive_seed(seed, 1),
            },
            train: TrainConfig { learning_rate: 1e-2, steps: 500, seed: derive_seed(seed, 2), ..TrainConfig::default() },
            pairs: PairConfig::default(),
        }
    }
}

fn face<T: Real>(seed: u64, canvas: usize, id: String) -> Result<TrainFrame<T>> {
    let (image, landmarks) = synth_face(&SynthFaceSpec::random(seed, canvas))?;
    Ok(TrainFrame { id, image, landmarks })
}

pub fn run_visual_experiment<T: Real>(e: &VisualExperiment) -> Result<ExperimentOutcome> {
    let start = Instant::now();
    let train = (0..e.train_faces)
        .into_par_iter()
        .map(|i| face(derive_seed(e.seed, 1000 + i as u64), e.canvas, format!("train_{i:04}")))
        .collect::<Result<Vec<TrainFrame<T>>>>()?;
    let t0 = Instant::now();
    let (model, report) = train_branch(&train, e.region, &e.encoder, &e.train, &e.pairs, "")?;
    let train_seconds = t0.elapsed().as_secs_f64();

    let scored = (0..e.eval_faces)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(e.seed, 500_000 + i as u64);
            let f = face::<T>(s, e.canvas, format!("eval_{i:04}"))?;
            let pair = make_pair(&f.image, &f.id, &f.landmarks, e.region, derive_seed(s, 7), &e.pairs)?;
            let real = model.predict(&prepare_input(&pair.real_view, &f.landmarks, e.encoder.input_size)?)?;
            let fake = model.predict(&prepare_input(&pair.fake_view, &f.landmarks, e.encoder.input_size)?)?;
            Ok((real.to_f64_lossy(), fake.to_f64_lossy()))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let mut labels = vec![0u8; scored.len()];
    labels.extend(vec![1u8; scored.len()]);
    let scores: Vec<f64> = scored.iter().map(|p| p.0).chain(scored.iter().map(|p| p.1)).collect();
    let data = LabeledScores::new(labels, scores)?;
    Ok(ExperimentOutcome {
        auc: auc(&data)?,
        n_real: data.negatives(),
        n_fake: data.positives(),
        initial_probe_loss: report.initial_probe_loss,
        final_probe_loss: report.final_probe_loss,
        train_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Train the alignment scorer on aligned synthetic clips, then score held-out
/// aligned and shifted clips.
#[derive(Debug, Clone)]
pub struct SyncExperiment {
    pub seed: u64,
    pub train_clips: usize,
    pub eval_clips: usize,
    pub shift: isize,
    pub clip: SynthAvSpec,
    pub hidden: usize,
    pub train: SyncConfig,
}

impl SyncExperiment {
    pub fn new(seed: u64) -> Self {
        SyncExperiment {
            seed,
            train_clips: 200,
            eval_clips: 100,
            shift: 5,
            clip: SynthAvSpec { mixing_seed: derive_seed(seed, 3), ..SynthAvSpec::default() },
            hidden: 256,
            train: SyncConfig { seed: derive_seed(seed, 4), anchors_per_clip: Some(8), ..SyncConfig::default() },
        }
    }
}

fn clip<T: Real>(spec: &SynthAvSpec) -> Result<AvPair<T>> {
    let c = synth_av::<T>(spec)?;
    Ok((c.audio, c.visual))
}

pub fn run_sync_experiment<T: Real>(e: &SyncExperiment) -> Result<ExperimentOutcome> {
    if e.train.window_radius != e.clip.window_radius {
        return Err(Error::Config("experiment window radius differs from the clip spec".into()));
    }
    let start = Instant::now();
    let corpus = (0..e.train_clips)
        .into_par_iter()
        .map(|i| clip(&SynthAvSpec { seed: derive_seed(e.seed, 1000 + i as u64), ..e.clip }))
        .collect::<Result<Vec<AvPair<T>>>>()?;
    let spec = ScorerSpec {
        hidden: e.hidden,
        seed: derive_seed(e.seed, 5),
        ..ScorerSpec::new(e.clip.audio_dim, e.clip.visual_dim)
    };
    let t0 = Instant::now();
    let (model, report) = train_avsync(&corpus, &e.train, &spec, "")?;
    let train_seconds = t0.elapsed().as_secs_f64();

    let n = e.eval_clips;
    let scores = (0..2 * n)
        .into_par_iter()
        .map(|i| {
            let shift = if i < n { 0 } else { e.shift };
            let (a, v) = clip::<T>(&SynthAvSpec { seed: derive_seed(e.seed, 500_000 + i as u64), shift, ..e.clip })?;
            Ok(misalignment_score(&a, &v, &model, e.train.window_radius, SyncAggregation::Mean)?.aggregate.to_f64_lossy())
        })
        .collect::<Result<Vec<f64>>>()?;
    let labels: Vec<u8> = (0..2 * n).map(|i| u8::from(i >= n)).collect();
    let data = LabeledScores::new(labels, scores)?;
    Ok(ExperimentOutcome {
        auc: auc(&data)?,
        n_real: data.negatives(),
        n_fake: data.positives(),
        initial_probe_loss: report.initial_probe_loss,
        final_probe_loss: report.final_probe_loss,
        train_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}
