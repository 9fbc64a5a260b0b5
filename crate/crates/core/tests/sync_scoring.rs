use rand::Rng as _;

use blendsync::avsync::{
    misalignment_score, neighborhood, train_avsync, AlignmentScorer, AvPair, FeatureSequence, Modality, ScorerSpec,
    SyncAggregation, SyncConfig,
};
use blendsync::nn::LN_EPS;
use blendsync::rng::{derive_seed, rng_from_seed};
use blendsync::synth::{latent_projection, mixing_matrices, synth_av, SynthAvSpec};

fn random_seq(modality: Modality, t: usize, d: usize, seed: u64) -> FeatureSequence<f64> {
    let mut rng = rng_from_seed(seed);
    FeatureSequence::new(modality, t, d, (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect(), 25.0).unwrap()
}

fn tensor<'a>(m: &'a AlignmentScorer<f64>, name: &str) -> &'a [f64] {
    &m.params.iter().find(|p| p.name == name).unwrap().data
}

fn layer(m: &AlignmentScorer<f64>, k: usize, x: &[f64]) -> Vec<f64> {
    let (w, b) = (tensor(m, &format!("fc{k}.weight")), tensor(m, &format!("fc{k}.bias")));
    let h = b.len();
    let z: Vec<f64> = (0..h).map(|o| b[o] + x.iter().enumerate().map(|(i, xi)| w[o * x.len() + i] * xi).sum::<f64>()).collect();
    if k == 4 {
        return z;
    }
    let mean = z.iter().sum::<f64>() / h as f64;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / h as f64;
    let (g, s) = (tensor(m, &format!("ln{k}.gain")), tensor(m, &format!("ln{k}.shift")));
    (0..h).map(|i| (g[i] * (z[i] - mean) / (var + LN_EPS).sqrt() + s[i]).max(0.0)).collect()
}

fn straight_line_score(m: &AlignmentScorer<f64>, a: &[f64], v: &[f64]) -> f64 {
    let mut x: Vec<f64> = a.iter().chain(v).copied().collect();
    for k in 1..=4 {
        x = layer(m, k, &x);
    }
    x[0]
}

fn perturbed_scorer(spec: &ScorerSpec, seed: u64) -> AlignmentScorer<f64> {
    let mut m = AlignmentScorer::<f64>::init(spec).unwrap();
    let mut rng = rng_from_seed(seed);
    for p in m.params.iter_mut().filter(|p| !p.name.ends_with(".weight")) {
        p.data.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    m
}

#[test]
fn scorer_matches_straight_line_reevaluation() {
    let spec = ScorerSpec { hidden: 24, seed: 3, ..ScorerSpec::new(5, 7) };
    let m = perturbed_scorer(&spec, 4);
    let (a, v) = (random_seq(Modality::Audio, 6, 5, 5), random_seq(Modality::Visual, 6, 7, 6));
    let rows = m.neighborhood_scores(&a, &v, 2).unwrap();
    for i in 0..6 {
        let want = straight_line_score(&m, a.row(i), v.row(i));
        let got = m.score_pair(a.row(i), v.row(i)).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        for (k, j) in neighborhood(i, 6, 2).enumerate() {
            assert!((rows[i][k] - straight_line_score(&m, a.row(i), v.row(j))).abs() < 1e-12);
        }
    }
}

#[test]
fn per_frame_nll_matches_direct_softmax() {
    let spec = ScorerSpec { hidden: 16, seed: 7, ..ScorerSpec::new(4, 4) };
    let m = perturbed_scorer(&spec, 8);
    let (a, v) = (random_seq(Modality::Audio, 8, 4, 9), random_seq(Modality::Visual, 8, 4, 10));
    let got = misalignment_score(&a, &v, &m, 2, SyncAggregation::Mean).unwrap();
    let mut total = 0.0;
    for i in 0..8usize {
        let lo = i.saturating_sub(2);
        let hi = (i + 2).min(7);
        let denom: f64 = (lo..=hi).map(|j| straight_line_score(&m, a.row(i), v.row(j)).exp()).sum();
        let p = straight_line_score(&m, a.row(i), v.row(i)).exp() / denom;
        assert!((got.per_frame_nll[i] + p.ln()).abs() < 1e-12, "frame {i}");
        total -= p.ln();
    }
    assert!((got.aggregate - total / 8.0).abs() < 1e-12);
}

#[test]
fn constant_scorer_aggregate_is_mean_log_neighborhood_size() {
    let spec = ScorerSpec { hidden: 8, zero_output_layer: true, ..ScorerSpec::new(3, 3) };
    let m = AlignmentScorer::<f64>::init(&spec).unwrap();
    let (t, w) = (40, 15);
    let (a, v) = (random_seq(Modality::Audio, t, 3, 11), random_seq(Modality::Visual, t, 3, 12));
    let got = misalignment_score(&a, &v, &m, w, SyncAggregation::Mean).unwrap().aggregate;
    let want = (0..t).map(|i| (neighborhood(i, t, w).len() as f64).ln()).sum::<f64>() / t as f64;
    assert!((got - want).abs() < 1e-12);
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

// Mean over latent dimensions of corr(z_a[t], z_v[t + lag]).
fn lag_correlation(spec: &SynthAvSpec, lag: isize) -> f64 {
    let clip = synth_av::<f64>(spec).unwrap();
    let (am, vm) = mixing_matrices(spec);
    let l = spec.latent_dim;
    let za = latent_projection(&clip.audio, &am, l).unwrap();
    let zv = latent_projection(&clip.visual, &vm, l).unwrap();
    let t = spec.frames as isize;
    let ts: Vec<isize> = (0..t).filter(|&s| s + lag >= 0 && s + lag < t).collect();
    (0..l)
        .map(|d| {
            let x: Vec<f64> = ts.iter().map(|&s| za[s as usize * l + d]).collect();
            let y: Vec<f64> = ts.iter().map(|&s| zv[(s + lag) as usize * l + d]).collect();
            pearson(&x, &y)
        })
        .sum::<f64>()
        / l as f64
}

fn peak_lag(spec: &SynthAvSpec) -> (isize, f64) {
    (-10..=10)
        .map(|k| (k, lag_correlation(spec, k)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

#[test]
fn latent_correlation_peaks_at_the_shift() {
    for s in 0..10 {
        let base = SynthAvSpec { seed: derive_seed(20, s), mixing_seed: 21, ..SynthAvSpec::default() };
        assert_eq!(peak_lag(&base).0, 0, "clip {s}");
        assert_eq!(peak_lag(&SynthAvSpec { shift: 5, ..base }).0, 5, "clip {s}");
    }
}

#[test]
fn mismatched_clips_correlate_less_than_aligned_ones() {
    let mut wins = 0;
    for s in 0..100 {
        let base = SynthAvSpec { seed: derive_seed(22, s), mixing_seed: 23, ..SynthAvSpec::default() };
        let aligned = lag_correlation(&base, 0);
        let (_, mismatched) = peak_lag(&SynthAvSpec { mismatched: true, ..base });
        wins += usize::from(mismatched < aligned);
    }
    assert!(wins >= 95, "{wins}/100");
}

fn corpus(n: u64, seed: u64, clip: &SynthAvSpec) -> Vec<AvPair<f64>> {
    (0..n)
        .map(|i| {
            let c = synth_av(&SynthAvSpec { seed: derive_seed(seed, i), ..clip.clone() }).unwrap();
            (c.audio, c.visual)
        })
        .collect()
}

#[test]
fn trained_scorer_separates_shifted_clips() {
    let clip = SynthAvSpec { mixing_seed: 31, ..SynthAvSpec::default() };
    let train = corpus(100, 32, &clip);
    let spec = ScorerSpec { hidden: 64, seed: 33, ..ScorerSpec::new(clip.audio_dim, clip.visual_dim) };
    let cfg = SyncConfig { steps: 200, seed: 34, anchors_per_clip: Some(8), ..SyncConfig::default() };

    let (m0, _) = train_avsync(&train, &SyncConfig { steps: 0, ..cfg.clone() }, &spec, "").unwrap();
    assert_eq!(m0.params, AlignmentScorer::init(&spec).unwrap().params);

    let (model, report) = train_avsync(&train, &cfg, &spec, "").unwrap();
    let baseline = 31f64.ln();
    assert!(report.final_probe_loss < baseline - 0.5, "probe loss {}", report.final_probe_loss);

    let mut wins = 0;
    for i in 0..100 {
        let s = derive_seed(35, i);
        let (a, v) = {
            let c = synth_av::<f64>(&SynthAvSpec { seed: s, ..clip.clone() }).unwrap();
            (c.audio, c.visual)
        };
        let vs = synth_av::<f64>(&SynthAvSpec { seed: s, shift: 5, ..clip.clone() }).unwrap().visual;
        let aligned = misalignment_score(&a, &v, &model, 15, SyncAggregation::Mean).unwrap().aggregate;
        let shifted = misalignment_score(&a, &vs, &model, 15, SyncAggregation::Mean).unwrap().aggregate;
        wins += usize::from(shifted > aligned);
    }
    assert!(wins >= 95, "{wins}/100");
}

#[test]
fn scorer_training_is_deterministic() {
    let clip = SynthAvSpec { mixing_seed: 41, ..SynthAvSpec::default() };
    let train = corpus(8, 42, &clip);
    let spec = ScorerSpec { hidden: 16, seed: 43, ..ScorerSpec::new(clip.audio_dim, clip.visual_dim) };
    let cfg = SyncConfig { steps: 5, seed: 44, anchors_per_clip: Some(4), ..SyncConfig::default() };
    let (a, ra) = train_avsync(&train, &cfg, &spec, "").unwrap();
    let (b, rb) = train_avsync(&train, &cfg, &spec, "").unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(ra, rb);
}
