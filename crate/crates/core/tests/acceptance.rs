//! Acceptance criteria 1 to 11. One test runs them in order so the timed
//! experiments do not compete for cores; each criterion prints a PASS/FAIL line.

use std::time::{Duration, Instant};

use blendsync::avsync::{
    infonce_gradcheck, infonce_loss, misalignment_score, per_frame_nll_from_scores, AlignmentScorer, FeatureSequence,
    Modality, ScorerSpec, SyncAggregation, SyncGradcheckOptions,
};
use blendsync::experiments::{run_sync_experiment, run_visual_experiment, SyncExperiment, VisualExperiment};
use blendsync::fusion::fuse;
use blendsync::image::Image;
use blendsync::masks::{rasterize, region_masks, RegionTag, SoftMask};
use blendsync::metrics::{auc, average_precision, LabeledScores};
use blendsync::pseudo_forgery::{blend, PairConfig};
use blendsync::rng::{derive_seed, rng_from_seed};
use blendsync::selftest::selftest;
use blendsync::synth::{synth_face, SynthFaceSpec};
use blendsync::visual::{gradcheck_instance, gradcheck_with, EncoderKind, GradcheckOptions};
use rand::Rng as _;

const SEED: u64 = 20_240_601;

struct Outcome {
    passed: bool,
    detail: String,
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    o.detail = format!("{} [{:.1} s]", o.detail, took.as_secs_f64());
    if let Some(limit) = limit {
        if took > limit {
            o.passed = false;
            o.detail = format!("{} exceeds {:.0} s", o.detail, limit.as_secs_f64());
        }
    }
    o
}

fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool").install(f)
}

fn random_image(rng: &mut impl rand::Rng, h: usize, w: usize) -> Image<f64> {
    Image::new(h, w, 3, (0..h * w * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn blend_identities() -> Outcome {
    let mut bad = 0;
    for k in 0..100 {
        let mut rng = rng_from_seed(derive_seed(SEED, k));
        let (h, w) = (rng.random_range(8..64), rng.random_range(8..64));
        let (s, t) = (random_image(&mut rng, h, w), random_image(&mut rng, h, w));
        let zero = SoftMask::constant(RegionTag::Face, h, w, 0.0).unwrap();
        let one = SoftMask::constant(RegionTag::Face, h, w, 1.0).unwrap();
        let to_bits = |img: &Image<f64>| img.data().iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
        let z = blend(&s, &t, &zero).unwrap();
        let o = blend(&s, &t, &one).unwrap();
        bad += usize::from(to_bits(&z) != to_bits(&t) || to_bits(&o) != to_bits(&s));
    }
    Outcome { passed: bad == 0, detail: format!("100 pairs, {bad} not bit-exact") }
}

fn mask_nesting() -> Outcome {
    let pairs = PairConfig::default();
    let mut bad = 0;
    for k in 0..100 {
        let spec = SynthFaceSpec::random(derive_seed(SEED ^ 2, k), 128);
        let (_, lm) = synth_face::<f64>(&spec).unwrap();
        let [face, lip, lower] = region_masks::<f64>(&lm, &pairs.regions, &pairs.deform, derive_seed(SEED, k)).unwrap();
        let (f, l, lf) = (face.values(), lip.values(), lower.values());
        bad += (0..f.len()).filter(|&i| (l[i] > 0.0 && lf[i] <= 0.0) || (lf[i] > 0.0 && f[i] <= 0.0)).count();
    }
    Outcome { passed: bad == 0, detail: format!("100 faces, {bad} violating pixels") }
}

/// Crossing parity of a rightward ray from each pixel centre, with the
/// crossing side decided by the sign of a cross product.
fn even_odd_oracle(poly: &[(f64, f64)], h: usize, w: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut crossings = 0;
            for (i, &(ax, ay)) in poly.iter().enumerate() {
                let (bx, by) = poly[(i + 1) % poly.len()];
                if (ay > py) == (by > py) {
                    continue;
                }
                let cross = (bx - ax) * (py - ay) - (px - ax) * (by - ay);
                if (by > ay && cross > 0.0) || (by < ay && cross < 0.0) {
                    crossings += 1;
                }
            }
            out.push(crossings % 2 == 1);
        }
    }
    out
}

fn rasterization_oracle() -> Outcome {
    let mut rng = rng_from_seed(SEED ^ 3);
    let (mut bad, mut done) = (0, 0);
    while done < 100 {
        let (h, w) = (rng.random_range(4..=64), rng.random_range(4..=64));
        let n = rng.random_range(3..12);
        let poly: Vec<(f64, f64)> =
            (0..n).map(|_| (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64))).collect();
        let Ok(mask) = rasterize(&poly, h, w) else { continue };
        done += 1;
        bad += usize::from(mask.bits != even_odd_oracle(&poly, h, w));
    }
    Outcome { passed: bad == 0, detail: format!("100 polygons, {bad} mismatches") }
}

fn seq(rng: &mut impl rand::Rng, m: Modality, t: usize, d: usize) -> FeatureSequence<f64> {
    FeatureSequence::new(m, t, d, (0..t * d).map(|_| rng.random::<f64>() - 0.5).collect(), 25.0).unwrap()
}

fn infonce_values() -> Outcome {
    let mut rng = rng_from_seed(SEED ^ 4);
    let constant =
        AlignmentScorer::<f64>::init(&ScorerSpec { hidden: 8, zero_output_layer: true, ..ScorerSpec::new(3, 3) })
            .unwrap();
    let (a, v) = (seq(&mut rng, Modality::Audio, 40, 3), seq(&mut rng, Modality::Visual, 40, 3));
    let nll = misalignment_score(&a, &v, &constant, 15, SyncAggregation::Mean).unwrap().per_frame_nll;
    let interior = nll[15..25].iter().map(|l| (l - 31f64.ln()).abs()).fold(0.0, f64::max);

    let (a, v) = (seq(&mut rng, Modality::Audio, 6, 3), seq(&mut rng, Modality::Visual, 6, 3));
    let constant_edge = (infonce_loss(&a, &v, &constant, 1).unwrap() - (2.0 * 2f64.ln() + 4.0 * 3f64.ln()) / 6.0).abs();

    let s: Vec<Vec<f64>> = (0..6).map(|_| (0..6).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let got = per_frame_nll_from_scores(|i, j| s[i][j], 6, 1);
    let mut table = 0.0f64;
    for i in 0..6usize {
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(5);
        let z: f64 = (lo..=hi).map(|j| s[i][j].exp()).sum();
        table = table.max((got[i] - (z.ln() - s[i][i])).abs());
    }
    Outcome {
        passed: interior <= 1e-9 && constant_edge <= 1e-9 && table <= 1e-9,
        detail: format!(
            "interior |nll - ln 31| {interior:.1e}; T=6 w=1 constant {constant_edge:.1e}, tabulated {table:.1e}"
        ),
    }
}

fn gradient_checks() -> Outcome {
    let (mut sync, mut conv, mut affine) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..20 {
        let s = derive_seed(SEED ^ 5, k);
        let mut rng = rng_from_seed(s);
        let t = rng.random_range(3..=6);
        let (da, dv) = (rng.random_range(2..5), rng.random_range(2..5));
        let (a, v) = (seq(&mut rng, Modality::Audio, t, da), seq(&mut rng, Modality::Visual, t, dv));
        let hidden = rng.random_range(4..=16);
        let scorer = AlignmentScorer::<f64>::init(&ScorerSpec { hidden, seed: s, ..ScorerSpec::new(da, dv) }).unwrap();
        let w = rng.random_range(1..=2);
        sync = sync.max(infonce_gradcheck(&scorer, &a, &v, w, &SyncGradcheckOptions::default()).unwrap());
        for kind in [EncoderKind::TinyConv, EncoderKind::PatchStats] {
            let (model, batch) = gradcheck_instance::<f64>(kind, s, 4).unwrap();
            let r = gradcheck_with(&model, &batch, &GradcheckOptions::for_encoder(kind)).unwrap().max_rel_error;
            match kind {
                EncoderKind::TinyConv => conv = conv.max(r),
                EncoderKind::PatchStats => affine = affine.max(r),
            }
        }
    }
    Outcome {
        passed: sync <= 1e-3 && conv <= 1e-3 && affine <= 1e-4,
        detail: format!("20 instances each; max rel error infonce {sync:.1e}, tiny_conv {conv:.1e}, affine-only {affine:.1e}"),
    }
}

fn pairwise_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let pos: Vec<f64> = labels.iter().zip(scores).filter(|(l, _)| **l == 1).map(|(_, s)| *s).collect();
    let neg: Vec<f64> = labels.iter().zip(scores).filter(|(l, _)| **l == 0).map(|(_, s)| *s).collect();
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn threshold_sweep_ap(labels: &[u8], scores: &[f64]) -> f64 {
    let positives = labels.iter().filter(|l| **l == 1).count() as f64;
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cuts.dedup();
    let mut ap = 0.0;
    let mut last_hits = 0.0;
    for c in cuts {
        let predicted = scores.iter().filter(|s| **s >= c).count() as f64;
        let hits = labels.iter().zip(scores).filter(|(l, s)| **l == 1 && **s >= c).count() as f64;
        ap += (hits - last_hits) / positives * (hits / predicted);
        last_hits = hits;
    }
    ap
}

fn metric_oracles() -> Outcome {
    let mut bad = 0;
    for k in 0..200 {
        let mut rng = rng_from_seed(derive_seed(SEED ^ 6, k));
        let n = rng.random_range(2..=50);
        let levels = rng.random_range(1..=4);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        labels[0] = 0;
        labels[n - 1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.25).collect();
        let data = LabeledScores::new(labels.clone(), scores.clone()).unwrap();
        if auc(&data).unwrap() != pairwise_auc(&labels, &scores)
            || average_precision(&data).unwrap() != threshold_sweep_ap(&labels, &scores)
        {
            bad += 1;
        }
    }
    Outcome { passed: bad == 0, detail: format!("200 instances, {bad} mismatches") }
}

fn chance_level() -> Outcome {
    let mut worst = 0.0f64;
    for (n_real, n_fake) in [(1, 1), (7, 3), (50, 50), (13, 29)] {
        let mut labels = vec![0u8; n_real];
        labels.extend(vec![1u8; n_fake]);
        let data = LabeledScores::new(labels, vec![0.37; n_real + n_fake]).unwrap();
        worst = worst.max((auc(&data).unwrap() - 0.5).abs());
    }
    Outcome { passed: worst == 0.0, detail: format!("identical scores, max |AUC - 0.5| = {worst:e}") }
}

fn fusion_identities() -> Outcome {
    let mut rng = rng_from_seed(SEED ^ 8);
    let mut same = 0.0f64;
    for _ in 0..50 {
        let p: f64 = rng.random_range(0.002..0.998);
        same = same.max((fuse(p, p, p, p) - p).abs());
    }
    let cancel = (fuse(0.8, 0.2, 0.5, 0.5) - 0.5f64).abs();
    let mut not_monotone = 0;
    for _ in 0..100 {
        let base: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.01..0.95));
        let mut up = base;
        up[rng.random_range(0..4)] += rng.random_range(1e-4..0.04);
        not_monotone += usize::from(fuse(up[0], up[1], up[2], up[3]) <= fuse(base[0], base[1], base[2], base[3]));
    }
    Outcome {
        passed: same <= 1e-12 && cancel <= 1e-12 && not_monotone == 0,
        detail: format!("fuse(p,p,p,p) err {same:.1e}; fuse(.8,.2,.5,.5) err {cancel:.1e}; {not_monotone}/100 not increasing"),
    }
}

fn avsync_experiment() -> Outcome {
    let o = single_threaded(|| run_sync_experiment::<f64>(&SyncExperiment::new(SEED)).unwrap());
    Outcome {
        passed: o.auc >= 0.95,
        detail: format!(
            "aligned vs shift 5: AUC {:.4} ({} vs {}); probe loss {:.3} -> {:.3}",
            o.auc, o.n_real, o.n_fake, o.initial_probe_loss, o.final_probe_loss
        ),
    }
}

fn visual_experiment() -> Outcome {
    let o = single_threaded(|| run_visual_experiment::<f64>(&VisualExperiment::new(SEED)).unwrap());
    Outcome {
        passed: o.auc >= 0.90,
        detail: format!(
            "FACE branch, real vs blended views: AUC {:.4} ({} vs {}); probe loss {:.3} -> {:.3}",
            o.auc, o.n_real, o.n_fake, o.initial_probe_loss, o.final_probe_loss
        ),
    }
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let reports: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| std::fs::read(selftest(d.path(), SEED).unwrap().report_path).unwrap())
        .collect();
    Outcome {
        passed: reports[0] == reports[1] && !reports[0].is_empty(),
        detail: format!("two selftest runs, {} and {} bytes, identical: {}", reports[0].len(), reports[1].len(), reports[0] == reports[1]),
    }
}

#[test]
fn acceptance() {
    let secs = |s| Some(Duration::from_secs(s));
    let criteria: Vec<(&str, Option<Duration>, fn() -> Outcome)> = vec![
        ("blend identities", secs(10), blend_identities),
        ("mask nesting", secs(30), mask_nesting),
        ("rasterization oracle", secs(30), rasterization_oracle),
        ("InfoNCE analytic value", None, infonce_values),
        ("gradient checks", secs(120), gradient_checks),
        ("metric oracles", secs(60), metric_oracles),
        ("chance level", None, chance_level),
        ("fusion identities", None, fusion_identities),
        ("AVSync experiment", secs(300), avsync_experiment),
        ("visual experiment", secs(600), visual_experiment),
        ("determinism", None, determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        let o = timed(limit, f);
        println!("{} {:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
        if !o.passed {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
