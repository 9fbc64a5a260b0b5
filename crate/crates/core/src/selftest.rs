//! Fully synthetic end-to-end run: writes a small corpus of cartoon-face
//! videos with feature streams, checks the exact identities the system is
//! built on, runs the pipeline, and writes a report that is byte-identical
//! across runs with the same seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;

use crate::avsync::{
    infonce_gradcheck, infonce_loss, misalignment_score, AlignmentScorer, FeatureSequence, Modality, ScorerSpec,
    SyncAggregation, SyncGradcheckOptions,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::write_fseq;
use crate::fusion::fuse;
use crate::image::Image;
use crate::manifest::{ingest, write_manifest, Label, ManifestRecord, Split};
use crate::masks::landmarks::{write_landmark_file, LandmarkRecord};
use crate::masks::{rasterize, region_masks, RegionTag};
use crate::metrics::{auc, average_precision, LabeledScores};
use crate::pipeline::{run_pipeline, ReportRow, ALL};
use crate::pseudo_forgery::{blend, make_pair, PairConfig};
use crate::rng::{derive_seed, rng_from_seed};
use crate::synth::{landmark_consistency, synth_av, synth_face, SynthAvSpec, SynthFaceSpec};
use crate::visual::{gradcheck_instance, gradcheck_with, EncoderKind, GradcheckOptions};
use crate::masks::SoftMask;

/// Shape of the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub canvas: usize,
    pub frames_per_video: usize,
    pub train_videos: usize,
    /// Eval reals; the `rtvc` group has one twin per real.
    pub eval_real: usize,
    /// Fakes in each of the `faceswap` and `wav2lip` groups.
    pub eval_fakes_per_group: usize,
    pub av: SynthAvSpec,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn small(seed: u64) -> Self {
        CorpusSpec {
            canvas: 96,
            frames_per_video: 4,
            train_videos: 16,
            eval_real: 8,
            eval_fakes_per_group: 8,
            av: SynthAvSpec { frames: 48, ..SynthAvSpec::default() },
            seed,
        }
    }
}

/// Run configuration sized for the selftest corpus.
pub fn selftest_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.encoder.input_size = 32;
    cfg.encoder.conv_channels = [4, 8, 8, 8];
    cfg.encoder.feature_dim = 8;
    cfg.visual.steps = 30;
    cfg.visual.batch_size = 8;
    cfg.visual.learning_rate = 0.01;
    cfg.visual.probe_size = 8;
    cfg.avsync.hidden = 32;
    cfg.avsync.train.steps = 60;
    cfg.avsync.train.learning_rate = 0.01;
    cfg.avsync.train.probe_clips = 4;
    cfg.output_dir = PathBuf::from("selftest");
    cfg.with_seed(seed)
}

#[derive(Clone, Copy)]
enum Kind {
    Real,
    FaceSwap,
    Wav2Lip,
    Rtvc(usize),
}

/// Render the corpus under `dir` and return the manifest path.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec, pairs: &PairConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut plan: Vec<(String, Split, Kind)> = Vec::new();
    for i in 0..spec.train_videos {
        plan.push((format!("train_{i:03}"), Split::Train, Kind::Real));
    }
    for i in 0..spec.eval_real {
        plan.push((format!("eval_real_{i:03}"), Split::Eval, Kind::Real));
    }
    for i in 0..spec.eval_fakes_per_group {
        plan.push((format!("eval_faceswap_{i:03}"), Split::Eval, Kind::FaceSwap));
        plan.push((format!("eval_wav2lip_{i:03}"), Split::Eval, Kind::Wav2Lip));
    }
    for i in 0..spec.eval_real {
        plan.push((format!("eval_rtvc_{i:03}"), Split::Eval, Kind::Rtvc(i)));
    }
    let mixing_seed = derive_seed(spec.seed, 0x6d6978);
    let records = plan
        .par_iter()
        .map(|(id, split, kind)| write_video(dir, spec, pairs, mixing_seed, id, *split, *kind))
        .collect::<Result<Vec<_>>>()?;
    let path = dir.join("manifest.csv");
    write_manifest(&path, &records)?;
    Ok(path)
}

fn video_seed(spec: &CorpusSpec, id: &str) -> u64 {
    id.bytes().fold(spec.seed, |s, b| derive_seed(s, b as u64))
}

fn write_video(
    dir: &Path,
    spec: &CorpusSpec,
    pairs: &PairConfig,
    mixing_seed: u64,
    id: &str,
    split: Split,
    kind: Kind,
) -> Result<ManifestRecord> {
    // rtvc fakes reuse their twin's pictures and visual stream untouched.
    let source_id = match kind {
        Kind::Rtvc(i) => format!("eval_real_{i:03}"),
        _ => id.to_string(),
    };
    let seed = video_seed(spec, &source_id);
    let base = SynthFaceSpec::random(seed, spec.canvas);
    let frames_dir = PathBuf::from("frames").join(id);
    std::fs::create_dir_all(dir.join(&frames_dir)).map_err(|e| Error::io(dir.join(&frames_dir), e))?;
    let mut lm_records = Vec::new();
    for f in 0..spec.frames_per_video {
        let mut fs = base.clone();
        fs.mouth_openness = 0.5 + 0.45 * (f as f64 * 1.3).sin();
        fs.seed = derive_seed(seed, f as u64);
        let (img, lm) = synth_face::<f64>(&fs)?;
        let img = match kind {
            Kind::FaceSwap | Kind::Wav2Lip => {
                let region = if matches!(kind, Kind::FaceSwap) { RegionTag::Face } else { RegionTag::Lip };
                make_pair(&img, id, &lm, region, derive_seed(seed, 1000 + f as u64), pairs)?.fake_view
            }
            _ => img,
        };
        img.save_png(&dir.join(&frames_dir).join(format!("{f:05}.png")))?;
        lm_records.push(LandmarkRecord { frame_index: f as u32, points: lm.points().to_vec() });
    }
    let landmarks = PathBuf::from("landmarks").join(format!("{id}.txt"));
    let lm_path = dir.join(&landmarks);
    std::fs::create_dir_all(lm_path.parent().expect("has parent")).map_err(|e| Error::io(&lm_path, e))?;
    let file = std::fs::File::create(&lm_path).map_err(|e| Error::io(&lm_path, e))?;
    write_landmark_file(std::io::BufWriter::new(file), &lm_records)?;

    let av = SynthAvSpec {
        shift: if matches!(kind, Kind::Wav2Lip) { 5 } else { 0 },
        mixing_seed,
        seed,
        ..spec.av.clone()
    };
    let mut clip = synth_av::<f64>(&av)?;
    if matches!(kind, Kind::Rtvc(_)) {
        let other = SynthAvSpec { seed: video_seed(spec, id), ..av };
        clip.audio = synth_av::<f64>(&other)?.audio;
    }
    let audio_features = PathBuf::from("features").join(format!("{id}.audio.fseq"));
    let visual_features = PathBuf::from("features").join(format!("{id}.visual.fseq"));
    write_fseq(&dir.join(&audio_features), &clip.audio)?;
    write_fseq(&dir.join(&visual_features), &clip.visual)?;
    let (label, manipulation) = match kind {
        Kind::Real => (Label::Real, "real".to_string()),
        Kind::FaceSwap => (Label::Fake, "faceswap".to_string()),
        Kind::Wav2Lip => (Label::Fake, "wav2lip".to_string()),
        Kind::Rtvc(_) => (Label::Fake, "rtvc".to_string()),
    };
    Ok(ManifestRecord {
        video_id: id.to_string(),
        split,
        label,
        manipulation,
        frames_dir,
        landmarks,
        audio_features,
        visual_features,
    })
}

/// Outcome of one selftest check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.to_string(), passed, detail }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn check_blend_identities(seed: u64, n: usize) -> Result<Check> {
    let mut bad = 0;
    for k in 0..n {
        let mut rng = rng_from_seed(derive_seed(seed, k as u64));
        let (h, w) = (rng.random_range(32..48), rng.random_range(32..48));
        let mut img = || Image::<f64>::new(h, w, 3, (0..h * w * 3).map(|_| rng.random::<f64>()).collect());
        let (s, t) = (img()?, img()?);
        let zero = SoftMask::constant(RegionTag::Face, h, w, 0.0)?;
        let one = SoftMask::constant(RegionTag::Face, h, w, 1.0)?;
        if blend(&s, &t, &zero)? != t || blend(&s, &t, &one)? != s {
            bad += 1;
        }
    }
    Ok(Check::new("blend identities", bad == 0, format!("{n} pairs, {bad} violations")))
}

fn check_nesting(seed: u64, n: usize, pairs: &PairConfig) -> Result<Check> {
    let mut bad = 0;
    let mut consistency: f64 = 0.0;
    for k in 0..n {
        let spec = SynthFaceSpec::random(derive_seed(seed, k as u64), 96);
        consistency = consistency.max(landmark_consistency(&spec));
        let (_, lm) = synth_face::<f64>(&spec)?;
        let [face, lip, lower] = region_masks::<f64>(&lm, &pairs.regions, &pairs.deform, derive_seed(seed, 7 + k as u64))?;
        let (f, l, lf) = (face.support(), lip.support(), lower.support());
        let nested = (0..f.len()).all(|i| (!l[i] || lf[i]) && (!lf[i] || f[i]));
        bad += usize::from(!nested);
    }
    Ok(Check::new(
        "mask nesting",
        bad == 0 && consistency <= 1.0,
        format!("{n} faces, {bad} violations, landmark drift {consistency:.3} px"),
    ))
}

/// Even-odd point-in-polygon at every pixel centre, straight from the
/// crossing-number definition.
fn brute_raster(poly: &[(f64, f64)], h: usize, w: usize) -> Vec<bool> {
    let n = poly.len();
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut inside = false;
            for i in 0..n {
                let (xi, yi) = poly[i];
                let (xj, yj) = poly[(i + n - 1) % n];
                if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                    inside = !inside;
                }
            }
            out[y * w + x] = inside;
        }
    }
    out
}

fn check_raster(seed: u64, n: usize) -> Result<Check> {
    let mut bad = 0;
    let mut done = 0;
    let mut k = 0u64;
    while done < n {
        k += 1;
        let mut rng = rng_from_seed(derive_seed(seed, k));
        let (h, w) = (rng.random_range(8..=64), rng.random_range(8..=64));
        let m = rng.random_range(3..10);
        let poly: Vec<(f64, f64)> = (0..m)
            .map(|_| (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)))
            .collect();
        match rasterize(&poly, h, w) {
            Ok(mask) => {
                done += 1;
                bad += usize::from(mask.bits != brute_raster(&poly, h, w));
            }
            Err(Error::DegenerateGeometry(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(Check::new("rasterization oracle", bad == 0, format!("{n} polygons, {bad} mismatches")))
}

fn constant_scorer(dim: usize) -> Result<AlignmentScorer<f64>> {
    AlignmentScorer::init(&ScorerSpec { hidden: 4, zero_output_layer: true, ..ScorerSpec::new(dim, dim) })
}

fn check_infonce(seed: u64) -> Result<Check> {
    let mut rng = rng_from_seed(seed);
    let mut seq = |m, t: usize| FeatureSequence::new(m, t, 3, (0..t * 3).map(|_| rng.random::<f64>()).collect(), 25.0);
    let model = constant_scorer(3)?;
    // Frames 15..=24 of a 40-frame clip see all 31 candidates.
    let (a, v) = (seq(Modality::Audio, 40)?, seq(Modality::Visual, 40)?);
    let nll = misalignment_score(&a, &v, &model, 15, SyncAggregation::Mean)?.per_frame_nll;
    let err_interior = nll[15..25].iter().map(|l| (l - 31f64.ln()).abs()).fold(0.0, f64::max);
    // T = 6, w = 1: the two end frames see 2 candidates, the rest 3.
    let (a, v) = (seq(Modality::Audio, 6)?, seq(Modality::Visual, 6)?);
    let edge = infonce_loss(&a, &v, &model, 1)?;
    let hand = (2.0 * 2f64.ln() + 4.0 * 3f64.ln()) / 6.0;
    let err_edge = (edge - hand).abs();
    Ok(Check::new(
        "infonce analytic values",
        err_interior <= 1e-9 && err_edge <= 1e-9,
        format!("|L - ln 31| = {err_interior:.1e}, boundary case error {err_edge:.1e}"),
    ))
}

fn check_gradients(seed: u64, n: usize) -> Result<Check> {
    let mut worst_sync: f64 = 0.0;
    let mut worst_conv: f64 = 0.0;
    let mut worst_affine: f64 = 0.0;
    for k in 0..n {
        let s = derive_seed(seed, k as u64);
        let mut rng = rng_from_seed(s);
        let t = rng.random_range(4..9);
        let mut seq = |m, d: usize| FeatureSequence::new(m, t, d, (0..t * d).map(|_| rng.random::<f64>() - 0.5).collect(), 25.0);
        let (a, v) = (seq(Modality::Audio, 3)?, seq(Modality::Visual, 2)?);
        let scorer = AlignmentScorer::<f64>::init(&ScorerSpec { hidden: 5, seed: s, ..ScorerSpec::new(3, 2) })?;
        worst_sync = worst_sync.max(infonce_gradcheck(&scorer, &a, &v, 2, &SyncGradcheckOptions::default())?);
        for kind in [EncoderKind::TinyConv, EncoderKind::PatchStats] {
            let (model, batch) = gradcheck_instance::<f64>(kind, s, 2)?;
            let opts = GradcheckOptions { max_coords_per_tensor: Some(6), seed: s, ..GradcheckOptions::for_encoder(kind) };
            let r = gradcheck_with(&model, &batch, &opts)?.max_rel_error;
            match kind {
                EncoderKind::TinyConv => worst_conv = worst_conv.max(r),
                EncoderKind::PatchStats => worst_affine = worst_affine.max(r),
            }
        }
    }
    Ok(Check::new(
        "gradient checks",
        worst_sync <= 1e-3 && worst_conv <= 1e-3 && worst_affine <= 1e-4,
        format!("{n} instances; max rel error infonce {worst_sync:.1e}, tiny_conv {worst_conv:.1e}, patch_stats {worst_affine:.1e}"),
    ))
}

fn pair_count_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

fn sweep_ap(labels: &[u8], scores: &[f64]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut ap, mut prev) = (0.0, 0usize);
    for th in thresholds {
        let tp = (0..labels.len()).filter(|&i| scores[i] >= th && labels[i] == 1).count();
        let seen = scores.iter().filter(|&&s| s >= th).count();
        if tp > prev {
            ap += (tp - prev) as f64 / n_pos as f64 * (tp as f64 / seen as f64);
        }
        prev = tp;
    }
    ap
}

fn check_metrics(seed: u64, n: usize) -> Result<Check> {
    let mut bad = 0;
    for k in 0..n {
        let mut rng = rng_from_seed(derive_seed(seed, k as u64));
        let len = rng.random_range(2..=50);
        let levels = rng.random_range(1..6);
        let mut labels: Vec<u8> = (0..len).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..len).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let data = LabeledScores::new(labels.clone(), scores.clone())?;
        if auc(&data)? != pair_count_auc(&labels, &scores) || average_precision(&data)? != sweep_ap(&labels, &scores) {
            bad += 1;
        }
    }
    Ok(Check::new("metric oracles", bad == 0, format!("{n} instances, {bad} mismatches")))
}

fn check_fusion(seed: u64) -> Check {
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p: f64 = rng.random_range(0.001..0.999);
        worst = worst.max((fuse(p, p, p, p) - p).abs());
    }
    let cancel = (fuse(0.8, 0.2, 0.5, 0.5) - 0.5f64).abs();
    let mut monotone = true;
    for _ in 0..100 {
        let ps: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.01..0.98));
        let k = rng.random_range(0..4);
        let mut up = ps;
        up[k] += rng.random_range(1e-3..0.01);
        monotone &= fuse(up[0], up[1], up[2], up[3]) > fuse(ps[0], ps[1], ps[2], ps[3]);
    }
    Check::new(
        "fusion identities",
        worst <= 1e-12 && cancel <= 1e-12 && monotone,
        format!("max |fuse(p,p,p,p) - p| = {worst:.1e}, cancellation error {cancel:.1e}, monotone {monotone}"),
    )
}

/// Visual branches see identical pictures for `rtvc` fakes and their real
/// twins, so their AUC on that group is exactly one half.
fn check_chance(report: &[ReportRow]) -> Check {
    let rows: Vec<&ReportRow> = report
        .iter()
        .filter(|r| r.group == "rtvc" && ["FB", "LB", "LFB"].contains(&r.branch.as_str()))
        .collect();
    let ok = rows.len() == 3 && rows.iter().all(|r| r.auc == 0.5);
    let detail = rows.iter().map(|r| format!("{} {}", r.branch, r.auc)).collect::<Vec<_>>().join(", ");
    Check::new("chance level on unchanged video", ok, detail)
}

/// Everything a selftest run produced.
#[derive(Debug, Clone)]
pub struct SelftestOutcome {
    pub checks: Vec<Check>,
    pub report_path: PathBuf,
    pub report: Vec<ReportRow>,
}

impl SelftestOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Generate the corpus under `out/corpus`, run every check and the pipeline,
/// and write `out/selftest_report.txt`.
pub fn selftest(out: &Path, seed: u64) -> Result<SelftestOutcome> {
    let cfg = selftest_config(seed);
    let corpus = CorpusSpec::small(seed);
    let manifest_path = write_corpus(&out.join("corpus"), &corpus, &cfg.pairs)?;
    let manifest = ingest(&manifest_path)?;
    let mut checks = vec![
        check_blend_identities(derive_seed(seed, 1), 20)?,
        check_nesting(derive_seed(seed, 2), 20, &cfg.pairs)?,
        check_raster(derive_seed(seed, 3), 20)?,
        check_infonce(derive_seed(seed, 4))?,
        check_gradients(derive_seed(seed, 5), 3)?,
        check_metrics(derive_seed(seed, 6), 50)?,
        check_fusion(derive_seed(seed, 7)),
    ];
    let outputs = run_pipeline::<f64>(&cfg, &manifest, &out.join("run"))?;
    checks.push(check_chance(&outputs.report));

    let mut text = String::new();
    let _ = writeln!(text, "selftest seed {seed} config_hash {}", outputs.config_hash);
    let _ = writeln!(text, "corpus: {}", manifest.counts());
    for c in &checks {
        let _ = writeln!(text, "{c}");
    }
    text.push('\n');
    text.push_str(&std::fs::read_to_string(&outputs.report_txt).map_err(|e| Error::io(&outputs.report_txt, e))?);
    let overall = outputs.report.iter().filter(|r| r.group == ALL).map(|r| format!("{} {:.4}", r.branch, r.auc));
    let _ = writeln!(text, "\noverall AUC: {}", overall.collect::<Vec<_>>().join(", "));
    let report_path = out.join("selftest_report.txt");
    std::fs::write(&report_path, text).map_err(|e| Error::io(&report_path, e))?;
    Ok(SelftestOutcome { checks, report_path, report: outputs.report })
}
