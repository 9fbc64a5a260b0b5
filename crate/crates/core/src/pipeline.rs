//! End-to-end flow: train on the train split, score the eval split with all
//! four branches, calibrate the AV scores, fuse, evaluate and report.
//!
//! Each stage is a public function so the CLI can run them one at a time;
//! [`run_pipeline`] chains them. Every file written carries the config hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::avsync::{misalignment_score, train_avsync, AlignmentScorer, AvPair, ScorerSpec};
use crate::config::{CalibrationMode, RunConfig};
use crate::error::{Error, Result, StageContext};
use crate::formats::{read_stamped, save_branch, save_scorer, write_fused, write_scores, write_stamped, ScoreRow};
use crate::fusion::{calibrate, decide, fit_minmax, fuse_all, Branch, CalibrationParams, FusedPrediction};
use crate::manifest::{DatasetManifest, Label, ManifestRecord, Split};
use crate::masks::RegionTag;
use crate::metrics::{auc, average_precision, breakdown, LabeledScores};
use crate::rng::{derive_seed, tag};
use crate::scalar::Real;
use crate::visual::{sample_frame_indices, score_video, train_branch, BranchModel, TrainFrame};

/// Column name used for the fused score in reports.
pub const FUSED: &str = "Fused";
/// Row name for the whole eval split.
pub const ALL: &str = "all";

/// Uniformly spaced `k` of `n` indices (`k = 0` keeps all).
fn spread(n: usize, k: usize) -> Vec<usize> {
    if k == 0 || k >= n {
        (0..n).collect()
    } else {
        (0..k).map(|i| i * n / k).collect()
    }
}

/// Real training frames for the visual branches.
pub fn load_train_frames<T: Real>(manifest: &DatasetManifest, per_video: usize) -> Result<Vec<TrainFrame<T>>> {
    let records: Vec<&ManifestRecord> = manifest.split(Split::Train).collect();
    let per_record = records
        .par_iter()
        .map(|r| {
            let n = manifest.frame_paths(r)?.len();
            let idx = spread(n, per_video);
            let frames = manifest.load_frames::<T>(r, Some(&idx))?;
            Ok(idx
                .into_iter()
                .zip(frames)
                .map(|(i, (image, landmarks))| TrainFrame { id: format!("{}#{i}", r.video_id), image, landmarks })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_record.into_iter().flatten().collect())
}

pub fn load_av_split<T: Real>(manifest: &DatasetManifest, split: Split) -> Result<Vec<(String, AvPair<T>)>> {
    let records: Vec<&ManifestRecord> = manifest.split(split).collect();
    records
        .par_iter()
        .map(|r| Ok((r.video_id.clone(), manifest.load_av::<T>(r)?)))
        .collect()
}

pub fn train_visual<T: Real>(cfg: &RunConfig, frames: &[TrainFrame<T>], region: RegionTag) -> Result<BranchModel<T>> {
    let mut visual = cfg.visual.clone();
    visual.seed = derive_seed(cfg.visual.seed, region.code() as u64);
    let mut spec = cfg.encoder.clone();
    spec.seed = derive_seed(cfg.encoder.seed, region.code() as u64);
    let (model, report) = train_branch(frames, region, &spec, &visual, &cfg.pairs, &cfg.hash())?;
    log::info!(
        "{region} branch: probe loss {:.4} → {:.4}, {} degenerate pairs skipped",
        report.initial_probe_loss,
        report.final_probe_loss,
        report.skipped_pairs
    );
    Ok(model)
}

pub fn train_sync<T: Real>(cfg: &RunConfig, corpus: &[AvPair<T>]) -> Result<AlignmentScorer<T>> {
    let (a, v) = corpus.first().ok_or_else(|| Error::Data("no training clips for the alignment scorer".into()))?;
    let spec = ScorerSpec {
        audio_dim: a.dim(),
        visual_dim: v.dim(),
        hidden: cfg.avsync.hidden,
        seed: derive_seed(cfg.avsync.train.seed, tag::INIT),
        zero_output_layer: false,
    };
    let (model, report) = train_avsync(corpus, &cfg.avsync.train, &spec, &cfg.hash())?;
    log::info!("alignment scorer: probe loss {:.4} → {:.4}", report.initial_probe_loss, report.final_probe_loss);
    Ok(model)
}

/// Video-level scores of one visual branch over a split.
pub fn score_visual<T: Real>(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    model: &BranchModel<T>,
    split: Split,
) -> Result<Vec<ScoreRow>> {
    let records: Vec<&ManifestRecord> = manifest.split(split).collect();
    let branch = Branch::from_region(model.region);
    records
        .par_iter()
        .map(|r| {
            let n = manifest.frame_paths(r)?.len();
            let frames = manifest.load_frames::<T>(r, Some(&sample_frame_indices(n)))?;
            let p = score_video(&frames, model, cfg.video_aggregation)
                .map_err(|e| Error::Data(format!("{}: {e}", r.video_id)))?;
            Ok(ScoreRow { video_id: r.video_id.clone(), branch, raw_score: p.to_f64_lossy() })
        })
        .collect()
}

/// Raw misalignment scores (unbounded, higher ⇒ more likely fake).
pub fn score_sync<T: Real>(cfg: &RunConfig, clips: &[(String, AvPair<T>)], model: &AlignmentScorer<T>) -> Result<Vec<ScoreRow>> {
    clips
        .par_iter()
        .map(|(id, (a, v))| {
            let s = misalignment_score(a, v, model, cfg.avsync.train.window_radius, cfg.avsync.aggregation)
                .map_err(|e| Error::Data(format!("{id}: {e}")))?;
            Ok(ScoreRow { video_id: id.clone(), branch: Branch::Av, raw_score: s.aggregate.to_f64_lossy() })
        })
        .collect()
}

/// Fit calibration on the AV rows of `rows`.
pub fn calibrate_rows(rows: &[ScoreRow], epsilon: f64) -> Result<CalibrationParams> {
    let av: Vec<f64> = rows.iter().filter(|r| r.branch == Branch::Av).map(|r| r.raw_score).collect();
    fit_minmax(&av, epsilon)
}

/// Fuse per-video scores; every video needs all four branches. Output is
/// sorted by video id.
pub fn fuse_rows(rows: &[ScoreRow], calib: &CalibrationParams, threshold: f64) -> Result<Vec<FusedPrediction>> {
    let mut per_video: BTreeMap<&str, [Option<f64>; 4]> = BTreeMap::new();
    for r in rows {
        let slot = Branch::ALL.iter().position(|b| *b == r.branch).expect("branch listed in ALL");
        let entry = per_video.entry(&r.video_id).or_default();
        if entry[slot].replace(r.raw_score).is_some() {
            return Err(Error::Data(format!("{}: duplicate {} score", r.video_id, r.branch)));
        }
    }
    per_video
        .into_iter()
        .map(|(id, s)| {
            let mut probs = [0.0; 4];
            for (k, b) in Branch::ALL.iter().enumerate() {
                let v = s[k].ok_or_else(|| Error::Data(format!("{id}: missing {b} score")))?;
                probs[k] = if *b == Branch::Av { calibrate(v, calib) } else { v };
            }
            let p_final = fuse_all(&probs, calib.epsilon);
            Ok(FusedPrediction { video_id: id.to_string(), p_final, label: decide(p_final, threshold), threshold })
        })
        .collect()
}

/// One cell group of the report: a branch evaluated on one manipulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub group: String,
    pub branch: String,
    pub n_real: usize,
    pub n_fake: usize,
    pub auc: f64,
    pub ap: f64,
}

/// AUC/AP per branch (and fused), overall and per manipulation. Each
/// manipulation is scored against all eval reals.
pub fn evaluate(
    manifest: &DatasetManifest,
    rows: &[ScoreRow],
    fused: &[FusedPrediction],
) -> Result<Vec<ReportRow>> {
    let truth = manifest.eval_groups();
    let mut columns: Vec<(String, Vec<(&str, f64)>)> = Branch::ALL
        .iter()
        .map(|b| {
            let v = rows.iter().filter(|r| r.branch == *b).map(|r| (r.video_id.as_str(), r.raw_score)).collect();
            (b.as_str().to_string(), v)
        })
        .collect();
    columns.push((FUSED.to_string(), fused.iter().map(|f| (f.video_id.as_str(), f.p_final)).collect()));
    let mut out = Vec::new();
    for (name, mut vals) in columns {
        if vals.is_empty() {
            continue;
        }
        vals.sort_by(|a, b| a.0.cmp(b.0));
        let mut labels = Vec::new();
        let mut scores = Vec::new();
        let mut groups = Vec::new();
        for (id, s) in vals {
            let (label, manip) = truth
                .get(id)
                .ok_or_else(|| Error::Data(format!("scored video {id} is not in the eval split")))?;
            labels.push(label.as_u8());
            scores.push(s);
            groups.push((*label == Label::Fake).then(|| manip.clone()));
        }
        let data = LabeledScores::with_groups(labels, scores, groups)?;
        out.push(ReportRow {
            group: ALL.into(),
            branch: name.clone(),
            n_real: data.negatives(),
            n_fake: data.positives(),
            auc: auc(&data)?,
            ap: average_precision(&data)?,
        });
        for b in breakdown(&data)? {
            out.push(ReportRow { group: b.group, branch: name.clone(), n_real: b.n_real, n_fake: b.n_fake, auc: b.auc, ap: b.ap });
        }
    }
    Ok(out)
}

pub fn write_report_csv(path: &Path, config_hash: &str, rows: &[ReportRow]) -> Result<()> {
    write_stamped(path, config_hash, &REPORT_HEADER, rows.iter())
}

pub const REPORT_HEADER: [&str; 6] = ["group", "branch", "n_real", "n_fake", "auc", "ap"];

pub fn read_report_csv(path: &Path) -> Result<(String, Vec<ReportRow>)> {
    read_stamped(path, &REPORT_HEADER)
}

/// Plain-text table: one row per manipulation, one AUC/AP column pair per branch.
pub fn render_table(config_hash: &str, rows: &[ReportRow]) -> String {
    let mut branches: Vec<&str> = Vec::new();
    let mut groups: Vec<&str> = vec![];
    for r in rows {
        if !branches.contains(&r.branch.as_str()) {
            branches.push(&r.branch);
        }
        if !groups.contains(&r.group.as_str()) {
            groups.push(&r.group);
        }
    }
    groups.sort_by_key(|g| (*g == ALL, *g));
    let cell: BTreeMap<(&str, &str), &ReportRow> = rows.iter().map(|r| ((r.group.as_str(), r.branch.as_str()), r)).collect();
    let gw = groups.iter().map(|g| g.len()).max().unwrap_or(0).max("manipulation".len());
    let mut s = String::new();
    let _ = writeln!(s, "config_hash {config_hash}");
    let _ = write!(s, "{:<gw$}", "manipulation");
    for b in &branches {
        let _ = write!(s, " | {:^15}", b);
    }
    s.push('\n');
    let _ = write!(s, "{:<gw$}", "");
    for _ in &branches {
        let _ = write!(s, " | {:>7} {:>7}", "AUC", "AP");
    }
    s.push('\n');
    let _ = writeln!(s, "{}", "-".repeat(gw + branches.len() * 18));
    for g in groups {
        let _ = write!(s, "{:<gw$}", g);
        for b in &branches {
            match cell.get(&(g, *b)) {
                Some(r) => {
                    let _ = write!(s, " | {:>7.4} {:>7.4}", r.auc, r.ap);
                }
                None => {
                    let _ = write!(s, " | {:>7} {:>7}", "-", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

/// Where [`run_pipeline`] put its outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutputs {
    pub config_hash: String,
    pub config: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub scores: PathBuf,
    pub calibration: PathBuf,
    pub fused: PathBuf,
    pub report_csv: PathBuf,
    pub report_txt: PathBuf,
    pub report: Vec<ReportRow>,
}

/// Train, score, calibrate, fuse, evaluate and report into `out`.
pub fn run_pipeline<T: Real>(cfg: &RunConfig, manifest: &DatasetManifest, out: &Path) -> Result<PipelineOutputs> {
    cfg.validate()?;
    manifest.require_splits()?;
    let hash = cfg.hash();
    let ck_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;
    let config = out.join("config.txt");
    std::fs::write(&config, cfg.to_text()).map_err(|e| Error::io(&config, e))?;

    let frames = load_train_frames::<T>(manifest, cfg.visual_frames_per_video).stage("load train frames")?;
    let mut checkpoints = Vec::new();
    let mut rows = Vec::new();
    for region in [RegionTag::Face, RegionTag::Lip, RegionTag::LowerFace] {
        let stage = format!("train-visual {region}");
        let model = train_visual(cfg, &frames, region).stage(&stage)?;
        let path = ck_dir.join(format!("{region}.savb"));
        save_branch(&path, &model).stage(&stage)?;
        checkpoints.push(path);
        rows.extend(score_visual(cfg, manifest, &model, Split::Eval).stage(&format!("score {region}"))?);
    }
    drop(frames);

    let train_av = load_av_split::<T>(manifest, Split::Train).stage("load train features")?;
    let corpus: Vec<AvPair<T>> = train_av.iter().map(|(_, p)| p.clone()).collect();
    let scorer = train_sync(cfg, &corpus).stage("train-avsync")?;
    let path = ck_dir.join("av.savb");
    save_scorer(&path, &scorer).stage("train-avsync")?;
    checkpoints.push(path);
    let eval_av = load_av_split::<T>(manifest, Split::Eval).stage("load eval features")?;
    let av_rows = score_sync(cfg, &eval_av, &scorer).stage("score av")?;

    let calib = match cfg.calibration_mode {
        CalibrationMode::Transductive => calibrate_rows(&av_rows, cfg.calibration_epsilon),
        CalibrationMode::Frozen => {
            calibrate_rows(&score_sync(cfg, &train_av, &scorer)?, cfg.calibration_epsilon)
        }
    }
    .stage("calibrate")?;
    rows.extend(av_rows);
    rows.sort_by(|a, b| (a.video_id.as_str(), a.branch).cmp(&(b.video_id.as_str(), b.branch)));

    let scores = out.join("scores.csv");
    write_scores(&scores, &hash, &rows).stage("score")?;
    let calibration = out.join("calibration.txt");
    std::fs::write(&calibration, calib.to_text(&hash)).map_err(|e| Error::io(&calibration, e))?;

    let fused_rows = fuse_rows(&rows, &calib, cfg.threshold).stage("fuse")?;
    let fused = out.join("fused.csv");
    write_fused(&fused, &hash, &fused_rows).stage("fuse")?;

    let report = evaluate(manifest, &rows, &fused_rows).stage("evaluate")?;
    let report_csv = out.join("report.csv");
    write_report_csv(&report_csv, &hash, &report).stage("report")?;
    let report_txt = out.join("report.txt");
    std::fs::write(&report_txt, render_table(&hash, &report)).map_err(|e| Error::io(&report_txt, e))?;
    Ok(PipelineOutputs { config_hash: hash, config, checkpoints, scores, calibration, fused, report_csv, report_txt, report })
}
