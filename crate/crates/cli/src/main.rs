use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use blendsync::config::{CalibrationMode, RunConfig};
use blendsync::error::StageContext;
use blendsync::formats::{
    check_hash, load_checkpoint, read_fused, read_scores, save_branch, save_scorer, write_fused, write_scores,
    Checkpoint, ScoreRow,
};
use blendsync::fusion::{Branch, CalibrationParams, FusedPrediction};
use blendsync::manifest::{ingest, DatasetManifest, Split};
use blendsync::masks::RegionTag;
use blendsync::pipeline::{
    calibrate_rows, evaluate, fuse_rows, load_av_split, load_train_frames, read_report_csv, render_table, run_pipeline,
    score_sync, score_visual, train_sync, train_visual, write_report_csv,
};
use blendsync::pseudo_forgery::{dump_pair, make_pair};
use blendsync::rng::derive_seed;
use blendsync::selftest::selftest;
use blendsync::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "blendsync", version, about = "Self-blended visual branches plus audio-visual sync scoring")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key=value run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset manifest CSV.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; re-derives every component seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegionArg {
    Face,
    Lip,
    LowerFace,
}

impl From<RegionArg> for RegionTag {
    fn from(r: RegionArg) -> Self {
        match r {
            RegionArg::Face => RegionTag::Face,
            RegionArg::Lip => RegionTag::Lip,
            RegionArg::LowerFace => RegionTag::LowerFace,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchArg {
    Fb,
    Lb,
    Lfb,
    Av,
}

impl From<BranchArg> for Branch {
    fn from(b: BranchArg) -> Self {
        match b {
            BranchArg::Fb => Branch::Fb,
            BranchArg::Lb => Branch::Lb,
            BranchArg::Lfb => Branch::Lfb,
            BranchArg::Av => Branch::Av,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Eval => Split::Eval,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a manifest and report counts.
    IngestCheck,
    /// Dump pseudo-forgery pairs of train frames for inspection.
    GenPairs {
        #[arg(long, value_enum, default_value = "face")]
        region: RegionArg,
        /// Stop after this many base frames.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Train one visual branch on the train split.
    TrainVisual {
        #[arg(long, value_enum)]
        region: RegionArg,
    },
    /// Train the alignment scorer on the train split.
    TrainAvsync,
    /// Score a split with a trained branch.
    Score {
        #[arg(long, value_enum)]
        branch: BranchArg,
        #[arg(long, value_enum, default_value = "eval")]
        split: SplitArg,
        /// Checkpoint path (default `<out>/checkpoints/<region|av>.savb`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fit AV min-max calibration from score files.
    Calibrate {
        #[arg(long, required = true, num_args = 1..)]
        scores: Vec<PathBuf>,
    },
    /// Fuse the four branch scores per video.
    Fuse {
        #[arg(long, required = true, num_args = 1..)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        calibration: PathBuf,
    },
    /// AUC/AP per branch and manipulation.
    Evaluate {
        #[arg(long, required = true, num_args = 1..)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        fused: Option<PathBuf>,
    },
    /// Render a report CSV as a text table.
    Report {
        /// Report CSV (default `<out>/report.csv`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train, score, calibrate, fuse and evaluate in one go.
    Run,
    /// Generate the synthetic corpus and run every built-in check end to end.
    Selftest,
    /// Run a user-supplied preprocessing tool once per input video.
    Adapt {
        /// Lines of `video_id,path`.
        #[arg(long)]
        inputs: PathBuf,
        /// Shell template; `{video_id}`, `{input}` and `{out_dir}` are substituted.
        #[arg(long)]
        command: String,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_text(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_manifest(common: &Common) -> Result<DatasetManifest> {
    let p = common.manifest.as_ref().ok_or_else(|| Error::Config("--manifest is required".into()))?;
    ingest(p)
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn checkpoint_path(cfg: &RunConfig, branch: Branch) -> PathBuf {
    let name = match branch.region() {
        Some(r) => format!("{r}.savb"),
        None => "av.savb".to_string(),
    };
    cfg.output_dir.join("checkpoints").join(name)
}

/// Read score files, rejecting any whose hash differs from the first.
fn read_score_files(paths: &[PathBuf]) -> Result<(String, Vec<ScoreRow>)> {
    let mut hash: Option<String> = None;
    let mut rows = Vec::new();
    for p in paths {
        let (h, r) = read_scores(p)?;
        match &hash {
            Some(first) => check_hash(first, &h, &p.display().to_string())?,
            None => hash = Some(h),
        }
        rows.extend(r);
    }
    Ok((hash.unwrap_or_default(), rows))
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Cmd::IngestCheck => {
            let m = load_manifest(common)?;
            let c = m.counts();
            println!("{} records ({c})", m.records.len());
            m.require_splits()?;
        }
        Cmd::GenPairs { region, limit } => {
            let cfg = load_config(common)?;
            let m = load_manifest(common)?;
            let region: RegionTag = region.into();
            let dir = cfg.output_dir.join("pairs");
            create_dir(&dir)?;
            let mut frames = load_train_frames::<f64>(&m, cfg.visual_frames_per_video)?;
            frames.truncate(limit.unwrap_or(usize::MAX));
            let mut entries = Vec::new();
            for (i, f) in frames.iter().enumerate() {
                let seed = derive_seed(cfg.seed, i as u64);
                let pair = make_pair(&f.image, &f.id, &f.landmarks, region, seed, &cfg.pairs)?;
                entries.extend(dump_pair(&pair, &dir, &format!("{i:05}_{region}"))?);
            }
            let path = dir.join("pairs.json");
            let json = serde_json::to_string_pretty(&entries).map_err(|e| Error::Data(e.to_string()))?;
            std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
            println!("wrote {} pairs to {}", frames.len(), dir.display());
        }
        Cmd::TrainVisual { region } => {
            let cfg = load_config(common)?;
            let m = load_manifest(common)?;
            m.require_splits()?;
            let region: RegionTag = region.into();
            let frames = load_train_frames::<f64>(&m, cfg.visual_frames_per_video).stage("load train frames")?;
            let model = train_visual(&cfg, &frames, region).stage("train-visual")?;
            let path = checkpoint_path(&cfg, Branch::from_region(region));
            create_dir(path.parent().expect("checkpoint dir"))?;
            save_branch(&path, &model)?;
            println!("{}", path.display());
        }
        Cmd::TrainAvsync => {
            let cfg = load_config(common)?;
            let m = load_manifest(common)?;
            m.require_splits()?;
            let corpus: Vec<_> = load_av_split::<f64>(&m, Split::Train)?.into_iter().map(|(_, p)| p).collect();
            let scorer = train_sync(&cfg, &corpus).stage("train-avsync")?;
            let path = checkpoint_path(&cfg, Branch::Av);
            create_dir(path.parent().expect("checkpoint dir"))?;
            save_scorer(&path, &scorer)?;
            println!("{}", path.display());
        }
        Cmd::Score { branch, split, checkpoint } => {
            let cfg = load_config(common)?;
            let m = load_manifest(common)?;
            let branch: Branch = branch.into();
            let split: Split = split.into();
            let ck = checkpoint.unwrap_or_else(|| checkpoint_path(&cfg, branch));
            let loaded = load_checkpoint::<f64>(&ck)?;
            let hash = cfg.hash();
            check_hash(&hash, loaded.config_hash(), &ck.display().to_string())?;
            let rows = match (loaded, branch) {
                (Checkpoint::Visual(model), b) if b.region() == Some(model.region) => {
                    score_visual(&cfg, &m, &model, split)?
                }
                (Checkpoint::Sync(scorer), Branch::Av) => score_sync(&cfg, &load_av_split::<f64>(&m, split)?, &scorer)?,
                _ => return Err(Error::Config(format!("{} does not hold a {branch} model", ck.display()))),
            };
            create_dir(&cfg.output_dir)?;
            let path = cfg.output_dir.join(format!("scores_{}_{split}.csv", branch.as_str().to_lowercase()));
            write_scores(&path, &hash, &rows)?;
            println!("{}", path.display());
        }
        Cmd::Calibrate { scores } => {
            let cfg = load_config(common)?;
            let (hash, rows) = read_score_files(&scores)?;
            check_hash(&cfg.hash(), &hash, "score files")?;
            let params = calibrate_rows(&rows, cfg.calibration_epsilon)?;
            if params.is_degenerate() {
                log::warn!("all AV scores are equal; calibration maps every score to 0.5");
            }
            if cfg.calibration_mode == CalibrationMode::Frozen {
                log::info!("frozen calibration: pass train-split AV scores here");
            }
            create_dir(&cfg.output_dir)?;
            let path = cfg.output_dir.join("calibration.txt");
            std::fs::write(&path, params.to_text(&hash)).map_err(|e| Error::io(&path, e))?;
            println!("{}", path.display());
        }
        Cmd::Fuse { scores, calibration } => {
            let cfg = load_config(common)?;
            let (hash, rows) = read_score_files(&scores)?;
            let text = std::fs::read_to_string(&calibration).map_err(|e| Error::io(&calibration, e))?;
            let (params, calib_hash) = CalibrationParams::from_text(&text)?;
            check_hash(&hash, &calib_hash, &calibration.display().to_string())?;
            let fused = fuse_rows(&rows, &params, cfg.threshold)?;
            create_dir(&cfg.output_dir)?;
            let path = cfg.output_dir.join("fused.csv");
            write_fused(&path, &hash, &fused)?;
            println!("{}", path.display());
        }
        Cmd::Evaluate { scores, fused } => {
            let cfg = load_config(common)?;
            let m = load_manifest(common)?;
            let (hash, rows) = read_score_files(&scores)?;
            let preds: Vec<FusedPrediction> = match &fused {
                Some(p) => {
                    let (h, f) = read_fused(p)?;
                    check_hash(&hash, &h, &p.display().to_string())?;
                    f.into_iter()
                        .map(|r| FusedPrediction {
                            video_id: r.video_id,
                            p_final: r.p_final,
                            label: r.label,
                            threshold: cfg.threshold,
                        })
                        .collect()
                }
                None => Vec::new(),
            };
            let report = evaluate(&m, &rows, &preds)?;
            create_dir(&cfg.output_dir)?;
            let path = cfg.output_dir.join("report.csv");
            write_report_csv(&path, &hash, &report)?;
            println!("{}", path.display());
        }
        Cmd::Report { report } => {
            let path = match report {
                Some(p) => p,
                None => load_config(common)?.output_dir.join("report.csv"),
            };
            let (hash, rows) = read_report_csv(&path)?;
            print!("{}", render_table(&hash, &rows));
        }
        Cmd::Run => {
            let cfg = load_config(common)?;
            let m = load_manifest(common)?;
            let out = run_pipeline::<f64>(&cfg, &m, &cfg.output_dir)?;
            print!("{}", render_table(&out.config_hash, &out.report));
        }
        Cmd::Selftest => {
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("selftest-out"));
            let outcome = selftest(&out, common.seed.unwrap_or(0))?;
            for c in &outcome.checks {
                println!("{c}");
            }
            println!("report: {}", outcome.report_path.display());
            if outcome.checks.iter().any(|c| !c.passed) {
                return Err(Error::Data("selftest failed".into()));
            }
        }
        Cmd::Adapt { inputs, command } => {
            let cfg = load_config(common)?;
            let text = std::fs::read_to_string(&inputs).map_err(|e| Error::io(&inputs, e))?;
            for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
                let (id, input) = line
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("expected `video_id,path`, got {line:?}")))?;
                let dir = cfg.output_dir.join(id.trim());
                create_dir(&dir)?;
                let cmd = command
                    .replace("{video_id}", id.trim())
                    .replace("{input}", input.trim())
                    .replace("{out_dir}", &dir.display().to_string());
                log::info!("{cmd}");
                let status = Command::new("sh").arg("-c").arg(&cmd).status().map_err(|e| Error::io(Path::new("sh"), e))?;
                if !status.success() {
                    return Err(Error::Data(format!("adapter failed for {}: {status}", id.trim())));
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
