//! Dataset manifests: one CSV row per video, pointing at pre-extracted
//! frames, landmarks and feature files.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::avsync::{check_pair, AvPair, FeatureSequence, Modality};
use crate::error::{Error, Result};
use crate::formats::{read_fseq, read_fseq_header_file};
use crate::image::Image;
use crate::masks::landmarks::{read_landmark_file, LandmarkSet};
use crate::scalar::Real;

pub const MANIFEST_HEADER: [&str; 8] = [
    "video_id",
    "split",
    "label",
    "manipulation",
    "frames_dir",
    "landmarks",
    "audio_features",
    "visual_features",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// 1 for fake, the positive class in every metric.
    pub fn as_u8(self) -> u8 {
        u8::from(self == Label::Fake)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Fake => "fake",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(format!("split must be train or eval, got {other:?}")),
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            other => Err(format!("label must be real or fake, got {other:?}")),
        }
    }
}

/// One video. Paths are stored as written; [`DatasetManifest::resolve`]
/// makes relative ones relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub video_id: String,
    pub split: Split,
    pub label: Label,
    /// Manipulation tag for fakes (e.g. `wav2lip`, `rtvc`); `real` or empty for reals.
    pub manipulation: String,
    pub frames_dir: PathBuf,
    pub landmarks: PathBuf,
    pub audio_features: PathBuf,
    pub visual_features: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

/// Record counts per split and label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ManifestCounts {
    pub train_real: usize,
    pub eval_real: usize,
    pub eval_fake: usize,
}

impl fmt::Display for ManifestCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "train: {} real; eval: {} real, {} fake", self.train_real, self.eval_real, self.eval_fake)
    }
}

impl DatasetManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn counts(&self) -> ManifestCounts {
        let mut c = ManifestCounts::default();
        for r in &self.records {
            match (r.split, r.label) {
                (Split::Train, _) => c.train_real += 1,
                (Split::Eval, Label::Real) => c.eval_real += 1,
                (Split::Eval, Label::Fake) => c.eval_fake += 1,
            }
        }
        c
    }

    /// Manipulation tag of every fake eval record, keyed by video id.
    pub fn eval_groups(&self) -> BTreeMap<String, (Label, String)> {
        self.split(Split::Eval).map(|r| (r.video_id.clone(), (r.label, r.manipulation.clone()))).collect()
    }

    /// Fail unless both splits have records; run before any training.
    pub fn require_splits(&self) -> Result<()> {
        let c = self.counts();
        let mut problems = Vec::new();
        if c.train_real == 0 {
            problems.push("train split is empty".to_string());
        }
        if c.eval_real + c.eval_fake == 0 {
            problems.push("eval split is empty".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Manifest(problems))
        }
    }

    /// Sorted PNG frames of a record.
    pub fn frame_paths(&self, r: &ManifestRecord) -> Result<Vec<PathBuf>> {
        let dir = self.resolve(&r.frames_dir);
        let mut out: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        out.sort();
        Ok(out)
    }

    /// Frames with their landmarks. Landmark records are matched to frames
    /// by `frame_index` (position in sorted filename order).
    pub fn load_frames<T: Real>(&self, r: &ManifestRecord, only: Option<&[usize]>) -> Result<Vec<(Image<T>, LandmarkSet)>> {
        let paths = self.frame_paths(r)?;
        let lm_path = self.resolve(&r.landmarks);
        let file = std::fs::File::open(&lm_path).map_err(|e| Error::io(&lm_path, e))?;
        let records = read_landmark_file(std::io::BufReader::new(file))?;
        let by_index: BTreeMap<u32, &Vec<(f64, f64)>> = records.iter().map(|l| (l.frame_index, &l.points)).collect();
        let wanted: Vec<usize> = match only {
            Some(idx) => idx.to_vec(),
            None => (0..paths.len()).collect(),
        };
        wanted
            .into_iter()
            .map(|i| {
                let path = paths
                    .get(i)
                    .ok_or_else(|| Error::Data(format!("{}: no frame {i}", r.video_id)))?;
                let img = Image::<T>::load_png(path)?;
                let pts = by_index
                    .get(&(i as u32))
                    .ok_or_else(|| Error::Data(format!("{}: no landmarks for frame {i}", r.video_id)))?;
                let lm = LandmarkSet::new((*pts).clone(), img.width(), img.height())
                    .map_err(|e| Error::Data(format!("{} frame {i}: {e}", r.video_id)))?;
                Ok((img, lm))
            })
            .collect()
    }

    pub fn load_av<T: Real>(&self, r: &ManifestRecord) -> Result<AvPair<T>> {
        let a: FeatureSequence<T> = read_fseq(&self.resolve(&r.audio_features))?;
        let v: FeatureSequence<T> = read_fseq(&self.resolve(&r.visual_features))?;
        if a.modality != Modality::Audio || v.modality != Modality::Visual {
            return Err(Error::Data(format!("{}: feature files have swapped modalities", r.video_id)));
        }
        check_pair(&a, &v).map_err(|e| Error::Data(format!("{}: {e}", r.video_id)))?;
        Ok((a, v))
    }
}

/// Load and validate a manifest, listing every violation found.
pub fn ingest(path: &Path) -> Result<DatasetManifest> {
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    })?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if headers != MANIFEST_HEADER {
        return Err(Error::Manifest(vec![format!(
            "{}: header must be {}, found {}",
            path.display(),
            MANIFEST_HEADER.join(","),
            headers.join(",")
        )]));
    }
    let mut problems = Vec::new();
    let mut records = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let line = n + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let f = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let id = f(0);
        let split = f(1).parse::<Split>();
        let label = f(2).parse::<Label>();
        match (split, label) {
            (Ok(split), Ok(label)) => records.push(ManifestRecord {
                video_id: id,
                split,
                label,
                manipulation: f(3),
                frames_dir: PathBuf::from(f(4)),
                landmarks: PathBuf::from(f(5)),
                audio_features: PathBuf::from(f(6)),
                visual_features: PathBuf::from(f(7)),
            }),
            (s, l) => {
                for e in [s.err(), l.err()].into_iter().flatten() {
                    problems.push(format!("line {line} ({id}): {e}"));
                }
            }
        }
    }
    let manifest = DatasetManifest { root, records };
    let mut seen = HashSet::new();
    for r in &manifest.records {
        let id = &r.video_id;
        if id.is_empty() {
            problems.push("record with empty video_id".into());
        } else if !seen.insert(id.clone()) {
            problems.push(format!("{id}: duplicate video_id"));
        }
        if r.split == Split::Train && r.label == Label::Fake {
            problems.push(format!("{id}: train split record labelled fake (training uses real videos only)"));
        }
        if r.label == Label::Fake && r.manipulation.is_empty() {
            problems.push(format!("{id}: fake record without a manipulation tag"));
        }
        let frames = manifest.resolve(&r.frames_dir);
        if !frames.is_dir() {
            problems.push(format!("{id}: frames_dir {} does not exist", frames.display()));
        } else if manifest.frame_paths(r).map(|p| p.is_empty()).unwrap_or(true) {
            problems.push(format!("{id}: frames_dir {} holds no PNG frames", frames.display()));
        }
        let lm = manifest.resolve(&r.landmarks);
        if !lm.is_file() {
            problems.push(format!("{id}: landmarks {} does not exist", lm.display()));
        }
        let mut lens = Vec::new();
        for (what, p, want) in [
            ("audio_features", &r.audio_features, Modality::Audio),
            ("visual_features", &r.visual_features, Modality::Visual),
        ] {
            let full = manifest.resolve(p);
            if !full.is_file() {
                problems.push(format!("{id}: {what} {} does not exist", full.display()));
                continue;
            }
            match read_fseq_header_file(&full) {
                Ok(h) if h.modality != want => problems.push(format!("{id}: {what} holds {} features", h.modality)),
                Ok(h) => lens.push(h.frames),
                Err(e) => problems.push(format!("{id}: {what}: {e}")),
            }
        }
        if lens.len() == 2 && lens[0] != lens[1] {
            problems.push(format!("{id}: audio has {} frames, visual {}", lens[0], lens[1]));
        }
    }
    if problems.is_empty() {
        Ok(manifest)
    } else {
        Err(Error::Manifest(problems))
    }
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    w.write_record(MANIFEST_HEADER)?;
    for r in records {
        w.write_record([
            r.video_id.as_str(),
            &r.split.to_string(),
            &r.label.to_string(),
            &r.manipulation,
            &r.frames_dir.to_string_lossy(),
            &r.landmarks.to_string_lossy(),
            &r.audio_features.to_string_lossy(),
            &r.visual_features.to_string_lossy(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
