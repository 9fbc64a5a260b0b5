//! Run configuration and its flat `key = value` text format.
//!
//! Keys are dot-separated paths into [`RunConfig`] (for example
//! `visual.steps` or `augmentation.brightness_delta.max`). Lists are written
//! comma-separated, `none` clears optional values, `#` starts a comment.
//! Unknown keys are rejected. The canonical rendering (every key, sorted)
//! is what the config hash is computed over.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::avsync::{SyncAggregation, SyncConfig};
use crate::error::{Error, Result};
use crate::pseudo_forgery::PairConfig;
use crate::rng::derive_seed;
use crate::visual::{EncoderSpec, TrainConfig, VideoAggregation};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Fit min/max on the population being scored.
    #[default]
    Transductive,
    /// Fit on the training clips and freeze.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvSyncSettings {
    pub train: SyncConfig,
    pub hidden: usize,
    pub aggregation: SyncAggregation,
}

impl Default for AvSyncSettings {
    fn default() -> Self {
        AvSyncSettings { train: SyncConfig::default(), hidden: 256, aggregation: SyncAggregation::Mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub pairs: PairConfig,
    pub encoder: EncoderSpec,
    pub visual: TrainConfig,
    /// Frames taken from each training video (uniformly spaced); `0` uses all.
    pub visual_frames_per_video: usize,
    pub video_aggregation: VideoAggregation,
    pub avsync: AvSyncSettings,
    pub calibration_mode: CalibrationMode,
    pub calibration_epsilon: f64,
    pub threshold: f64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            pairs: PairConfig::default(),
            encoder: EncoderSpec::default(),
            visual: TrainConfig::default(),
            visual_frames_per_video: 0,
            video_aggregation: VideoAggregation::MeanProbability,
            avsync: AvSyncSettings::default(),
            calibration_mode: CalibrationMode::Transductive,
            calibration_epsilon: crate::fusion::DEFAULT_EPSILON,
            threshold: crate::fusion::DEFAULT_THRESHOLD,
            output_dir: PathBuf::from("out"),
        }
        .with_seed(0)
    }
}

impl RunConfig {
    /// Set the master seed and derive every component seed from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.encoder.seed = derive_seed(seed, 101);
        self.visual.seed = derive_seed(seed, 102);
        self.avsync.train.seed = derive_seed(seed, 103);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.pairs.validate()?;
        self.encoder.validate()?;
        self.visual.validate()?;
        self.avsync.train.validate()?;
        crate::fusion::CalibrationParams::new(0.0, 1.0, self.calibration_epsilon)?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Canonical text: every key, sorted, one per line.
    pub fn to_text(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut flat = BTreeMap::new();
        flatten("", &value, &mut flat);
        flat.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parse a config file; unspecified keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let overrides = parse_key_values(text)?;
        let mut value = serde_json::to_value(RunConfig::default()).expect("config serializes");
        let seed_override = overrides.contains_key("seed");
        for (key, raw) in &overrides {
            set_path(&mut value, key, raw)?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("config: {e}")))?;
        // A bare `seed` re-derives component seeds unless they were given too.
        if seed_override {
            let explicit: Vec<&str> = ["encoder.seed", "visual.seed", "avsync.train.seed"]
                .into_iter()
                .filter(|k| overrides.contains_key(*k))
                .collect();
            let keep = (cfg.encoder.seed, cfg.visual.seed, cfg.avsync.train.seed);
            cfg = cfg.clone().with_seed(cfg.seed);
            if explicit.contains(&"encoder.seed") {
                cfg.encoder.seed = keep.0;
            }
            if explicit.contains(&"visual.seed") {
                cfg.visual.seed = keep.1;
            }
            if explicit.contains(&"avsync.train.seed") {
                cfg.avsync.train.seed = keep.2;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// First 16 hex digits of SHA-256 over [`Self::to_text`], with the output
    /// directory excluded so relocating a run keeps its hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_text().as_bytes());
        hex::encode(&digest[..8])
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
    match v {
        Value::Object(m) => {
            for (k, vv) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, vv, out);
            }
        }
        Value::Array(items) => {
            let s: Vec<String> = items.iter().map(scalar_text).collect();
            out.insert(prefix.to_string(), s.join(","));
        }
        other => {
            out.insert(prefix.to_string(), scalar_text(other));
        }
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::Null => "none".into(),
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        other => other.to_string(),
    }
}

fn parse_scalar(raw: &str, like: &Value) -> Result<Value> {
    let raw = raw.trim();
    let bad = || Error::Config(format!("cannot parse {raw:?}"));
    Ok(match like {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        Value::Number(n) if n.is_i64() => Value::from(raw.parse::<i64>().map_err(|_| bad())?),
        Value::Number(_) => Value::from(raw.parse::<f64>().map_err(|_| bad())?),
        Value::String(_) => Value::String(raw.to_string()),
        Value::Null => {
            if raw == "none" {
                Value::Null
            } else if let Ok(u) = raw.parse::<u64>() {
                Value::from(u)
            } else if let Ok(f) = raw.parse::<f64>() {
                Value::from(f)
            } else {
                Value::String(raw.to_string())
            }
        }
        _ => return Err(bad()),
    })
}

fn set_path(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (n, part) in parts.iter().enumerate() {
        let obj: &mut Map<String, Value> = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        if n + 1 == parts.len() {
            let new = match &*slot {
                Value::Array(items) => {
                    let like = items.first().cloned().unwrap_or(Value::from(0.0));
                    let vals = raw
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| parse_scalar(s, &like))
                        .collect::<Result<Vec<_>>>()?;
                    Value::Array(vals)
                }
                Value::Object(_) => return Err(Error::Config(format!("{key:?} is a section, not a value"))),
                like => {
                    let like = like.clone();
                    // Optional values that default to none accept either.
                    if raw.trim() == "none" {
                        Value::Null
                    } else {
                        parse_scalar(raw, &like)?
                    }
                }
            };
            *slot = new;
            return Ok(());
        }
        cur = slot;
    }
    Ok(())
}

/// Parse `key = value` lines; `#` comments and blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {}", n + 1, k.trim())));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let cfg = RunConfig::default().with_seed(42);
        let text = cfg.to_text();
        assert!(text.contains("visual.steps = 500\n"));
        assert!(text.contains("pairs.deform.amplitude_scales = 0.25,0.5,0.75,1.0\n"));
        assert_eq!(RunConfig::from_text(&text).unwrap(), cfg);
    }

    #[test]
    fn overrides_and_errors() {
        let cfg = RunConfig::from_text("visual.steps = 7\nencoder.kind = patch_stats # comment\n").unwrap();
        assert_eq!(cfg.visual.steps, 7);
        assert_eq!(cfg.encoder.kind, crate::visual::EncoderKind::PatchStats);
        assert!(RunConfig::from_text("visual.stepz = 7").is_err());
        assert!(RunConfig::from_text("visual.steps = many").is_err());
        assert!(RunConfig::from_text("visual = 3").is_err());
        let c = RunConfig::from_text("avsync.train.anchors_per_clip = 16").unwrap();
        assert_eq!(c.avsync.train.anchors_per_clip, Some(16));
    }

    #[test]
    fn seed_rederives_components() {
        let a = RunConfig::from_text("seed = 5").unwrap();
        assert_eq!(a, RunConfig::default().with_seed(5));
        assert_ne!(a.hash(), RunConfig::default().hash());
        let b = RunConfig::from_text("seed = 5\nvisual.seed = 1").unwrap();
        assert_eq!(b.visual.seed, 1);
        assert_eq!(b.encoder.seed, a.encoder.seed);
    }

    #[test]
    fn hash_ignores_output_dir() {
        let mut a = RunConfig::default();
        let h = a.hash();
        a.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), h);
        assert_eq!(h.len(), 16);
    }
}
