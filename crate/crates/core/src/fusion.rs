//! Score calibration and parameter-free average-logit fusion.
//!
//! The AV misalignment score (mean NLL, unbounded above) is min-max scaled
//! over a declared population and clamped to `[ε, 1 − ε]`. Since σ∘logit is
//! the identity on `(0, 1)`, that clamped value is used directly as the
//! branch probability. Fusion is `σ(mean_k logit(p_k))` over the four
//! branches.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{logit, sigmoid, Real};

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// The four detector branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "FB")]
    Fb,
    #[serde(rename = "LB")]
    Lb,
    #[serde(rename = "LFB")]
    Lfb,
    #[serde(rename = "AV")]
    Av,
}

impl Branch {
    pub const ALL: [Branch; 4] = [Branch::Fb, Branch::Lb, Branch::Lfb, Branch::Av];

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Fb => "FB",
            Branch::Lb => "LB",
            Branch::Lfb => "LFB",
            Branch::Av => "AV",
        }
    }

    pub fn region(self) -> Option<crate::masks::RegionTag> {
        use crate::masks::RegionTag;
        match self {
            Branch::Fb => Some(RegionTag::Face),
            Branch::Lb => Some(RegionTag::Lip),
            Branch::Lfb => Some(RegionTag::LowerFace),
            Branch::Av => None,
        }
    }

    pub fn from_region(r: crate::masks::RegionTag) -> Self {
        use crate::masks::RegionTag;
        match r {
            RegionTag::Face => Branch::Fb,
            RegionTag::Lip => Branch::Lb,
            RegionTag::LowerFace => Branch::Lfb,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FB" => Ok(Branch::Fb),
            "LB" => Ok(Branch::Lb),
            "LFB" => Ok(Branch::Lfb),
            "AV" => Ok(Branch::Av),
            other => Err(Error::Config(format!("unknown branch {other:?}"))),
        }
    }
}

/// Frozen min-max normalization state for AV scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub score_min: f64,
    pub score_max: f64,
    pub epsilon: f64,
}

impl CalibrationParams {
    pub fn new(score_min: f64, score_max: f64, epsilon: f64) -> Result<Self> {
        if !(score_min.is_finite() && score_max.is_finite()) || score_min > score_max {
            return Err(Error::Config(format!("invalid calibration range [{score_min}, {score_max}]")));
        }
        if !(epsilon > 0.0 && epsilon <= 0.1) {
            return Err(Error::Config(format!("epsilon {epsilon} outside (0, 0.1]")));
        }
        Ok(CalibrationParams { score_min, score_max, epsilon })
    }

    /// Population had a single distinct value; every input maps to 0.5.
    pub fn is_degenerate(&self) -> bool {
        self.score_min == self.score_max
    }

    /// Render as `key = value` lines.
    pub fn to_text(&self, config_hash: &str) -> String {
        format!(
            "config_hash = {config_hash}\nscore_min = {:?}\nscore_max = {:?}\nepsilon = {:?}\ndegenerate = {}\n",
            self.score_min,
            self.score_max,
            self.epsilon,
            self.is_degenerate()
        )
    }

    /// Parse [`Self::to_text`] output; returns the params and config hash.
    pub fn from_text(text: &str) -> Result<(Self, String)> {
        let kv = crate::config::parse_key_values(text)?;
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::Config(format!("calibration file lacks {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("calibration {k}: {e}")))
        };
        let p = CalibrationParams::new(num("score_min")?, num("score_max")?, num("epsilon")?)?;
        Ok((p, get("config_hash")?.clone()))
    }
}

/// Fit min/max over a population of AV scores.
pub fn fit_minmax<T: Real>(av_scores: &[T], epsilon: f64) -> Result<CalibrationParams> {
    if av_scores.is_empty() {
        return Err(Error::Data("cannot calibrate on an empty population".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in av_scores {
        let v = s.to_f64_lossy();
        if !v.is_finite() {
            return Err(Error::Numerical(format!("AV score {v} is not finite")));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let p = CalibrationParams::new(lo, hi, epsilon)?;
    if p.is_degenerate() {
        log::warn!("AV calibration population is degenerate (all scores = {lo})");
    }
    Ok(p)
}

/// Min-max scale, clamp to `[0, 1]`, then to `[ε, 1 − ε]`.
pub fn calibrate<T: Real>(av_raw: T, params: &CalibrationParams) -> T {
    if params.is_degenerate() {
        return T::lit(0.5);
    }
    let lo = T::lit(params.score_min);
    let span = T::lit(params.score_max - params.score_min);
    let m = ((av_raw - lo) / span).clamp_to(T::zero(), T::one());
    let eps = T::lit(params.epsilon);
    m.clamp_to(eps, T::one() - eps)
}

/// `σ((1/4) Σ_k logit(p_k))`, each input first clamped to `[ε, 1 − ε]`.
pub fn fuse<T: Real>(p_fb: T, p_lb: T, p_lfb: T, p_av: T) -> T {
    fuse_all(&[p_fb, p_lb, p_lfb, p_av], DEFAULT_EPSILON)
}

/// Average-logit fusion over any number of branch probabilities.
pub fn fuse_all<T: Real>(probs: &[T], epsilon: f64) -> T {
    let eps = T::lit(epsilon);
    let n = T::from_usize_lossy(probs.len());
    let mean = probs.iter().map(|p| logit(p.clamp_to(eps, T::one() - eps))).sum::<T>() / n;
    sigmoid(mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Real,
    Fake,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Real => "real",
            Verdict::Fake => "fake",
        })
    }
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Verdict::Real),
            "fake" => Ok(Verdict::Fake),
            other => Err(Error::Data(format!("unknown label {other:?}"))),
        }
    }
}

/// Fake iff `p_final ≥ threshold`.
pub fn decide<T: Real>(p_final: T, threshold: T) -> Verdict {
    if p_final >= threshold {
        Verdict::Fake
    } else {
        Verdict::Real
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedPrediction {
    pub video_id: String,
    pub p_final: f64,
    pub label: Verdict,
    pub threshold: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_minmax_examples() {
        let p = fit_minmax(&[1.0f64, 2.0, 3.0], DEFAULT_EPSILON).unwrap();
        assert_eq!((p.score_min, p.score_max), (1.0, 3.0));
        assert!(!p.is_degenerate());
        assert!(fit_minmax(&[5.0f64], DEFAULT_EPSILON).unwrap().is_degenerate());
        assert!(matches!(fit_minmax::<f64>(&[], DEFAULT_EPSILON), Err(Error::Data(_))));
    }

    #[test]
    fn calibrate_endpoints_and_degenerate_policy() {
        let p = CalibrationParams::new(1.0, 3.0, 1e-3).unwrap();
        assert_eq!(calibrate(1.0f64, &p), 1e-3);
        assert_eq!(calibrate(3.0f64, &p), 1.0 - 1e-3);
        assert_eq!(calibrate(2.0f64, &p), 0.5);
        assert_eq!(calibrate(-7.0f64, &p), 1e-3);
        let d = CalibrationParams::new(4.0, 4.0, 1e-3).unwrap();
        assert_eq!(calibrate(123.0f64, &d), 0.5);
        assert!(CalibrationParams::new(3.0, 1.0, 1e-3).is_err());
        assert!(CalibrationParams::new(1.0, 3.0, 0.5).is_err());
    }

    #[test]
    fn fuse_examples() {
        assert_eq!(fuse(0.5f64, 0.5, 0.5, 0.5), 0.5);
        assert!((fuse(0.8f64, 0.2, 0.5, 0.5) - 0.5).abs() < 1e-12);
        assert!((fuse(0.3f64, 0.3, 0.3, 0.3) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn decide_uses_greater_or_equal() {
        assert_eq!(decide(0.7f64, 0.5), Verdict::Fake);
        assert_eq!(decide(0.5f64, 0.5), Verdict::Fake);
        assert_eq!(decide(0.49f64, 0.5), Verdict::Real);
    }

    #[test]
    fn calibration_text_round_trips() {
        let p = CalibrationParams::new(0.25, 3.5, 1e-3).unwrap();
        let (q, h) = CalibrationParams::from_text(&p.to_text("abc")).unwrap();
        assert_eq!(p, q);
        assert_eq!(h, "abc");
    }
}
