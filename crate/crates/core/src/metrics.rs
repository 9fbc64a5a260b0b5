//! Threshold-free ranking metrics with exact tie handling.
//!
//! AUC uses midranks (ties earn half credit), so a scorer that gives every
//! item the same value scores exactly 0.5. AP sweeps thresholds at each
//! distinct score from high to low; tied items enter together.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parallel labels (1 = fake/positive) and scores, with optional group tags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledScores {
    pub labels: Vec<u8>,
    pub scores: Vec<f64>,
    pub groups: Vec<Option<String>>,
}

impl LabeledScores {
    pub fn new(labels: Vec<u8>, scores: Vec<f64>) -> Result<Self> {
        let groups = vec![None; labels.len()];
        Self::with_groups(labels, scores, groups)
    }

    pub fn with_groups(labels: Vec<u8>, scores: Vec<f64>, groups: Vec<Option<String>>) -> Result<Self> {
        if labels.len() != scores.len() || labels.len() != groups.len() {
            return Err(Error::Shape("labels, scores and groups differ in length".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Numerical("score is NaN".into()));
        }
        Ok(LabeledScores { labels, scores, groups })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }
}

/// Rank-statistic AUC with midranks:
/// `(#{pos > neg} + ½ #{pos = neg}) / (n_pos · n_neg)`.
pub fn auc(data: &LabeledScores) -> Result<f64> {
    let (n_pos, n_neg) = (data.positives(), data.negatives());
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(format!("AUC needs both classes (pos {n_pos}, neg {n_neg})")));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.sort_by(|&a, &b| data.scores[a].total_cmp(&data.scores[b]));
    // Twice the positive rank sum, using midranks, kept in integers.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && data.scores[idx[j + 1]] == data.scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1, midrank (i+j+2)/2.
        let pos_in_group = idx[i..=j].iter().filter(|&&k| data.labels[k] == 1).count() as u128;
        twice_rank_sum += pos_in_group * (i + j + 2) as u128;
        i = j + 1;
    }
    let (np, nn) = (n_pos as u128, n_neg as u128);
    // U = R_pos − n_pos(n_pos+1)/2; everything doubled to stay integral.
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2 * np * nn) as f64)
}

/// Step-wise average precision over distinct-score thresholds.
pub fn average_precision(data: &LabeledScores) -> Result<f64> {
    let n_pos = data.positives();
    if n_pos == 0 {
        return Err(Error::Data("AP needs at least one positive".into()));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.sort_by(|&a, &b| data.scores[b].total_cmp(&data.scores[a]));
    let mut ap = 0.0;
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_tp = 0usize;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && data.scores[idx[j + 1]] == data.scores[idx[i]] {
            j += 1;
        }
        tp += idx[i..=j].iter().filter(|&&k| data.labels[k] == 1).count();
        seen += j - i + 1;
        if tp > prev_tp {
            ap += (tp - prev_tp) as f64 / n_pos as f64 * (tp as f64 / seen as f64);
        }
        prev_tp = tp;
        i = j + 1;
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub group: String,
    pub n_real: usize,
    pub n_fake: usize,
    pub auc: f64,
    pub ap: f64,
}

/// One row per group of fakes, each scored against all reals. Groups with
/// no fakes are skipped with a warning; reals' own tags are ignored.
pub fn breakdown(data: &LabeledScores) -> Result<Vec<BreakdownRow>> {
    let reals: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == 0).collect();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for i in 0..data.len() {
        match (&data.groups[i], data.labels[i]) {
            (Some(g), 1) => groups.entry(g.clone()).or_default().push(i),
            (None, 1) => return Err(Error::Data(format!("fake item {i} has no group tag"))),
            (Some(g), _) => {
                groups.entry(g.clone()).or_default();
            }
            _ => {}
        }
    }
    let mut rows = Vec::new();
    for (g, fakes) in groups {
        if fakes.is_empty() {
            log::warn!("group {g:?} has no fakes; skipped");
            continue;
        }
        let items: Vec<usize> = reals.iter().chain(&fakes).copied().collect();
        let sub = LabeledScores::new(
            items.iter().map(|&i| data.labels[i]).collect(),
            items.iter().map(|&i| data.scores[i]).collect(),
        )?;
        rows.push(BreakdownRow {
            group: g,
            n_real: reals.len(),
            n_fake: fakes.len(),
            auc: auc(&sub)?,
            ap: average_precision(&sub)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(labels: &[u8], scores: &[f64]) -> LabeledScores {
        LabeledScores::new(labels.to_vec(), scores.to_vec()).unwrap()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&ls(&[1, 0], &[0.9, 0.1])).unwrap(), 1.0);
        assert_eq!(auc(&ls(&[1, 0, 1, 0, 0], &[0.3; 5])).unwrap(), 0.5);
        assert_eq!(auc(&ls(&[0, 1], &[0.9, 0.1])).unwrap(), 0.0);
        assert!(matches!(auc(&ls(&[1, 1], &[0.1, 0.2])), Err(Error::Data(_))));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&ls(&[1, 0], &[0.9, 0.1])).unwrap(), 1.0);
        assert_eq!(average_precision(&ls(&[0, 1], &[0.9, 0.1])).unwrap(), 0.5);
        // All tied: one threshold, precision = prevalence.
        assert_eq!(average_precision(&ls(&[1, 0, 0, 0], &[0.5; 4])).unwrap(), 0.25);
        assert!(average_precision(&ls(&[0, 0], &[0.5, 0.2])).is_err());
    }

    #[test]
    fn breakdown_single_group_equals_whole() {
        let labels = vec![0, 1, 0, 1, 1];
        let scores = vec![0.1, 0.7, 0.4, 0.3, 0.9];
        let groups = vec![None, Some("w2l".to_string()), None, Some("w2l".to_string()), Some("w2l".to_string())];
        let d = LabeledScores::with_groups(labels.clone(), scores.clone(), groups).unwrap();
        let rows = breakdown(&d).unwrap();
        assert_eq!(rows.len(), 1);
        let whole = ls(&labels, &scores);
        assert_eq!(rows[0].auc, auc(&whole).unwrap());
        assert_eq!(rows[0].ap, average_precision(&whole).unwrap());
    }
}
