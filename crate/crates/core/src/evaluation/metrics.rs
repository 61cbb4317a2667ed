use serde::Serialize;

use super::{EvalError, Result};
use crate::ingest::Label;

fn class_counts(labels: &[Label]) -> (usize, usize) {
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    (pos, labels.len() - pos)
}

fn check_lengths(scores: &[f64], labels: &[Label]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(EvalError::NanScore { index: i });
    }
    Ok(())
}

/// Score-descending groups of tied scores, each as (positives, negatives).
fn tie_groups(scores: &[f64], labels: &[Label]) -> Vec<(u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut prev: Option<f64> = None;
    for i in order {
        if prev != Some(scores[i]) {
            groups.push((0, 0));
            prev = Some(scores[i]);
        }
        let g = groups.last_mut().unwrap();
        if labels[i].is_positive() {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// ROC AUC as the Mann-Whitney statistic: the fraction of (positive,
/// negative) pairs where the positive scores higher, with tied pairs
/// counting one half.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass { n_pos, n_neg });
    }
    // Twice the statistic keeps everything in integers.
    let mut twice_u: u128 = 0;
    let mut neg_below: u64 = n_neg as u64;
    for (pos, neg) in tie_groups(scores, labels) {
        neg_below -= neg;
        twice_u += 2 * pos as u128 * neg_below as u128 + pos as u128 * neg as u128;
    }
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// ROC curve vertices from (0, 0) to (1, 1), one per distinct score,
/// thresholds descending. Tied scores produce a diagonal step.
pub fn roc_points(scores: &[f64], labels: &[Label]) -> Result<Vec<(f64, f64)>> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass { n_pos, n_neg });
    }
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (pos, neg) in tie_groups(scores, labels) {
        tp += pos;
        fp += neg;
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

/// Area under a polyline by the trapezoid rule.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    /// TP / (TP + FN); `None` when there are no positives.
    pub fn sensitivity(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// TN / (TN + FP); `None` when there are no negatives.
    pub fn specificity(&self) -> Option<f64> {
        let d = self.tn + self.fp;
        (d > 0).then(|| self.tn as f64 / d as f64)
    }
}

/// Counts outcomes with prediction `score > threshold`; symptomatic is positive.
pub fn confusion_at(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Confusion> {
    check_lengths(scores, labels)?;
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut c = Confusion { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for (&s, l) in scores.iter().zip(labels) {
        match (s > threshold, l.is_positive()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

fn stats(values: &[f64]) -> Option<ClassStats> {
    if values.is_empty() {
        return None;
    }
    // Welford keeps one pass numerically stable.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    Some(ClassStats {
        count: values.len(),
        mean,
        std: (m2 / values.len() as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreDistribution {
    pub symptomatic: ClassStats,
    pub asymptomatic: ClassStats,
}

pub fn score_distribution(scores: &[f64], labels: &[Label]) -> Result<ScoreDistribution> {
    check_lengths(scores, labels)?;
    let pick = |want: bool| -> Vec<f64> {
        scores
            .iter()
            .zip(labels)
            .filter(|(_, l)| l.is_positive() == want)
            .map(|(&s, _)| s)
            .collect()
    };
    let symptomatic = stats(&pick(true)).ok_or(EvalError::EmptyClass(Label::Symptomatic))?;
    let asymptomatic = stats(&pick(false)).ok_or(EvalError::EmptyClass(Label::Asymptomatic))?;
    Ok(ScoreDistribution { symptomatic, asymptomatic })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub symptomatic: usize,
    pub asymptomatic: usize,
}

/// Per-class counts in `bins` equal-width bins over [0, 1]. A score of 1.0
/// falls in the last bin; scores outside [0, 1] are clamped.
pub fn histogram(scores: &[f64], labels: &[Label], bins: usize) -> Result<Vec<HistogramBin>> {
    check_lengths(scores, labels)?;
    let bins = bins.max(1);
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: i as f64 / bins as f64,
            hi: (i + 1) as f64 / bins as f64,
            symptomatic: 0,
            asymptomatic: 0,
        })
        .collect();
    for (&s, l) in scores.iter().zip(labels) {
        let idx = ((s.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        if l.is_positive() {
            out[idx].symptomatic += 1;
        } else {
            out[idx].asymptomatic += 1;
        }
    }
    Ok(out)
}
