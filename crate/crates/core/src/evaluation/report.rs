use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::metrics::{confusion_at, histogram, roc_auc, roc_points, score_distribution, trapezoid_area, Confusion, HistogramBin, ScoreDistribution};
use super::{EvalError, Result};
use crate::inference::{AssessmentResult, BatchOutcome};
use crate::ingest::{Label, SampleRecord};

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub roc_auc: f64,
    /// `None` when undefined (no positives).
    pub sensitivity: Option<f64>,
    /// `None` when undefined (no negatives).
    pub specificity: Option<f64>,
    pub threshold: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub confusion: Confusion,
    pub score_stats: ScoreDistribution,
    pub roc_points: Vec<(f64, f64)>,
    /// Samples that could not be scored and are excluded from the metrics.
    pub n_failed: usize,
}

pub fn evaluate_scores(scores: &[f64], labels: &[Label], threshold: f64) -> Result<EvalReport> {
    let auc = roc_auc(scores, labels)?;
    let points = roc_points(scores, labels)?;
    debug_assert!((trapezoid_area(&points) - auc).abs() < 1e-9);
    let confusion = confusion_at(scores, labels, threshold)?;
    let score_stats = score_distribution(scores, labels)?;
    let n_pos = labels.iter().filter(|l| l.is_positive()).count();
    Ok(EvalReport {
        roc_auc: auc,
        sensitivity: confusion.sensitivity(),
        specificity: confusion.specificity(),
        threshold,
        n_pos,
        n_neg: labels.len() - n_pos,
        confusion,
        score_stats,
        roc_points: points,
        n_failed: 0,
    })
}

/// One assessed sample joined with its ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub sample_id: String,
    pub label: Label,
    pub final_score: f64,
    pub decision: Label,
    pub layer_scores: Vec<(u32, f64)>,
}

impl ScoredSample {
    pub fn new(result: &AssessmentResult, label: Label) -> Self {
        Self {
            sample_id: result.sample_id.clone(),
            label,
            final_score: result.final_score,
            decision: result.decision,
            layer_scores: result.layer_scores.iter().map(|l| (l.layer, l.score)).collect(),
        }
    }
}

/// Joins batch results with manifest labels and computes the report.
pub fn evaluate(records: &[SampleRecord], outcome: &BatchOutcome, threshold: f64) -> Result<(EvalReport, Vec<ScoredSample>)> {
    let truth: HashMap<&str, Label> = records.iter().map(|r| (r.sample_id.as_str(), r.label)).collect();
    let samples = outcome
        .results
        .iter()
        .map(|res| {
            truth
                .get(res.sample_id.as_str())
                .map(|&label| ScoredSample::new(res, label))
                .ok_or_else(|| EvalError::UnknownSample(res.sample_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = samples.iter().map(|s| s.final_score).collect();
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let mut report = evaluate_scores(&scores, &labels, threshold)?;
    report.n_failed = outcome.failures.len();
    Ok((report, samples))
}

/// Run metadata written at the top of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportHeader {
    pub seed: u64,
    pub std_kind: &'static str,
    pub settings: Vec<(String, String)>,
}

impl ReportHeader {
    pub fn new(seed: u64, settings: Vec<(String, String)>) -> Self {
        Self {
            seed,
            std_kind: "population",
            settings,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_owned(), |x| x.to_string())
}

fn scores_csv(samples: &[ScoredSample]) -> String {
    let layers: Vec<u32> = samples
        .first()
        .map(|s| s.layer_scores.iter().map(|(l, _)| *l).collect())
        .unwrap_or_default();
    let mut out = String::from("sample_id,label,final_score,decision");
    for l in &layers {
        let _ = write!(out, ",layer_{l}");
    }
    out.push('\n');
    for s in samples {
        let _ = write!(out, "{},{},{},{}", s.sample_id, s.label.code(), s.final_score, s.decision.code());
        for (_, score) in &s.layer_scores {
            let _ = write!(out, ",{score}");
        }
        out.push('\n');
    }
    out
}

fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_lo,bin_hi,symptomatic,asymptomatic\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{},{}", b.lo, b.hi, b.symptomatic, b.asymptomatic);
    }
    out
}

/// Self-contained SVG of per-class score densities, one bar pair per bin.
pub fn histogram_svg(bins: &[HistogramBin]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    let total_pos: usize = bins.iter().map(|b| b.symptomatic).sum();
    let total_neg: usize = bins.iter().map(|b| b.asymptomatic).sum();
    let frac = |c: usize, t: usize| if t == 0 { 0.0 } else { c as f64 / t as f64 };
    let peak = bins
        .iter()
        .flat_map(|b| [frac(b.symptomatic, total_pos), frac(b.asymptomatic, total_neg)])
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let slot = (W - 2.0 * PAD) / bins.len().max(1) as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <line x1=\"{PAD}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"black\"/>\n",
        y = H - PAD,
        x2 = W - PAD
    );
    for (i, b) in bins.iter().enumerate() {
        let x = PAD + i as f64 * slot;
        for (j, (f, color)) in [
            (frac(b.asymptomatic, total_neg), "#4c72b0"),
            (frac(b.symptomatic, total_pos), "#dd8452"),
        ]
        .into_iter()
        .enumerate()
        {
            let h = f / peak * (H - 2.0 * PAD);
            let _ = writeln!(
                svg,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\"/>",
                x + j as f64 * slot / 2.0,
                H - PAD - h,
                slot / 2.0,
                h
            );
        }
    }
    let _ = writeln!(
        svg,
        "<text x=\"{PAD}\" y=\"{:.0}\" font-size=\"12\">0</text>\n<text x=\"{:.0}\" y=\"{:.0}\" font-size=\"12\">1</text>",
        H - PAD + 16.0,
        W - PAD - 6.0,
        H - PAD + 16.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{PAD}\" y=\"20\" font-size=\"12\" fill=\"#4c72b0\">asymptomatic (n={total_neg})</text>\n\
         <text x=\"{:.0}\" y=\"20\" font-size=\"12\" fill=\"#dd8452\">symptomatic (n={total_pos})</text>",
        W / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Writes `report.json`, `scores.csv`, `roc.csv`, `histogram.csv` and
/// `histogram.svg` into `dir`. Output depends only on the arguments.
pub fn write_report_dir(dir: impl AsRef<Path>, header: &ReportHeader, report: &EvalReport, samples: &[ScoredSample]) -> Result<()> {
    let dir = dir.as_ref();
    let write = |name: &str, contents: String| {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|source| EvalError::Io { path, source })
    };
    fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    })?;

    let json = serde_json::json!({ "header": header, "metrics": report });
    write("report.json", serde_json::to_string_pretty(&json).expect("report serializes") + "\n")?;
    write("scores.csv", scores_csv(samples))?;

    let mut roc = String::from("fpr,tpr\n");
    for (f, t) in &report.roc_points {
        let _ = writeln!(roc, "{f},{t}");
    }
    write("roc.csv", roc)?;

    let scores: Vec<f64> = samples.iter().map(|s| s.final_score).collect();
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let bins = histogram(&scores, &labels, HISTOGRAM_BINS)?;
    write("histogram.csv", histogram_csv(&bins))?;
    write("histogram.svg", histogram_svg(&bins))?;
    Ok(())
}

/// One-line summary used by the CLI.
pub fn summary_line(report: &EvalReport) -> String {
    format!(
        "roc_auc={} sensitivity={} specificity={} threshold={} n_pos={} n_neg={} failed={}",
        report.roc_auc,
        opt(report.sensitivity),
        opt(report.specificity),
        report.threshold,
        report.n_pos,
        report.n_neg,
        report.n_failed
    )
}

impl EvalReport {
    pub fn summary(&self) -> String {
        summary_line(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_from_scores() {
        let labels: Vec<Label> = [1, 0, 1, 0].iter().map(|&c| Label::from_code(c).unwrap()).collect();
        let r = evaluate_scores(&[0.9, 0.2, 0.6, 0.7], &labels, 0.5).unwrap();
        assert_eq!(r.roc_auc, 0.75);
        assert_eq!(r.sensitivity, Some(1.0));
        assert_eq!(r.specificity, Some(0.5));
        assert_eq!((r.n_pos, r.n_neg), (2, 2));
        assert!(r.summary().starts_with("roc_auc=0.75 "));
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let bins = [HistogramBin { lo: 0.0, hi: 0.5, symptomatic: 1, asymptomatic: 3 }, HistogramBin { lo: 0.5, hi: 1.0, symptomatic: 2, asymptomatic: 0 }];
        let svg = histogram_svg(&bins);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect x=").count(), 4);
    }
}
