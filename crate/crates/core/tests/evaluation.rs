use proptest::prelude::*;

use speechknn_core::evaluation::{
    ablation_csv, ablation_run, confusion_at, evaluate, roc_auc, roc_points, score_distribution, trapezoid_area,
    write_report_dir, AblationAxis, EvalError, ReportHeader,
};
use speechknn_core::inference::assess_batch_with;
use speechknn_core::synthetic::{SyntheticCorpus, SyntheticSpec};
use speechknn_core::{InferenceConfig, Label, Refinement, Split};

fn labels_of(bits: &[bool]) -> Vec<Label> {
    bits.iter().map(|&b| if b { Label::Symptomatic } else { Label::Asymptomatic }).collect()
}

fn pairs_auc(scores: &[f64], labels: &[Label]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (s, l) in scores.iter().zip(labels) {
        for (t, m) in scores.iter().zip(labels) {
            if l.is_positive() && !m.is_positive() {
                pairs += 1.0;
                wins += if s > t { 1.0 } else if s == t { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

fn two_class() -> impl Strategy<Value = (Vec<f64>, Vec<Label>)> {
    (2usize..120).prop_flat_map(|n| {
        (
            proptest::collection::vec((0u8..12).prop_map(|v| v as f64 / 11.0), n),
            proptest::collection::vec(any::<bool>(), n - 2),
        )
            .prop_map(|(scores, mut bits)| {
                bits.push(true);
                bits.push(false);
                (scores, labels_of(&bits))
            })
    })
}

proptest! {
    #[test]
    fn auc_matches_pair_counting((scores, labels) in two_class()) {
        let got = roc_auc(&scores, &labels).unwrap();
        prop_assert!((got - pairs_auc(&scores, &labels)).abs() < 1e-12);
        prop_assert!((trapezoid_area(&roc_points(&scores, &labels).unwrap()) - got).abs() < 1e-9);
    }

    #[test]
    fn negated_scores_complement_auc((scores, labels) in two_class()) {
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = roc_auc(&scores, &labels).unwrap() + roc_auc(&neg, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_ignores_monotone_transforms((scores, labels) in two_class()) {
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), roc_auc(&warped, &labels).unwrap());
    }

    #[test]
    fn confusion_matches_counting((scores, labels) in two_class(), thr in 0.0f64..1.0) {
        let c = confusion_at(&scores, &labels, thr).unwrap();
        let count = |pos: bool, above: bool| scores.iter().zip(&labels)
            .filter(|(s, l)| l.is_positive() == pos && (**s > thr) == above).count();
        prop_assert_eq!((c.tp, c.fn_, c.fp, c.tn), (count(true, true), count(true, false), count(false, true), count(false, false)));
    }

    #[test]
    fn sweep_is_monotone((scores, labels) in two_class(), mut thrs in proptest::collection::vec(0.0f64..1.0, 2..20)) {
        thrs.sort_by(f64::total_cmp);
        let pts: Vec<(f64, f64)> = thrs.iter().map(|&t| {
            let c = confusion_at(&scores, &labels, t).unwrap();
            (c.sensitivity().unwrap(), c.specificity().unwrap())
        }).collect();
        for w in pts.windows(2) {
            prop_assert!(w[1].0 <= w[0].0 && w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn class_stats_match_two_pass((scores, labels) in two_class()) {
        let d = score_distribution(&scores, &labels).unwrap();
        for (stats, pos) in [(d.symptomatic, true), (d.asymptomatic, false)] {
            let v: Vec<f64> = scores.iter().zip(&labels).filter(|(_, l)| l.is_positive() == pos).map(|(s, _)| *s).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
            prop_assert_eq!(stats.count, v.len());
            prop_assert!((stats.mean - mean).abs() <= 1e-9);
            prop_assert!((stats.std - var.sqrt()).abs() <= 1e-9);
        }
    }
}

#[test]
fn degenerate_inputs_are_errors() {
    let one = labels_of(&[true, true]);
    assert!(matches!(roc_auc(&[0.1, 0.2], &one), Err(EvalError::SingleClass { n_pos: 2, n_neg: 0 })));
    assert!(matches!(roc_auc(&[0.1], &one), Err(EvalError::LengthMismatch { .. })));
    let two = labels_of(&[true, false]);
    assert!(matches!(roc_auc(&[f64::NAN, 0.2], &two), Err(EvalError::NanScore { index: 0 })));
    let c = confusion_at(&[0.9, 0.1], &one, 0.5).unwrap();
    assert_eq!(c.specificity(), None);
    assert_eq!(c.sensitivity(), Some(0.5));
}

fn corpus() -> SyntheticCorpus {
    SyntheticCorpus::generate(&SyntheticSpec {
        dim: 8,
        frames: 10,
        n_train: 80,
        n_test: 30,
        separation: 2.0,
        ..Default::default()
    })
}

#[test]
fn ablation_rows_match_independent_reruns() {
    let c = corpus();
    let stores = c.build_stores().unwrap();
    let test = c.split(Split::Test);
    let base = InferenceConfig::default();
    let load = |r: &speechknn_core::SampleRecord| Ok(c.features[&r.sample_id].clone());
    let rows = ablation_run(&test, &stores, &base, &[AblationAxis::Paths, AblationAxis::Refinement, AblationAxis::Layers], load).unwrap();
    assert_eq!(rows.len(), 1 + 4 + 3 + 3);
    assert_eq!((rows[0].axis.as_str(), rows[0].value.as_str()), ("base", "base"));
    let values: Vec<&str> = rows.iter().map(|r| r.value.as_str()).collect();
    assert_eq!(values, ["base", "seg", "utt", "utt-rev", "all", "raw", "age", "sex", "3", "4", "5"]);
    for row in &rows {
        let out = assess_batch_with(&test, &stores, &row.config, load).unwrap();
        let (report, _) = evaluate(&test, &out, row.config.threshold).unwrap();
        assert_eq!(report, row.report, "{} {}", row.axis, row.value);
    }
    assert_eq!(rows[6].config.refinement, Refinement::Age);
    assert_eq!(rows[9].config.layers, [4]);
    let csv = ablation_csv(&rows);
    assert_eq!(csv.lines().count(), 12);
    assert!(csv.lines().nth(2).unwrap().starts_with("paths,seg,3 4 5,seg,raw,"));
}

#[test]
fn ablation_without_axes_is_the_base_row() {
    let c = corpus();
    let stores = c.build_stores().unwrap();
    let test = c.split(Split::Test);
    let rows = ablation_run(&test, &stores, &InferenceConfig::default(), &[], |r| Ok(c.features[&r.sample_id].clone())).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].config, InferenceConfig::default());
}

#[test]
fn report_directory_is_deterministic() {
    let c = corpus();
    let stores = c.build_stores().unwrap();
    let test = c.split(Split::Test);
    let cfg = InferenceConfig::default();
    let out = assess_batch_with(&test, &stores, &cfg, |r| Ok(c.features[&r.sample_id].clone())).unwrap();
    let (report, samples) = evaluate(&test, &out, 0.5).unwrap();
    let header = ReportHeader::new(17, vec![("k".into(), "5".into())]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_report_dir(a.path(), &header, &report, &samples).unwrap();
    write_report_dir(b.path(), &header, &report, &samples).unwrap();
    for name in ["report.json", "scores.csv", "roc.csv", "histogram.csv", "histogram.svg"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
        assert!(!x.is_empty());
    }
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(a.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["header"]["seed"], 17);
    assert_eq!(json["header"]["std_kind"], "population");
    assert_eq!(json["metrics"]["n_pos"].as_u64().unwrap() + json["metrics"]["n_neg"].as_u64().unwrap(), 30);
    let scores = std::fs::read_to_string(a.path().join("scores.csv")).unwrap();
    assert!(scores.starts_with("sample_id,label,final_score,decision,layer_3,layer_4,layer_5\n"));
    assert_eq!(scores.lines().count(), 31);
}
