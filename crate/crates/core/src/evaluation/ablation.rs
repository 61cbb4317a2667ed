use std::fmt::Write as _;

use rayon::prelude::*;

use super::report::{evaluate, EvalReport};
use super::Result;
use crate::datastore::DatastoreSet;
use crate::inference::{assess_batch_with, InferenceConfig, Refinement, RetrievalPaths, SampleFeatures};
use crate::ingest::SampleRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationAxis {
    /// seg-only, utt-only, utt-rev-only, all.
    Paths,
    /// raw, age, sex.
    Refinement,
    /// Each configured layer on its own.
    Layers,
}

impl std::str::FromStr for AblationAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paths" => Ok(AblationAxis::Paths),
            "refinement" => Ok(AblationAxis::Refinement),
            "layers" => Ok(AblationAxis::Layers),
            other => Err(format!("unknown ablation axis {other:?} (expected paths, refinement or layers)")),
        }
    }
}

impl AblationAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::Paths => "paths",
            AblationAxis::Refinement => "refinement",
            AblationAxis::Layers => "layers",
        }
    }

    fn variants(self, base: &InferenceConfig) -> Vec<(String, InferenceConfig)> {
        match self {
            AblationAxis::Paths => [
                RetrievalPaths::SEGMENT_ONLY,
                RetrievalPaths::UTTERANCE_ONLY,
                RetrievalPaths::UTTERANCE_REVERSED_ONLY,
                RetrievalPaths::ALL,
            ]
            .into_iter()
            .map(|p| (p.name(), InferenceConfig { paths: p, ..base.clone() }))
            .collect(),
            AblationAxis::Refinement => [Refinement::None, Refinement::Age, Refinement::Sex]
                .into_iter()
                .map(|r| (r.as_str().to_owned(), InferenceConfig { refinement: r, ..base.clone() }))
                .collect(),
            AblationAxis::Layers => base
                .layers
                .iter()
                .map(|&l| (l.to_string(), InferenceConfig { layers: vec![l], ..base.clone() }))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    /// `"base"` for the unmodified configuration, otherwise the varied axis.
    pub axis: String,
    pub value: String,
    pub config: InferenceConfig,
    pub report: EvalReport,
}

/// Evaluates the base configuration and, for each axis, every value of that
/// axis with the other settings held at base. Rows are in a fixed order:
/// base first, then axes as given.
pub fn ablation_run<F>(
    records: &[SampleRecord],
    stores: &DatastoreSet,
    base: &InferenceConfig,
    axes: &[AblationAxis],
    load: F,
) -> Result<Vec<AblationRow>>
where
    F: Fn(&SampleRecord) -> crate::inference::Result<SampleFeatures> + Sync,
{
    let mut plan = vec![("base".to_owned(), "base".to_owned(), base.clone())];
    for axis in axes {
        for (value, cfg) in axis.variants(base) {
            plan.push((axis.as_str().to_owned(), value, cfg));
        }
    }
    plan.into_par_iter()
        .map(|(axis, value, config)| {
            let outcome = assess_batch_with(records, stores, &config, &load)?;
            let (report, _) = evaluate(records, &outcome, config.threshold)?;
            Ok(AblationRow { axis, value, config, report })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("axis,value,layers,paths,refinement,roc_auc,sensitivity,specificity,n_pos,n_neg,failed\n");
    for r in rows {
        let layers: Vec<String> = r.config.layers.iter().map(u32::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.axis,
            r.value,
            layers.join(" "),
            r.config.paths.name(),
            r.config.refinement.as_str(),
            r.report.roc_auc,
            opt(r.report.sensitivity),
            opt(r.report.specificity),
            r.report.n_pos,
            r.report.n_neg,
            r.report.n_failed
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_variants() {
        let base = InferenceConfig::default();
        let paths = AblationAxis::Paths.variants(&base);
        assert_eq!(paths.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(), ["seg", "utt", "utt-rev", "all"]);
        let layers = AblationAxis::Layers.variants(&base);
        assert_eq!(layers.len(), 3);
        assert_eq!(layers[1].1.layers, [4]);
        assert_eq!(layers[1].1.k, base.k);
        let refine = AblationAxis::Refinement.variants(&base);
        assert_eq!(refine[1].1.refinement, Refinement::Age);
        assert!("bogus".parse::<AblationAxis>().is_err());
    }
}
