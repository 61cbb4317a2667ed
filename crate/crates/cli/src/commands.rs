use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Deserialize;

use speechknn_core::datastore::{snapshot_file_name, write_snapshot};
use speechknn_core::evaluation::{
    ablation_csv, ablation_run, evaluate, evaluate_scores, write_report_dir, ReportHeader, ScoredSample,
};
use speechknn_core::inference::{assess_batch, SampleFeatures};
use speechknn_core::ingest::{load_features, load_manifest};
use speechknn_core::segmentation::{default_candidates, select_n};
use speechknn_core::{Channel, Datastore, DatastoreSet, FeatureKey, InferenceConfig, Label, SampleRecord, Split};

use crate::config::{describe, resolve, FileConfig, InferenceArgs};
use crate::{Cli, Command, Data};

/// Bad invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitFilter {
    All,
    Only(Split),
}

impl std::str::FromStr for SplitFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            Ok(SplitFilter::All)
        } else {
            s.parse().map(SplitFilter::Only)
        }
    }
}

impl SplitFilter {
    fn keeps(self, r: &SampleRecord) -> bool {
        match self {
            SplitFilter::All => true,
            SplitFilter::Only(s) => r.split == s,
        }
    }

    fn name(self) -> &'static str {
        match self {
            SplitFilter::All => "all",
            SplitFilter::Only(s) => s.as_str(),
        }
    }
}

struct Ctx {
    file: FileConfig,
    seed: Option<u64>,
}

impl Ctx {
    fn manifest(&self, data: &Data) -> Result<PathBuf> {
        data.manifest
            .clone()
            .or_else(|| self.file.manifest.clone())
            .ok_or_else(|| usage("--manifest is required (flag or config key `manifest`)"))
    }

    fn store_dir(&self, data: &Data) -> Result<PathBuf> {
        data.store_dir
            .clone()
            .or_else(|| self.file.store_dir.clone())
            .ok_or_else(|| usage("--store-dir is required (flag or config key `store_dir`)"))
    }

    fn inference(&self, flags: &InferenceArgs) -> Result<InferenceConfig> {
        resolve(&self.file, flags, self.seed).map_err(|e| usage(format!("{e:#}")))
    }

    fn seed(&self) -> u64 {
        self.seed.or(self.file.seed).unwrap_or(speechknn_core::inference::DEFAULT_SEED)
    }
}

fn records(path: &Path, split: SplitFilter, ids: &[String]) -> Result<Vec<SampleRecord>> {
    let all = load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))?;
    if ids.is_empty() {
        return Ok(all.into_iter().filter(|r| split.keeps(r)).collect());
    }
    let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
    let known: HashSet<&str> = all.iter().map(|r| r.sample_id.as_str()).collect();
    if let Some(missing) = ids.iter().find(|id| !known.contains(id.as_str())) {
        bail!("sample {missing:?} is not in {}", path.display());
    }
    Ok(all.into_iter().filter(|r| wanted.contains(r.sample_id.as_str())).collect())
}

fn load_stores(dir: &Path) -> Result<DatastoreSet> {
    let set = DatastoreSet::load_dir(dir).with_context(|| format!("loading snapshots from {}", dir.display()))?;
    if set.is_empty() {
        bail!("no snapshots (*.npds) in {}", dir.display());
    }
    Ok(set)
}

fn stats_line(ds: &Datastore, path: &Path) -> String {
    let pos = ds.entries().iter().filter(|e| e.label.is_positive()).count();
    format!(
        "layer={} channel={} entries={} dim={} symptomatic={} asymptomatic={} file={}",
        ds.layer(),
        ds.channel(),
        ds.len(),
        ds.dim().map_or_else(|| "-".to_owned(), |d| d.to_string()),
        pos,
        ds.len() - pos,
        path.display()
    )
}

fn output(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, contents).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn feature_loader(cfg: &InferenceConfig) -> impl Fn(&SampleRecord) -> speechknn_core::inference::Result<SampleFeatures> + Sync + '_ {
    move |r| Ok(SampleFeatures::load(r, cfg)?)
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(|e| usage(format!("{e:#}")))?,
        None => FileConfig::default(),
    };
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    let ctx = Ctx { file, seed: cli.seed };

    match cli.command {
        Command::Build { data, layer, channel, split, inference } => {
            let manifest = ctx.manifest(&data)?;
            let dir = ctx.store_dir(&data)?;
            let layers = match layer {
                Some(l) => vec![l],
                None => ctx.inference(&inference)?.layers,
            };
            let channels = channel.map_or(Channel::ALL.to_vec(), |c| vec![c]);
            let recs = records(&manifest, split, &[])?;
            if recs.is_empty() {
                bail!("no samples in split {} of {}", split.name(), manifest.display());
            }
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for layer in layers {
                for &ch in &channels {
                    let key = FeatureKey::new(layer, ch);
                    let seqs = recs
                        .par_iter()
                        .map(|r| load_features(r, key))
                        .collect::<Result<Vec<_>, _>>()?;
                    let ds = Datastore::build(layer, ch, recs.iter().zip(&seqs))?;
                    let path = dir.join(snapshot_file_name(key));
                    write_snapshot(&ds, &path)?;
                    println!("{}", stats_line(&ds, &path));
                }
            }
        }
        Command::Add { data, ids, split } => {
            let manifest = ctx.manifest(&data)?;
            let dir = ctx.store_dir(&data)?;
            let mut stores = load_stores(&dir)?;
            let recs = records(&manifest, split, &ids)?;
            let keys: Vec<FeatureKey> = stores.keys().collect();
            for key in keys {
                let seqs = recs
                    .par_iter()
                    .map(|r| load_features(r, key))
                    .collect::<Result<Vec<_>, _>>()?;
                let ds = stores.get_mut(key).expect("key from the set");
                for (r, s) in recs.iter().zip(&seqs) {
                    ds.add(r, s).with_context(|| format!("adding {} to {key}", r.sample_id))?;
                }
            }
            stores.save_dir(&dir)?;
            for (key, ds) in stores.iter() {
                println!("{}", stats_line(ds, &dir.join(snapshot_file_name(key))));
            }
        }
        Command::Remove { data, ids } => {
            let dir = ctx.store_dir(&data)?;
            let mut stores = load_stores(&dir)?;
            for id in &ids {
                let n = stores.remove_everywhere(id);
                if n == 0 {
                    bail!("sample {id:?} is not in any snapshot under {}", dir.display());
                }
                println!("removed {id} from {n} snapshots");
            }
            stores.save_dir(&dir)?;
        }
        Command::Stats { data } => {
            let dir = ctx.store_dir(&data)?;
            for (key, ds) in load_stores(&dir)?.iter() {
                println!("{}", stats_line(ds, &dir.join(snapshot_file_name(key))));
            }
        }
        Command::SelectN { data, layer, channel, split, candidates, out } => {
            let manifest = ctx.manifest(&data)?;
            let key = FeatureKey::new(layer, channel);
            let recs = records(&manifest, split, &[])?;
            let seqs = recs
                .par_iter()
                .map(|r| load_features(r, key))
                .collect::<Result<Vec<_>, _>>()?;
            let candidates = candidates.unwrap_or_else(|| default_candidates(&seqs));
            if candidates.is_empty() {
                return Err(usage("no candidate segment counts (sequences shorter than two frames?)"));
            }
            let sel = select_n(&seqs, &candidates, ctx.seed()).map_err(|e| match e {
                speechknn_core::segmentation::SegmentationError::InvalidCandidates(_) => usage(e.to_string()),
                e => e.into(),
            })?;
            let mut csv = String::from("candidate_n,mean_silhouette,sequences_skipped\n");
            for c in &sel.candidates {
                let s = c.mean_silhouette.map_or_else(String::new, |s| s.to_string());
                let _ = writeln!(csv, "{},{},{}", c.n, s, c.sequences_skipped);
            }
            output(out.as_deref(), &csv)?;
            eprintln!("selected_n={} layer={layer} channel={channel} sequences={}", sel.selected_n, seqs.len());
        }
        Command::Assess { data, split, ids, provenance, out, inference } => {
            let cfg = ctx.inference(&inference)?;
            let manifest = ctx.manifest(&data)?;
            let stores = load_stores(&ctx.store_dir(&data)?)?;
            let recs = records(&manifest, split, &ids)?;
            let batch = assess_batch(&recs, &stores, &cfg)?;
            let mut lines = String::new();
            for r in &batch.results {
                lines.push_str(&serde_json::to_string(&r.to_json(provenance))?);
                lines.push('\n');
            }
            output(out.as_deref(), &lines)?;
            for f in &batch.failures {
                eprintln!("failed: sample={} error={}", f.sample_id, f.error);
            }
            if !batch.failures.is_empty() {
                bail!("{} of {} samples could not be assessed", batch.failures.len(), recs.len());
            }
        }
        Command::Evaluate { data, split, report_dir, inference } => {
            let cfg = ctx.inference(&inference)?;
            let manifest = ctx.manifest(&data)?;
            let stores = load_stores(&ctx.store_dir(&data)?)?;
            let recs = records(&manifest, split, &[])?;
            let batch = assess_batch(&recs, &stores, &cfg)?;
            for f in &batch.failures {
                eprintln!("failed: sample={} error={}", f.sample_id, f.error);
            }
            let (report, samples) = evaluate(&recs, &batch, cfg.threshold)?;
            if let Some(dir) = report_dir {
                let mut settings = describe(&cfg);
                settings.push(("split".into(), split.name().into()));
                write_report_dir(&dir, &ReportHeader::new(cfg.seed, settings), &report, &samples)?;
            }
            println!("{}", report.summary());
        }
        Command::Ablate { data, split, axes, out, inference } => {
            let cfg = ctx.inference(&inference)?;
            let manifest = ctx.manifest(&data)?;
            let stores = load_stores(&ctx.store_dir(&data)?)?;
            let recs = records(&manifest, split, &[])?;
            let mut unique = Vec::new();
            for a in axes {
                if !unique.contains(&a) {
                    unique.push(a);
                }
            }
            let axes = unique;
            let rows = ablation_run(&recs, &stores, &cfg, &axes, feature_loader(&cfg))?;
            output(out.as_deref(), &ablation_csv(&rows))?;
        }
        Command::Report { manifest, assessments, threshold, report_dir } => {
            let manifest = ctx.manifest(&Data { manifest, store_dir: None })?;
            let recs = records(&manifest, SplitFilter::All, &[])?;
            let samples = read_assessments(&assessments, &recs)?;
            let scores: Vec<f64> = samples.iter().map(|s| s.final_score).collect();
            let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
            let report = evaluate_scores(&scores, &labels, threshold)?;
            let settings = vec![("assessments".into(), assessments.display().to_string())];
            write_report_dir(&report_dir, &ReportHeader::new(ctx.seed(), settings), &report, &samples)?;
            println!("{}", report.summary());
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct AssessLine {
    sample_id: String,
    layer_scores: std::collections::BTreeMap<String, f64>,
    final_score: f64,
    decision: u8,
}

fn read_assessments(path: &Path, recs: &[SampleRecord]) -> Result<Vec<ScoredSample>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let truth: std::collections::HashMap<&str, Label> = recs.iter().map(|r| (r.sample_id.as_str(), r.label)).collect();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let a: AssessLine = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        let label = *truth
            .get(a.sample_id.as_str())
            .ok_or_else(|| anyhow!("{}:{}: sample {:?} not in manifest", path.display(), i + 1, a.sample_id))?;
        let mut layer_scores = a
            .layer_scores
            .iter()
            .map(|(l, s)| Ok((l.parse::<u32>().with_context(|| format!("bad layer key {l:?}"))?, *s)))
            .collect::<Result<Vec<_>>>()?;
        layer_scores.sort_by_key(|(l, _)| *l);
        out.push(ScoredSample {
            sample_id: a.sample_id,
            label,
            final_score: a.final_score,
            decision: Label::from_code(a.decision).ok_or_else(|| anyhow!("bad decision {}", a.decision))?,
            layer_scores,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_filter_parses() {
        assert_eq!("all".parse::<SplitFilter>().unwrap(), SplitFilter::All);
        assert_eq!("test".parse::<SplitFilter>().unwrap(), SplitFilter::Only(Split::Test));
        assert!("dev".parse::<SplitFilter>().is_err());
    }
}
