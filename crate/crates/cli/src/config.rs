//! Run configuration: preset, then TOML file, then command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use speechknn_core::inference::{LabelCombination, RetrievalPaths};
use speechknn_core::{InferenceConfig, Refinement};

/// Segment count: one value for every layer, or per layer.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum SegmentCounts {
    Uniform(usize),
    PerLayer(BTreeMap<String, usize>),
}

impl std::str::FromStr for SegmentCounts {
    type Err = String;

    /// `2` or `3:2,4:73,5:73`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(n) = s.parse() {
            return Ok(SegmentCounts::Uniform(n));
        }
        let mut map = BTreeMap::new();
        for part in s.split(',') {
            let (layer, n) = part
                .split_once(':')
                .ok_or_else(|| format!("expected N or LAYER:N[,LAYER:N...], got {s:?}"))?;
            let n: usize = n.trim().parse().map_err(|_| format!("bad segment count in {part:?}"))?;
            map.insert(layer.trim().to_owned(), n);
        }
        Ok(SegmentCounts::PerLayer(map))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// n = 2 on every layer, no refinement.
    Default,
    /// n = 2/73/73 on layers 3/4/5, age refinement.
    ReadSpeech,
    /// n = 2 on every layer, no refinement.
    CountingSpeech,
}

/// Keys accepted in the `--config` TOML file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub manifest: Option<PathBuf>,
    pub store_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub preset: Option<Preset>,
    pub layers: Option<Vec<u32>>,
    pub n: Option<SegmentCounts>,
    pub k: Option<usize>,
    pub refinement: Option<Refinement>,
    pub paths: Option<String>,
    pub threshold: Option<f64>,
    pub exclude_self: Option<bool>,
    pub combination: Option<LabelCombination>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Flags shared by every subcommand that scores samples.
#[derive(Debug, Clone, Default, Args)]
pub struct InferenceArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Comma-separated layer indices.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<u32>>,
    /// Segment count: `N` for every layer or `LAYER:N,...`.
    #[arg(long)]
    pub n: Option<SegmentCounts>,
    /// Neighbours per query.
    #[arg(long)]
    pub k: Option<usize>,
    /// raw, age or sex.
    #[arg(long)]
    pub refinement: Option<Refinement>,
    /// all, or a `+`-separated subset of seg, utt, utt-rev.
    #[arg(long)]
    pub paths: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Skip each query's own entry if it is in a store.
    #[arg(long)]
    pub exclude_self: bool,
    /// pooled or mean-of-paths.
    #[arg(long)]
    pub combination: Option<LabelCombination>,
}

fn apply_counts(cfg: &mut InferenceConfig, counts: &SegmentCounts) -> Result<()> {
    match counts {
        SegmentCounts::Uniform(n) => cfg.n_per_layer = cfg.layers.iter().map(|&l| (l, *n)).collect(),
        SegmentCounts::PerLayer(map) => {
            for (layer, &n) in map {
                let layer: u32 = layer.parse().with_context(|| format!("bad layer {layer:?} in segment counts"))?;
                cfg.n_per_layer.insert(layer, n);
            }
        }
    }
    Ok(())
}

fn preset_config(p: Preset) -> InferenceConfig {
    match p {
        Preset::Default => InferenceConfig::default(),
        Preset::ReadSpeech => InferenceConfig::read_speech(),
        Preset::CountingSpeech => InferenceConfig::counting_speech(),
    }
}

/// Merges preset, file and flags (flags win) into a validated configuration.
pub fn resolve(file: &FileConfig, flags: &InferenceArgs, seed: Option<u64>) -> Result<InferenceConfig> {
    let mut cfg = preset_config(flags.preset.or(file.preset).unwrap_or(Preset::Default));
    let layers = flags.layers.clone().or_else(|| file.layers.clone());
    if let Some(layers) = layers {
        // Layers without an explicit count inherit the preset's value for layer 3.
        let fallback = cfg.n_per_layer.values().next().copied().unwrap_or(2);
        cfg.n_per_layer = layers
            .iter()
            .map(|&l| (l, cfg.n_per_layer.get(&l).copied().unwrap_or(fallback)))
            .collect();
        cfg.layers = layers;
    }
    if let Some(n) = &file.n {
        apply_counts(&mut cfg, n)?;
    }
    if let Some(n) = &flags.n {
        apply_counts(&mut cfg, n)?;
    }
    if let Some(k) = flags.k.or(file.k) {
        cfg.k = k;
    }
    if let Some(r) = flags.refinement.or(file.refinement) {
        cfg.refinement = r;
    }
    if let Some(p) = flags.paths.as_ref().or(file.paths.as_ref()) {
        cfg.paths = p.parse::<RetrievalPaths>().map_err(anyhow::Error::msg)?;
    }
    if let Some(t) = flags.threshold.or(file.threshold) {
        cfg.threshold = t;
    }
    cfg.exclude_self = flags.exclude_self || file.exclude_self.unwrap_or(false);
    if let Some(c) = flags.combination.or(file.combination) {
        cfg.combination = c;
    }
    if let Some(s) = seed.or(file.seed) {
        cfg.seed = s;
    }
    if let Err(e) = cfg.validate() {
        bail!("{e}");
    }
    Ok(cfg)
}

/// Report-header settings; excludes anything that must not change outputs (jobs).
pub fn describe(cfg: &InferenceConfig) -> Vec<(String, String)> {
    let join = |v: Vec<String>| v.join(" ");
    vec![
        ("layers".into(), join(cfg.layers.iter().map(u32::to_string).collect())),
        (
            "n".into(),
            join(cfg.n_per_layer.iter().filter(|(l, _)| cfg.layers.contains(l)).map(|(l, n)| format!("{l}:{n}")).collect()),
        ),
        ("k".into(), cfg.k.to_string()),
        ("refinement".into(), cfg.refinement.as_str().into()),
        ("paths".into(), cfg.paths.name()),
        ("threshold".into(), cfg.threshold.to_string()),
        ("exclude_self".into(), cfg.exclude_self.to_string()),
        ("combination".into(), cfg.combination.as_str().into()),
    ]
}
