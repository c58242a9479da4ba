//! Run configuration: one flat table of optional settings. Every key can be
//! given in a TOML file (`--config`) or as a `--kebab-case` flag; flags win
//! over the file, the file wins over the defaults noted on each field.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // --- global ---
    /// Master seed for sampling, splitting, shuffling and initialization [0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it [all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Manifest file that every successful command appends to [scriptcausal-runs.log]
    #[arg(long, global = true)]
    pub run_log: Option<PathBuf>,

    // --- paths ---
    /// Raw chain file to ingest
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Chain corpus (one JSON chain per line)
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Development corpus for early stopping
    #[arg(long, global = true)]
    pub dev_corpus: Option<PathBuf>,
    /// Event vocabulary TSV
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    /// Text token vocabulary
    #[arg(long, global = true)]
    pub tokens: Option<PathBuf>,
    /// Skip-bigram counts TSV
    #[arg(long, global = true)]
    pub counts: Option<PathBuf>,
    /// Event LM model file
    #[arg(long, global = true)]
    pub lm: Option<PathBuf>,
    /// Conditional model file
    #[arg(long, global = true)]
    pub cond: Option<PathBuf>,
    /// Intervention table file
    #[arg(long, global = true)]
    pub table: Option<PathBuf>,
    /// Filled judgement sheet
    #[arg(long, global = true)]
    pub scores: Option<PathBuf>,
    /// Completion contexts, one chain of event keys per line
    #[arg(long, global = true)]
    pub contexts: Option<PathBuf>,
    /// Emissions TSV (`system<TAB>event`, in task order)
    #[arg(long, global = true)]
    pub emissions: Option<PathBuf>,
    /// Primary output path (a directory for `split`)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Secondary TSV output (table export, paired scores)
    #[arg(long, global = true)]
    pub tsv_out: Option<PathBuf>,

    // --- corpus ---
    /// Drop non-factual events on ingest [true]
    #[arg(long, global = true)]
    pub factual_only: Option<bool>,
    /// Split proportions [0.9,0.05,0.05]
    #[arg(long, global = true, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    /// Minimum event count to enter the vocabulary [10]
    #[arg(long, global = true)]
    pub min_count: Option<u64>,
    /// Minimum token count to enter the token vocabulary [1]
    #[arg(long, global = true)]
    pub token_min_count: Option<u64>,

    // --- PMI ---
    /// Skip-bigram window: pairs (i, j) with i < j ≤ i + window [2]
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// Count pairs of identical events [true]
    #[arg(long, global = true)]
    pub self_pairs: Option<bool>,
    /// Apply the low-count discount to PMI [true]
    #[arg(long, global = true)]
    pub discounted: Option<bool>,

    // --- models ---
    /// LM embedding size [300]
    #[arg(long, global = true)]
    pub lm_embed_dim: Option<usize>,
    /// LM hidden size [512]
    #[arg(long, global = true)]
    pub lm_hidden_dim: Option<usize>,
    /// LM GRU layers [2]
    #[arg(long, global = true)]
    pub lm_layers: Option<usize>,
    /// LM dropout on embeddings and top-layer outputs [0.1]
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    /// LM batch size [64]
    #[arg(long, global = true)]
    pub lm_batch_size: Option<usize>,
    /// Conditional model event embedding and text size [300]
    #[arg(long, global = true)]
    pub embed_dim: Option<usize>,
    /// Conditional model GRU size [300]
    #[arg(long, global = true)]
    pub hidden_dim: Option<usize>,
    /// Text encoder, `mean` or `cnn` [mean]
    #[arg(long, global = true)]
    pub text_mode: Option<String>,
    /// Lowest rating admitting an out-of-text candidate [3]
    #[arg(long, global = true)]
    pub oot_threshold: Option<u8>,
    /// Adam learning rate [0.001]
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Finetuning learning rate [0.00001]
    #[arg(long, global = true)]
    pub finetune_lr: Option<f64>,
    /// Conditional model batch size [512]
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// Global gradient-norm clip [10]
    #[arg(long, global = true)]
    pub clip_norm: Option<f64>,
    /// Epochs without dev improvement before stopping [3]
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    /// Epoch limit [50]
    #[arg(long, global = true)]
    pub max_epochs: Option<usize>,
    /// Learning rate multiplier applied after each epoch [1]
    #[arg(long, global = true)]
    pub lr_decay: Option<f64>,

    // --- causal ---
    /// Contexts averaged per intervention [2000]
    #[arg(long, global = true)]
    pub adjustment_n: Option<usize>,
    /// Event key for `score`: the intervened (earlier) event
    #[arg(long, global = true)]
    pub prev: Option<String>,
    /// Event key for `score`: the later event
    #[arg(long, global = true)]
    pub next: Option<String>,
    /// List length for `score` without `prev` [10]
    #[arg(long, global = true)]
    pub top: Option<usize>,

    // --- synthetic ---
    /// Built-in fixture name or a fixture TOML path [F-POPCORN]
    #[arg(long, global = true)]
    pub fixture: Option<String>,
    /// Chains to sample [50000]
    #[arg(long, global = true)]
    pub chains: Option<usize>,
    /// Attach the scenario as an out-of-text candidate [false]
    #[arg(long, global = true)]
    pub annotate: Option<bool>,

    // --- evaluation ---
    /// Scorer for `complete`: causal, pmi or lm [causal]
    #[arg(long, global = true)]
    pub system: Option<String>,
    /// Cloze instances [2000]
    #[arg(long, global = true)]
    pub cloze_count: Option<usize>,
    /// Recall list length [100]
    #[arg(long, global = true)]
    pub recall_n: Option<usize>,
    /// Frequency cutoffs [0,50,100,125,150,200,500]
    #[arg(long, global = true, value_delimiter = ',')]
    pub cutoffs: Option<Vec<usize>>,
    /// Sheet targets [150]
    #[arg(long, global = true)]
    pub targets: Option<usize>,
    /// Pairs per system per target [2]
    #[arg(long, global = true)]
    pub per_system: Option<usize>,
    /// Most frequent events never proposed [20]
    #[arg(long, global = true)]
    pub exclude_top: Option<usize>,

    // --- gradcheck ---
    /// Model checked by `gradcheck`: lm or cond [cond]
    #[arg(long, global = true)]
    pub model_kind: Option<String>,
    /// Add the out-of-text projection to the checked conditional model [false]
    #[arg(long, global = true)]
    pub with_oot: Option<bool>,
    /// Finite-difference step [0.00001]
    #[arg(long, global = true)]
    pub eps: Option<f64>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow!(ConfigError(format!("config {}: {e}", path.display()))))
    }

    /// Settings from `self` override those of `base`.
    pub fn over(self, base: RunConfig) -> RunConfig {
        let top = serde_json::to_value(&self).expect("config serializes");
        let mut merged = serde_json::to_value(&base).expect("config serializes");
        let (serde_json::Value::Object(top), serde_json::Value::Object(m)) = (top, &mut merged) else {
            unreachable!("config is a struct")
        };
        for (k, v) in top {
            if !v.is_null() {
                m.insert(k, v);
            }
        }
        serde_json::from_value(merged).expect("merged config deserializes")
    }

    /// Hex SHA-256 of the resolved settings.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// A configuration problem; reported with exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(ConfigError(msg.into()))
}

/// A required setting, named in the error when absent.
pub fn need<'a, T>(value: &'a Option<T>, field: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| config_error(format!("missing required setting `{field}`")))
}

/// A required input path that must already exist.
pub fn input<'a>(value: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    let p = need(value, field)?;
    if !p.exists() {
        return Err(config_error(format!("`{field}` path {} does not exist", p.display())));
    }
    Ok(p)
}

/// An optional input path that must exist when given.
pub fn maybe_input<'a>(value: &'a Option<PathBuf>, field: &str) -> Result<Option<&'a Path>> {
    match value {
        Some(_) => input(value, field).map(Some),
        None => Ok(None),
    }
}

/// A required output path whose parent directory exists.
pub fn output<'a>(value: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    let p = need(value, field)?;
    if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        if !parent.is_dir() {
            return Err(config_error(format!(
                "`{field}` directory {} does not exist",
                parent.display()
            )));
        }
    }
    Ok(p)
}

pub fn positive(value: usize, field: &str) -> Result<usize> {
    if value == 0 {
        bail!(ConfigError(format!("`{field}` must be positive")));
    }
    Ok(value)
}
