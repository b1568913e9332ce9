//! Run configuration: every module's settings in one serializable value,
//! loadable from a flat `section.key = value` text file.
//!
//! Each non-blank line of the file that does not start with `#` has the form
//! `dotted.key = value`. The value is read as JSON when it parses as JSON and
//! as a bare string otherwise, so `train.preprocessing = key-normalize` and
//! `grid.learning_rates = [0.001, 0.0003]` are both accepted.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corpus::{DurationRule, MeterGroup, SplitConfig, DEFAULT_ALPHA, DEFAULT_SPLIT_SEED};
use crate::error::{Error, Result};
use crate::eval::{MatchPolicy, RValueVariant, DEFAULT_BUCKET_WIDTH};
use crate::segmenter::SegmenterConfig;
use crate::trainer::{Preprocessing, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub alpha: u32,
    pub durations: DurationRule,
    pub test_fraction: f64,
    pub validation_fraction: f64,
    /// Restrict training and evaluation to these groups; `None` keeps all.
    pub meters: Option<Vec<MeterGroup>>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let split = SplitConfig::default();
        Self {
            alpha: DEFAULT_ALPHA,
            durations: DurationRule::Additive,
            test_fraction: split.test_fraction,
            validation_fraction: split.validation_fraction,
            meters: None,
        }
    }
}

/// Axes of the hyperparameter grid; every combination is trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub max_seq_lens: Vec<usize>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-2, 1e-3, 3e-4],
            batch_sizes: vec![16, 64],
            max_seq_lens: vec![64, 256],
        }
    }
}

impl GridSection {
    pub fn expand(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &batch_size in &self.batch_sizes {
                for &max_seq_len in &self.max_seq_lens {
                    out.push(TrainConfig {
                        learning_rate,
                        batch_size,
                        max_seq_len,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    /// Members per meter group.
    pub k: usize,
    /// Member `m` uses `preprocessings[m % len]` and seed `seed + m / len`.
    pub preprocessings: Vec<Preprocessing>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            k: 5,
            preprocessings: Preprocessing::ALL.to_vec(),
        }
    }
}

/// Candidate loss-normalization weights, chosen per model by validation F.
/// Empty lists keep the segmenter's own `a` and `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub a_values: Vec<f64>,
    pub b_values: Vec<f64>,
}

impl Default for TuneSection {
    fn default() -> Self {
        Self {
            a_values: vec![0.0, 0.5, 1.0, 2.0],
            b_values: vec![0.0, 0.5, 1.0, 2.0],
        }
    }
}

impl TuneSection {
    /// Every `(a, b)` pair on the grid; `base` fills an empty axis.
    pub fn candidates(&self, base: (f64, f64)) -> Vec<(f64, f64)> {
        let or = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
        let (az, bz) = (or(&self.a_values, base.0), or(&self.b_values, base.1));
        az.iter().flat_map(|&a| bz.iter().map(move |&b| (a, b))).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub rvalue_variant: RValueVariant,
    pub bucket_width: usize,
    pub policy: MatchPolicy,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            rvalue_variant: RValueVariant::Rasanen,
            bucket_width: DEFAULT_BUCKET_WIDTH,
            policy: MatchPolicy::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives the split and every model seed.
    pub seed: u64,
    pub corpus: CorpusSection,
    /// Base training settings; the grid and ensemble sections vary them.
    pub train: TrainConfig,
    pub grid: GridSection,
    pub segmenter: SegmenterConfig,
    pub tune: TuneSection,
    pub ensemble: EnsembleSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SPLIT_SEED,
            corpus: CorpusSection::default(),
            train: TrainConfig::default(),
            grid: GridSection::default(),
            segmenter: SegmenterConfig::default(),
            tune: TuneSection::default(),
            ensemble: EnsembleSection::default(),
            eval: EvalSection::default(),
        }
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.train.validate()?;
        self.segmenter.validate()?;
        if self.ensemble.k == 0 {
            return bad("ensemble.k must be positive");
        }
        let pres = &self.ensemble.preprocessings;
        if pres.is_empty() {
            return bad("ensemble.preprocessings must not be empty");
        }
        if pres.iter().enumerate().any(|(i, p)| pres[..i].contains(p)) {
            return bad("ensemble.preprocessings must not repeat");
        }
        let g = &self.grid;
        if g.learning_rates.is_empty() || g.batch_sizes.is_empty() || g.max_seq_lens.is_empty() {
            return bad("every grid axis needs at least one value");
        }
        let t = &self.tune;
        if t.a_values.iter().chain(&t.b_values).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("tune.a_values and tune.b_values must be finite and non-negative");
        }
        if self.corpus.alpha == 0 || self.eval.bucket_width == 0 {
            return bad("corpus.alpha and eval.bucket_width must be positive");
        }
        Ok(())
    }

    pub fn split(&self) -> SplitConfig {
        SplitConfig {
            seed: self.seed,
            test_fraction: self.corpus.test_fraction,
            validation_fraction: self.corpus.validation_fraction,
        }
    }

    /// Set one dotted key, e.g. `train.hidden_dim`.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut root = serde_json::to_value(&*self)?;
        let mut slot = &mut root;
        for part in key.trim().split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        }
        *slot = parse_value(raw.trim());
        *self = serde_json::from_value(root).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Defaults overridden by the lines of a flat config file.
    pub fn from_flat(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_flat(text)?;
        Ok(cfg)
    }

    pub fn apply_flat(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        self.validate()
    }

    /// Every leaf as a `key = value` line; `from_flat` reads it back.
    pub fn to_flat(&self) -> String {
        fn walk(prefix: &str, v: &Value, out: &mut String) {
            match v {
                Value::Object(map) => {
                    for (k, child) in map {
                        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                        walk(&key, child, out);
                    }
                }
                leaf => out.push_str(&format!("{prefix} = {leaf}\n")),
            }
        }
        let mut out = String::new();
        walk("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Embedded in every output artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: RunConfig,
    pub corpus_sha256: String,
    pub tool_version: String,
}

impl Provenance {
    pub fn new(config: &RunConfig, corpus_bytes: &[u8]) -> Self {
        Self {
            config: config.clone(),
            corpus_sha256: sha256_hex(corpus_bytes),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}
