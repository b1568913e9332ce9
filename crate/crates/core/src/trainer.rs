//! Training one next-frame model, grid search, and checkpoint persistence.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_key, MeterGroup, Song, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, backward_into, forward_from, frame_losses, nll, AdamState, LstmState, ModelDims, ModelParams,
    TENSOR_NAMES,
};
use crate::scalar::Scalar;
use crate::tokenizer::{tokenize, FrameToken, UNASSIGNED};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Largest transposition, in semitones either way, drawn by augmentation.
pub const TRANSPOSE_RANGE: i32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preprocessing {
    /// Each song is transposed by a fresh random shift every epoch.
    TransposeAugment,
    /// Every song is moved to a C tonic, in training and at inference.
    KeyNormalize,
}

impl Preprocessing {
    pub const ALL: [Preprocessing; 2] = [Preprocessing::TransposeAugment, Preprocessing::KeyNormalize];

    pub fn as_str(&self) -> &'static str {
        match self {
            Preprocessing::TransposeAugment => "transpose-augment",
            Preprocessing::KeyNormalize => "key-normalize",
        }
    }

    /// The song as the model sees it at inference time.
    pub fn apply(&self, song: &Song) -> Song {
        match self {
            Preprocessing::TransposeAugment => song.clone(),
            // Songs without a tonic or too close to the pitch range edge stay put.
            Preprocessing::KeyNormalize => normalize_key(song).unwrap_or_else(|_| song.clone()),
        }
    }
}

impl fmt::Display for Preprocessing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preprocessing {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Preprocessing::ALL
            .into_iter()
            .find(|p| p.as_str() == s.trim())
            .ok_or_else(|| format!("unknown preprocessing {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Truncated windows per optimizer step.
    pub batch_size: usize,
    /// Length of a truncated BPTT window, in frames.
    pub max_seq_len: usize,
    pub preprocessing: Preprocessing,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub alpha: u32,
    /// `None` trains on every meter group.
    pub meter_group: Option<MeterGroup>,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    /// Global gradient norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let dims = ModelDims::default();
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            max_seq_len: 64,
            preprocessing: Preprocessing::TransposeAugment,
            epochs: 50,
            patience: 5,
            seed: 0,
            alpha: DEFAULT_ALPHA,
            meter_group: None,
            embed_dim: dims.embed_dim,
            hidden_dim: dims.hidden_dim,
            dropout: 0.2,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be at least 2");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.alpha == 0 {
            return bad("alpha must be positive");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("embed_dim and hidden_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if matches!(self.clip_norm, Some(c) if c.is_nan() || c <= 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    /// Short label used in file names and logs.
    pub fn tag(&self) -> String {
        let group = self.meter_group.map_or("all".to_string(), |g| g.as_str().replace('/', "-"));
        format!(
            "{group}_{}_lr{}_b{}_s{}_seed{}",
            self.preprocessing, self.learning_rate, self.batch_size, self.max_seq_len, self.seed
        )
    }
}

/// Declared default grid: three learning rates, two batch sizes, two window lengths.
pub fn default_grid(base: &TrainConfig) -> Vec<TrainConfig> {
    let mut grid = Vec::new();
    for lr in [1e-2, 1e-3, 3e-4] {
        for batch_size in [16, 64] {
            for max_seq_len in [64, 256] {
                grid.push(TrainConfig {
                    learning_rate: lr,
                    batch_size,
                    max_seq_len,
                    ..base.clone()
                });
            }
        }
    }
    grid
}

pub fn in_group(song: &Song, group: Option<MeterGroup>) -> bool {
    group.is_none_or(|g| song.meter_group() == g)
}

/// Frames the model trains or predicts on for one song.
pub fn prepare(song: &Song, preprocessing: Preprocessing, alpha: u32) -> Result<Vec<FrameToken>> {
    Ok(tokenize(&preprocessing.apply(song), alpha)?.frames)
}

/// Move every assigned pitch by `k` semitones.
pub fn shift_tokens(frames: &[FrameToken], k: i32) -> Vec<FrameToken> {
    frames
        .iter()
        .map(|t| {
            let mut out = *t;
            for v in out.0.iter_mut().filter(|v| **v != UNASSIGNED) {
                *v = (*v as i32 + k) as u8;
            }
            out
        })
        .collect()
}

fn pitch_span(frames: &[FrameToken]) -> Option<(u8, u8)> {
    frames
        .iter()
        .filter_map(|t| t.assigned().map(|(_, p)| p))
        .fold(None, |acc, p| match acc {
            None => Some((p, p)),
            Some((lo, hi)) => Some((lo.min(p), hi.max(p))),
        })
}

/// Mean per-frame validation NLL (eval mode, whole songs).
pub fn mean_nll<T: Scalar>(params: &ModelParams<T>, seqs: &[Vec<FrameToken>]) -> Result<f64> {
    let per_song: Vec<(f64, usize)> = seqs
        .par_iter()
        .map(|s| frame_losses(params, s).map(|l| (l.iter().map(|x| x.as_f64()).sum::<f64>(), l.len())))
        .collect::<Result<_>>()?;
    let (sum, n) = per_song.iter().fold((0.0, 0), |(s, n), (a, b)| (s + a, n + b));
    Ok(if n == 0 { f64::NAN } else { sum / n as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
    pub seconds: f64,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_nll,val_nll,seconds\n");
    for e in log {
        let _ = writeln!(out, "{},{},{},{:.3}", e.epoch, e.train_nll, e.val_nll, e.seconds);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint<T> {
    pub params: ModelParams<T>,
    pub config: TrainConfig,
    /// Infinite when training diverged before the first usable epoch.
    pub validation_nll: f64,
    pub format_version: u32,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub checkpoint: ModelCheckpoint<T>,
    pub log: Vec<EpochLog>,
    /// The non-finite guard stopped training.
    pub diverged: bool,
}

/// Train on the songs of `cfg.meter_group`, early-stopping on validation NLL.
///
/// Each song is cut into windows of `max_seq_len` frames; the LSTM state runs
/// on across the windows of one song and restarts at zero for the next.
/// Gradients of `batch_size` windows are averaged per predicted frame before
/// one Adam step. When the group has no validation songs the training songs
/// stand in.
pub fn train<T: Scalar>(train: &[Song], validation: &[Song], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let load = |songs: &[Song]| -> Result<Vec<Vec<FrameToken>>> {
        let mut out = Vec::new();
        for s in songs.iter().filter(|s| in_group(s, cfg.meter_group)) {
            let frames = prepare(s, cfg.preprocessing, cfg.alpha)?;
            if frames.len() >= 2 {
                out.push(frames);
            }
        }
        Ok(out)
    };
    let train_seqs = load(train)?;
    if train_seqs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut val_seqs = load(validation)?;
    if val_seqs.is_empty() {
        val_seqs = train_seqs.clone();
    }

    let mut params = ModelParams::<T>::init(cfg.dims(), cfg.dropout, cfg.seed);
    let mut adam = AdamState::new(&params, cfg.learning_rate);
    let mut grads = params.zeros_like();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x2545_f491_4f6c_dd1d));

    let mut best = params.clone();
    let mut best_nll = f64::INFINITY;
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut diverged = false;
    let mut order: Vec<usize> = (0..train_seqs.len()).collect();

    'epochs: for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut loss_frames) = (0.0f64, 0usize);
        let (mut pending_windows, mut pending_frames) = (0usize, 0usize);

        for &i in &order {
            let shifted;
            let seq: &[FrameToken] = match cfg.preprocessing {
                Preprocessing::TransposeAugment => {
                    let (lo, hi) = pitch_span(&train_seqs[i]).unwrap_or((60, 60));
                    let down = TRANSPOSE_RANGE.min(lo as i32);
                    let up = TRANSPOSE_RANGE.min(127 - hi as i32);
                    shifted = shift_tokens(&train_seqs[i], order_rng.gen_range(-down..=up));
                    &shifted
                }
                Preprocessing::KeyNormalize => &train_seqs[i],
            };
            let mut state: Option<LstmState<T>> = None;
            let mut start = 0;
            while start + 1 < seq.len() {
                let end = (start + cfg.max_seq_len).min(seq.len() - 1);
                let fwd = match forward_from(&params, &seq[start..end], state.as_ref(), Some(&mut dropout_rng)) {
                    Ok(f) => f,
                    Err(Error::NonFinite(_)) => {
                        diverged = true;
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                let targets = &seq[start + 1..end + 1];
                loss_sum += nll(&fwd.logits, targets).iter().map(|x| x.as_f64()).sum::<f64>();
                loss_frames += end - start;
                backward_into(&params, &fwd, targets, T::one(), &mut grads);
                pending_windows += 1;
                pending_frames += end - start;
                state = Some(fwd.final_state);
                start = end;
                if pending_windows == cfg.batch_size {
                    if !apply_update(&mut params, &mut grads, &mut adam, pending_frames, cfg.clip_norm) {
                        diverged = true;
                        break 'epochs;
                    }
                    pending_windows = 0;
                    pending_frames = 0;
                }
            }
        }
        if pending_windows > 0 && !apply_update(&mut params, &mut grads, &mut adam, pending_frames, cfg.clip_norm) {
            diverged = true;
            break;
        }

        let val_nll = match mean_nll(&params, &val_seqs) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::NonFinite(_)) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        log.push(EpochLog {
            epoch,
            train_nll: loss_sum / loss_frames.max(1) as f64,
            val_nll,
            seconds: started.elapsed().as_secs_f64(),
        });
        if val_nll < best_nll {
            best_nll = val_nll;
            best = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience {
            break;
        }
    }

    Ok(TrainOutcome {
        checkpoint: ModelCheckpoint {
            params: best,
            config: cfg.clone(),
            validation_nll: best_nll,
            format_version: CHECKPOINT_FORMAT_VERSION,
        },
        log,
        diverged,
    })
}

/// Average, clip, step, reset. Returns false when the gradient is not finite.
fn apply_update<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &mut ModelParams<T>,
    adam: &mut AdamState<T>,
    frames: usize,
    clip_norm: Option<f64>,
) -> bool {
    grads.scale(T::one() / T::lit(frames.max(1) as f64));
    let norm = grads.norm();
    if !norm.is_finite() {
        return false;
    }
    if let Some(c) = clip_norm.map(T::lit) {
        if norm > c {
            grads.scale(c / norm);
        }
    }
    adam_step(params, grads, adam);
    grads.fill_zero();
    params.is_finite()
}

/// One grid cell's result, kept for reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub config: TrainConfig,
    pub validation_nll: f64,
    pub epochs_run: usize,
    pub diverged: bool,
}

#[derive(Clone, Debug)]
pub struct GridWinner<T> {
    pub meter_group: Option<MeterGroup>,
    pub preprocessing: Preprocessing,
    pub best: ModelCheckpoint<T>,
    /// Epoch log of the winning run.
    pub log: Vec<EpochLog>,
    pub trials: Vec<Trial>,
}

/// Lower validation NLL first (non-finite last), then smaller learning rate,
/// batch size and window length.
fn selection_order(a: &TrainConfig, a_nll: f64, b: &TrainConfig, b_nll: f64) -> std::cmp::Ordering {
    let key = |x: f64| if x.is_finite() { x } else { f64::INFINITY };
    key(a_nll)
        .total_cmp(&key(b_nll))
        .then(a.learning_rate.total_cmp(&b.learning_rate))
        .then(a.batch_size.cmp(&b.batch_size))
        .then(a.max_seq_len.cmp(&b.max_seq_len))
}

/// Train every configuration (in parallel) and keep the best per
/// (meter group, preprocessing). Winners come out sorted by that key.
pub fn grid_search<T: Scalar>(train_songs: &[Song], validation: &[Song], grid: &[TrainConfig]) -> Result<Vec<GridWinner<T>>> {
    if grid.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    let outcomes: Vec<TrainOutcome<T>> = grid
        .par_iter()
        .map(|cfg| train::<T>(train_songs, validation, cfg))
        .collect::<Result<_>>()?;

    let mut winners: Vec<GridWinner<T>> = Vec::new();
    for out in outcomes {
        let cfg = out.checkpoint.config.clone();
        let trial = Trial {
            config: cfg.clone(),
            validation_nll: out.checkpoint.validation_nll,
            epochs_run: out.log.len(),
            diverged: out.diverged,
        };
        match winners
            .iter_mut()
            .find(|w| w.meter_group == cfg.meter_group && w.preprocessing == cfg.preprocessing)
        {
            Some(w) => {
                w.trials.push(trial);
                let b = &w.best;
                if selection_order(&cfg, out.checkpoint.validation_nll, &b.config, b.validation_nll).is_lt() {
                    w.best = out.checkpoint;
                    w.log = out.log;
                }
            }
            None => winners.push(GridWinner {
                meter_group: cfg.meter_group,
                preprocessing: cfg.preprocessing,
                best: out.checkpoint,
                log: out.log,
                trials: vec![trial],
            }),
        }
    }
    winners.sort_by_key(|w| (w.meter_group, w.preprocessing));
    Ok(winners)
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    config: TrainConfig,
    dims: ModelDims,
    dropout_rate: f64,
    /// `null` when non-finite.
    validation_nll: Option<f64>,
    tensors: Vec<TensorEntry>,
}

impl<T: Scalar> ModelCheckpoint<T> {
    /// One JSON header line, then the tensors as little-endian blobs in
    /// `TENSOR_NAMES` order. Offsets are bytes from the end of the header line.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let tensors = self
            .params
            .tensors()
            .iter()
            .zip(TENSOR_NAMES)
            .map(|(t, name)| {
                let e = TensorEntry {
                    name: name.to_string(),
                    offset,
                    len: t.len(),
                };
                offset += t.len() * T::BYTES;
                e
            })
            .collect();
        let header = Header {
            format_version: self.format_version,
            dtype: T::DTYPE.to_string(),
            config: self.config.clone(),
            dims: self.params.dims,
            dropout_rate: self.params.dropout_rate,
            validation_nll: self.validation_nll.is_finite().then_some(self.validation_nll),
            tensors,
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.reserve(offset);
        for t in self.params.tensors() {
            for &x in t {
                x.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..nl])?;
        if header.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", header.format_version)));
        }
        if header.dtype != T::DTYPE {
            return Err(bad(format!("stored as {}, requested {}", header.dtype, T::DTYPE)));
        }
        let blob = &bytes[nl + 1..];
        let mut params = ModelParams::<T>::zeros(header.dims, header.dropout_rate);
        if header.tensors.len() != TENSOR_NAMES.len() {
            return Err(bad("wrong tensor count".into()));
        }
        for (entry, (name, dst)) in header
            .tensors
            .iter()
            .zip(TENSOR_NAMES.iter().zip(params.tensors_mut()))
        {
            if entry.name != *name || entry.len != dst.len() {
                return Err(bad(format!("tensor {} does not match the declared dimensions", entry.name)));
            }
            let end = entry.offset + entry.len * T::BYTES;
            let src = blob
                .get(entry.offset..end)
                .ok_or_else(|| bad(format!("tensor {} truncated", entry.name)))?;
            for (d, chunk) in dst.iter_mut().zip(src.chunks_exact(T::BYTES)) {
                *d = T::read_le(chunk);
            }
        }
        Ok(Self {
            params,
            config: header.config,
            validation_nll: header.validation_nll.unwrap_or(f64::INFINITY),
            format_version: header.format_version,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
