//! From per-frame prediction loss to note-level phrase boundaries.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Song;
use crate::error::{Error, Result};
use crate::nn::frame_losses;
use crate::scalar::Scalar;
use crate::tokenizer::{tokenize, FrameSequence};
use crate::trainer::ModelCheckpoint;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constraints {
    pub pause: bool,
    pub bar: bool,
}

impl Constraints {
    pub const NONE: Constraints = Constraints { pause: false, bar: false };
    pub const BOTH: Constraints = Constraints { pause: true, bar: true };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    /// Weight of the loss one frame ahead.
    pub a: f64,
    /// Weight of the loss two frames back.
    pub b: f64,
    /// Leading frames ignored by peak picking; `None` means one bar.
    pub skip_prefix: Option<usize>,
    /// Radius around rests in which peaks are dropped; `None` means a quarter note.
    pub pause_delta: Option<usize>,
    pub constraints: Constraints,
    pub binary_search_iters: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            skip_prefix: None,
            pause_delta: None,
            constraints: Constraints::BOTH,
            binary_search_iters: 32,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b >= 0.0) {
            return Err(Error::Config("a and b must be non-negative".into()));
        }
        if self.binary_search_iters == 0 {
            return Err(Error::Config("binary_search_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn skip_frames(&self, seq: &FrameSequence) -> usize {
        self.skip_prefix.unwrap_or(seq.frames_per_bar)
    }

    pub fn delta_frames(&self, seq: &FrameSequence) -> usize {
        self.pause_delta.unwrap_or((seq.alpha / 4).max(1) as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Model,
    Ensemble,
    PauseRule,
    BarRule,
    #[serde(rename = "bar+pause-rule")]
    BarPauseRule,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Model => "model",
            Source::Ensemble => "ensemble",
            Source::PauseRule => "pause-rule",
            Source::BarRule => "bar-rule",
            Source::BarPauseRule => "bar+pause-rule",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    Pause,
    Bar,
    BarPause,
}

impl Rule {
    pub const ALL: [Rule; 3] = [Rule::Pause, Rule::Bar, Rule::BarPause];

    pub fn as_str(&self) -> &'static str {
        match self {
            Rule::Pause => "pause",
            Rule::Bar => "bar",
            Rule::BarPause => "bar+pause",
        }
    }

    pub fn source(&self) -> Source {
        match self {
            Rule::Pause => Source::PauseRule,
            Rule::Bar => Source::BarRule,
            Rule::BarPause => Source::BarPauseRule,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Rule::ALL
            .into_iter()
            .find(|r| r.as_str() == s.trim())
            .ok_or_else(|| format!("unknown rule {s:?} (pause, bar, bar+pause)"))
    }
}

/// Boundaries of one song as note indices with a score each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPrediction {
    pub id: String,
    pub scores: BTreeMap<usize, f64>,
    pub source: Source,
}

impl BoundaryPrediction {
    pub fn new(id: &str, source: Source) -> Self {
        Self {
            id: id.to_string(),
            scores: BTreeMap::new(),
            source,
        }
    }

    pub fn note_indices(&self) -> Vec<usize> {
        self.scores.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Add a boundary, keeping the larger score on collision.
    pub fn insert(&mut self, note: usize, score: f64) {
        let s = self.scores.entry(note).or_insert(score);
        if score > *s {
            *s = score;
        }
    }

    /// `{"id":..,"boundaries":[..],"scores":[..],"source":..}`
    pub fn to_json_line(&self) -> String {
        let v = serde_json::json!({
            "id": self.id,
            "boundaries": self.note_indices(),
            "scores": self.scores.values().collect::<Vec<_>>(),
            "source": self.source,
        });
        v.to_string()
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            id: String,
            boundaries: Vec<usize>,
            scores: Vec<f64>,
            source: Source,
        }
        let l: Line = serde_json::from_str(line)?;
        if l.boundaries.len() != l.scores.len() {
            return Err(Error::Config(format!("prediction {}: boundaries and scores differ in length", l.id)));
        }
        Ok(Self {
            id: l.id,
            scores: l.boundaries.into_iter().zip(l.scores).collect(),
            source: l.source,
        })
    }
}

pub fn write_predictions(preds: &[BoundaryPrediction]) -> String {
    preds.iter().map(|p| p.to_json_line() + "\n").collect()
}

pub fn read_predictions(text: &str) -> Result<Vec<BoundaryPrediction>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(BoundaryPrediction::from_json_line)
        .collect()
}

/// `max(0, a·raw[j+1] + raw[j] − raw[j−1] − b·raw[j−2])`, zero where a
/// neighbour is missing.
pub fn normalize_losses<T: Scalar>(raw: &[T], a: f64, b: f64) -> Vec<T> {
    let (a, b) = (T::lit(a), T::lit(b));
    let n = raw.len();
    (0..n)
        .map(|j| {
            if j < 2 || j + 1 >= n {
                T::zero()
            } else {
                (a * raw[j + 1] + raw[j] - raw[j - 1] - b * raw[j - 2]).max(T::zero())
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossCurve<T> {
    /// `raw[j]` is the loss of predicting frame `j`; frame 0 has no prediction and holds 0.
    pub raw: Vec<T>,
    pub normalized: Vec<T>,
    pub skip_prefix_frames: usize,
}

impl<T: Scalar> LossCurve<T> {
    /// The same raw losses normalized with other weights.
    pub fn renormalized(&self, a: f64, b: f64) -> Self {
        let mut normalized = normalize_losses(&self.raw, a, b);
        let skip = self.skip_prefix_frames.min(normalized.len());
        normalized[..skip].iter_mut().for_each(|x| *x = T::zero());
        Self {
            raw: self.raw.clone(),
            normalized,
            skip_prefix_frames: self.skip_prefix_frames,
        }
    }
}

/// Eval-mode losses over `seq`, normalized, with the first `skip_prefix`
/// normalized values zeroed.
pub fn loss_curve<T: Scalar>(
    ckpt: &ModelCheckpoint<T>,
    seq: &FrameSequence,
    cfg: &SegmenterConfig,
) -> Result<LossCurve<T>> {
    let skip = cfg.skip_frames(seq);
    if seq.len() <= skip + 4 {
        return Err(Error::SequenceTooShort {
            len: seq.len(),
            needed: skip + 4,
        });
    }
    let mut raw = Vec::with_capacity(seq.len());
    raw.push(T::zero());
    raw.extend(frame_losses(&ckpt.params, &seq.frames)?);
    let mut normalized = normalize_losses(&raw, cfg.a, cfg.b);
    normalized[..skip].iter_mut().for_each(|x| *x = T::zero());
    Ok(LossCurve {
        raw,
        normalized,
        skip_prefix_frames: skip,
    })
}

/// Index ends the plateau starting at `i` if `i` opens a strict local
/// maximum (plateaus are represented by their leftmost index).
fn plateau_end<T: Scalar>(curve: &[T], i: usize) -> Option<usize> {
    if i == 0 || i + 1 >= curve.len() || curve[i - 1] >= curve[i] {
        return None;
    }
    let mut k = i;
    while k + 1 < curve.len() && curve[k + 1] == curve[i] {
        k += 1;
    }
    (k + 1 < curve.len() && curve[k + 1] < curve[i]).then_some(k)
}

pub fn is_peak<T: Scalar>(curve: &[T], i: usize) -> bool {
    plateau_end(curve, i).is_some()
}

/// Topographic prominence of the peak at `peak`.
pub fn prominence<T: Scalar>(curve: &[T], peak: usize) -> Result<T> {
    if !is_peak(curve, peak) {
        return Err(Error::NotAPeak(peak));
    }
    let v = curve[peak];
    let mut left = v;
    for &x in curve[..peak].iter().rev() {
        if x > v {
            break;
        }
        left = left.min(x);
    }
    let mut right = v;
    for &x in &curve[peak + 1..] {
        if x > v {
            break;
        }
        right = right.min(x);
    }
    Ok(v - left.max(right))
}

/// Every peak at or after `skip` with its prominence.
pub fn peaks_with_prominence<T: Scalar>(curve: &[T], skip: usize) -> Vec<(usize, T)> {
    (skip.max(1)..curve.len())
        .filter(|&i| is_peak(curve, i))
        .map(|i| (i, prominence(curve, i).expect("index is a peak")))
        .collect()
}

/// Peaks at or after `skip` whose prominence is at least `delta`.
pub fn find_peaks<T: Scalar>(curve: &[T], delta: T, skip: usize) -> Vec<usize> {
    peaks_with_prominence(curve, skip)
        .into_iter()
        .filter(|&(_, p)| p >= delta)
        .map(|(i, _)| i)
        .collect()
}

/// Bisect δ in `[0, max(curve)]` for the smallest tested value that leaves at
/// most `max_peaks` peaks. Raising δ only removes peaks.
pub fn search_prominence<T: Scalar>(curve: &[T], max_peaks: usize, iters: usize) -> (T, Vec<usize>) {
    search_prominence_where(curve, 0, max_peaks, iters, |_| true)
}

/// [`search_prominence`] counting only peaks that pass `eligible`.
pub fn search_prominence_where<T: Scalar>(
    curve: &[T],
    skip: usize,
    max_peaks: usize,
    iters: usize,
    eligible: impl Fn(usize) -> bool,
) -> (T, Vec<usize>) {
    let cands: Vec<(usize, T)> = peaks_with_prominence(curve, skip)
        .into_iter()
        .filter(|&(i, _)| eligible(i))
        .collect();
    let pick = |delta: T| -> Vec<usize> { cands.iter().filter(|&&(_, p)| p >= delta).map(|&(i, _)| i).collect() };
    let count = |delta: T| cands.iter().filter(|&&(_, p)| p >= delta).count();
    if count(T::zero()) <= max_peaks {
        return (T::zero(), pick(T::zero()));
    }
    let top = curve.iter().copied().fold(T::zero(), T::max);
    // Just above the maximum no peak survives.
    let mut hi = top + top * T::epsilon() * T::lit(4.0) + T::min_positive_value();
    let mut lo = T::zero();
    for _ in 0..iters {
        let mid = lo + (hi - lo) / T::lit(2.0);
        if count(mid) <= max_peaks {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (hi, pick(hi))
}

/// Index of the first pitched note; boundaries never fall at or before it.
fn first_pitched(song: &Song) -> usize {
    song.notes.iter().position(|n| !n.is_rest()).unwrap_or(0)
}

/// The first pitched note after every rest.
pub fn pause_boundaries(song: &Song) -> Vec<usize> {
    let first = first_pitched(song);
    let mut out = Vec::new();
    let mut after_rest = false;
    for (i, n) in song.notes.iter().enumerate() {
        if n.is_rest() {
            after_rest = true;
        } else {
            if after_rest && i > first {
                out.push(i);
            }
            after_rest = false;
        }
    }
    out
}

/// The first pitched note starting in every bar but the first.
pub fn bar_boundaries(song: &Song, seq: &FrameSequence) -> Vec<usize> {
    let first = first_pitched(song);
    let fpb = seq.frames_per_bar;
    let mut out = Vec::new();
    for (f, _) in seq.bar_start_flags.iter().enumerate().filter(|(f, &b)| b && *f > 0) {
        let hit = seq
            .onset_frame_of_note
            .iter()
            .enumerate()
            .find(|&(i, &on)| on >= f && on < f + fpb && !song.notes[i].is_rest());
        if let Some((i, _)) = hit {
            if i > first && out.last() != Some(&i) {
                out.push(i);
            }
        }
    }
    out
}

pub fn rule_segment(song: &Song, rule: Rule, alpha: u32) -> Result<BoundaryPrediction> {
    let mut pred = BoundaryPrediction::new(&song.id, rule.source());
    if matches!(rule, Rule::Pause | Rule::BarPause) {
        pause_boundaries(song).into_iter().for_each(|i| pred.insert(i, 1.0));
    }
    if matches!(rule, Rule::Bar | Rule::BarPause) {
        let seq = tokenize(song, alpha)?;
        bar_boundaries(song, &seq).into_iter().for_each(|i| pred.insert(i, 1.0));
    }
    Ok(pred)
}

/// Whether a model peak at `frame` survives the active constraints. Under
/// Bar the frame must be a bar start where a note begins, so the boundary
/// note's onset is the bar start itself.
pub fn eligible_frame(seq: &FrameSequence, rest_frames: &[usize], delta: usize, c: Constraints, frame: usize) -> bool {
    if c.bar && !(seq.bar_start_flags[frame] && seq.frames[frame].is_burst()) {
        return false;
    }
    if c.pause {
        let lo = rest_frames.partition_point(|&r| r + delta < frame);
        if rest_frames.get(lo).is_some_and(|&r| r <= frame + delta) {
            return false;
        }
    }
    true
}

fn rest_frames(seq: &FrameSequence) -> Vec<usize> {
    (0..seq.len()).filter(|&f| seq.is_rest_frame(f)).collect()
}

/// Filter frame peaks by the constraints, map them to notes, and add the
/// forced boundaries after rests when Pause is active.
pub fn apply_constraints<T: Scalar>(
    peaks: &[usize],
    normalized: &[T],
    song: &Song,
    seq: &FrameSequence,
    cfg: &SegmenterConfig,
) -> BoundaryPrediction {
    let rests = rest_frames(seq);
    let delta = cfg.delta_frames(seq);
    let first = first_pitched(song);
    let mut pred = BoundaryPrediction::new(&song.id, Source::Model);
    for &p in peaks {
        if !eligible_frame(seq, &rests, delta, cfg.constraints, p) {
            continue;
        }
        if let Some(note) = seq.frame_to_note(p).filter(|&n| n > first) {
            pred.insert(note, normalized[p].as_f64());
        }
    }
    if cfg.constraints.pause {
        for note in pause_boundaries(song) {
            let onset = seq.onset_frame_of_note[note];
            pred.insert(note, normalized.get(onset).map_or(0.0, |x| x.as_f64()));
        }
    }
    pred
}

/// At most `floor(bars / 2)` model boundaries.
pub fn boundary_budget(seq: &FrameSequence) -> usize {
    seq.bar_count() / 2
}

/// The model's normalized curve and the frame sequence it was computed on.
/// Songs too short for the skipped prefix get an all-zero curve.
pub fn song_curve<T: Scalar>(
    ckpt: &ModelCheckpoint<T>,
    song: &Song,
    cfg: &SegmenterConfig,
) -> Result<(FrameSequence, LossCurve<T>)> {
    let prepared = ckpt.config.preprocessing.apply(song);
    let seq = tokenize(&prepared, ckpt.config.alpha)?;
    let curve = match loss_curve(ckpt, &seq, cfg) {
        Ok(c) => c,
        Err(Error::SequenceTooShort { .. }) => LossCurve {
            raw: vec![T::zero(); seq.len()],
            normalized: vec![T::zero(); seq.len()],
            skip_prefix_frames: seq.len(),
        },
        Err(e) => return Err(e),
    };
    Ok((seq, curve))
}

/// Loss curve, budgeted peak search over the frames the constraints allow,
/// then constraint application.
pub fn segment<T: Scalar>(ckpt: &ModelCheckpoint<T>, song: &Song, cfg: &SegmenterConfig) -> Result<BoundaryPrediction> {
    cfg.validate()?;
    let (seq, curve) = song_curve(ckpt, song, cfg)?;
    Ok(segment_curve(&curve, song, &seq, cfg))
}

pub fn segment_curve<T: Scalar>(
    curve: &LossCurve<T>,
    song: &Song,
    seq: &FrameSequence,
    cfg: &SegmenterConfig,
) -> BoundaryPrediction {
    let rests = rest_frames(seq);
    let delta = cfg.delta_frames(seq);
    let (_, peaks) = search_prominence_where(
        &curve.normalized,
        curve.skip_prefix_frames,
        boundary_budget(seq),
        cfg.binary_search_iters,
        |f| eligible_frame(seq, &rests, delta, cfg.constraints, f),
    );
    apply_constraints(&peaks, &curve.normalized, song, seq, cfg)
}

/// `frame,raw_nll,normalized,bar_flag,is_peak` for one song.
pub fn curve_csv<T: Scalar>(curve: &LossCurve<T>, seq: &FrameSequence, peaks: &[usize]) -> String {
    let mut out = String::from("frame,raw_nll,normalized,bar_flag,is_peak\n");
    for f in 0..curve.raw.len() {
        let _ = writeln!(
            out,
            "{f},{},{},{},{}",
            curve.raw[f],
            curve.normalized[f],
            u8::from(seq.bar_start_flags[f]),
            u8::from(peaks.binary_search(&f).is_ok())
        );
    }
    out
}
