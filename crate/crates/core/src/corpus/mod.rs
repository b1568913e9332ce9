//! Songs, meters, preprocessing and the train/validation/test split.

mod canonical;
mod esac;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use canonical::{read_corpus, song_from_json_line, song_to_json_line, write_corpus};
pub use esac::{parse_esac, parse_esac_with, DurationRule, EsacOptions, Ingest, Reject};

/// Default grid: frames per whole note (a sixteenth-note grid).
pub const DEFAULT_ALPHA: u32 = 16;

/// One monophonic event on the frame grid. `pitch == None` is a rest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NoteEvent {
    pub onset: u32,
    pub duration: u32,
    pub pitch: Option<u8>,
}

impl NoteEvent {
    pub fn end(&self) -> u32 {
        self.onset + self.duration
    }

    pub fn is_rest(&self) -> bool {
        self.pitch.is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TimeSignature {
    pub numerator: u32,
    pub denominator: u32,
}

impl TimeSignature {
    pub fn new(numerator: u32, denominator: u32) -> Option<Self> {
        (numerator > 0 && denominator.is_power_of_two()).then_some(Self {
            numerator,
            denominator,
        })
    }

    pub fn group(&self) -> MeterGroup {
        meter_group(*self)
    }
}

impl fmt::Display for TimeSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

impl FromStr for TimeSignature {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (n, d) = s
            .trim()
            .split_once('/')
            .ok_or_else(|| format!("meter {s:?} is not n/d"))?;
        let n: u32 = n.parse().map_err(|_| format!("meter {s:?} is not numeric"))?;
        let d: u32 = d.parse().map_err(|_| format!("meter {s:?} is not numeric"))?;
        TimeSignature::new(n, d).ok_or_else(|| format!("meter {s:?} is not a valid time signature"))
    }
}

/// The six meter classes songs are grouped by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeterGroup {
    #[serde(rename = "4/4")]
    FourFour,
    #[serde(rename = "2/4")]
    TwoFour,
    #[serde(rename = "3/4")]
    ThreeFour,
    #[serde(rename = "6/8")]
    SixEight,
    #[serde(rename = "3/8")]
    ThreeEight,
    #[serde(rename = "other")]
    Other,
}

impl MeterGroup {
    pub const ALL: [MeterGroup; 6] = [
        MeterGroup::FourFour,
        MeterGroup::TwoFour,
        MeterGroup::ThreeFour,
        MeterGroup::SixEight,
        MeterGroup::ThreeEight,
        MeterGroup::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MeterGroup::FourFour => "4/4",
            MeterGroup::TwoFour => "2/4",
            MeterGroup::ThreeFour => "3/4",
            MeterGroup::SixEight => "6/8",
            MeterGroup::ThreeEight => "3/8",
            MeterGroup::Other => "other",
        }
    }
}

impl fmt::Display for MeterGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MeterGroup {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        MeterGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s.trim())
            .ok_or_else(|| format!("unknown meter group {s:?}"))
    }
}

pub fn meter_group(ts: TimeSignature) -> MeterGroup {
    match (ts.numerator, ts.denominator) {
        (4, 4) => MeterGroup::FourFour,
        (2, 4) => MeterGroup::TwoFour,
        (3, 4) => MeterGroup::ThreeFour,
        (6, 8) => MeterGroup::SixEight,
        (3, 8) => MeterGroup::ThreeEight,
        _ => MeterGroup::Other,
    }
}

/// A parsed melody on an `alpha` frames-per-whole-note grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Song {
    pub id: String,
    pub time_signature: TimeSignature,
    /// Frames per whole note.
    pub alpha: u32,
    pub notes: Vec<NoteEvent>,
    /// Length of the pickup: frames by which the first onset precedes the
    /// first notated downbeat.
    pub anacrusis_frames: u32,
    /// Indices of the first note of every phrase but the first, ascending.
    pub gold_boundaries: Vec<usize>,
    /// Pitch class of the tonic, when the source names one.
    pub tonic: Option<u8>,
}

impl Song {
    pub fn frames_per_bar(&self) -> u32 {
        frames_per_bar(self.time_signature, self.alpha)
    }

    pub fn meter_group(&self) -> MeterGroup {
        self.time_signature.group()
    }

    /// Song length in frames.
    pub fn len_frames(&self) -> u32 {
        self.notes.last().map_or(0, NoteEvent::end)
    }

    pub fn pitched_count(&self) -> usize {
        self.notes.iter().filter(|n| !n.is_rest()).count()
    }

    /// Number of phrases implied by the gold annotation.
    pub fn phrase_count(&self) -> usize {
        self.gold_boundaries.len() + 1
    }

    /// Check the structural invariants: sorted, non-overlapping, positive
    /// durations, boundaries inside `1..notes-1`.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut prev_end = 0;
        for (i, n) in self.notes.iter().enumerate() {
            if n.duration == 0 {
                return Err(format!("note {i} has zero duration"));
            }
            if n.onset < prev_end {
                return Err(format!("note {i} overlaps its predecessor"));
            }
            if n.pitch.is_some_and(|p| p > 127) {
                return Err(format!("note {i} pitch out of range"));
            }
            prev_end = n.end();
        }
        let last = self.notes.len().saturating_sub(1);
        let mut prev = 0;
        for &b in &self.gold_boundaries {
            if b == 0 || b > last || b <= prev {
                return Err(format!("boundary {b} out of range or unsorted"));
            }
            prev = b;
        }
        if self.alpha == 0 || !(self.time_signature.numerator * self.alpha).is_multiple_of(self.time_signature.denominator) {
            return Err("grid cannot represent the meter".into());
        }
        Ok(())
    }
}

pub fn frames_per_bar(ts: TimeSignature, alpha: u32) -> u32 {
    (ts.numerator * alpha / ts.denominator).max(1)
}

/// Disjoint partition of song ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub seed: u64,
    pub test_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SPLIT_SEED,
            test_fraction: 0.10,
            validation_fraction: 0.10,
        }
    }
}

pub const DEFAULT_SPLIT_SEED: u64 = 2021;

fn rank_key(salt: &str, seed: u64, id: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    h.finalize().into()
}

/// Deterministic hash-of-id split.
///
/// The test partition depends only on the ids and `test_fraction`, so it is
/// the same for every seed. Validation is `validation_fraction` of the
/// remainder, chosen by a seeded hash ranking.
pub fn split_corpus(songs: &[Song], cfg: &SplitConfig) -> Result<CorpusSplit> {
    if songs.len() < 3 {
        return Err(Error::CorpusTooSmall(songs.len()));
    }
    for f in [cfg.test_fraction, cfg.validation_fraction] {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::Config(format!("split fraction {f} outside [0,1)")));
        }
    }
    let unique: BTreeSet<&str> = songs.iter().map(|s| s.id.as_str()).collect();
    if unique.len() != songs.len() {
        return Err(Error::Config("duplicate song ids in corpus".into()));
    }

    let mut ranked: Vec<(&str, [u8; 32])> = unique
        .iter()
        .map(|id| (*id, rank_key("test", DEFAULT_SPLIT_SEED, id)))
        .collect();
    ranked.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
    let n_test = (cfg.test_fraction * ranked.len() as f64).round() as usize;
    let test: Vec<String> = ranked[..n_test].iter().map(|(id, _)| id.to_string()).collect();

    let mut rest: Vec<(&str, [u8; 32])> = ranked[n_test..]
        .iter()
        .map(|(id, _)| (*id, rank_key("validation", cfg.seed, id)))
        .collect();
    rest.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
    let n_val = (cfg.validation_fraction * rest.len() as f64).round() as usize;
    let validation: Vec<String> = rest[..n_val].iter().map(|(id, _)| id.to_string()).collect();
    let train: Vec<String> = rest[n_val..].iter().map(|(id, _)| id.to_string()).collect();

    let sorted = |mut v: Vec<String>| {
        v.sort();
        v
    };
    Ok(CorpusSplit {
        train: sorted(train),
        validation: sorted(validation),
        test: sorted(test),
    })
}

/// Songs whose id is listed, in the order of `songs`.
pub fn select<'a>(songs: &'a [Song], ids: &[String]) -> Vec<&'a Song> {
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    songs.iter().filter(|s| wanted.contains(s.id.as_str())).collect()
}

pub fn transpose(song: &Song, semitones: i32) -> Result<Song> {
    let mut out = song.clone();
    for (i, n) in out.notes.iter_mut().enumerate() {
        if let Some(p) = n.pitch {
            let moved = p as i32 + semitones;
            if !(0..=127).contains(&moved) {
                return Err(Error::PitchOutOfRange {
                    id: song.id.clone(),
                    note: i,
                    pitch: moved,
                });
            }
            n.pitch = Some(moved as u8);
        }
    }
    out.tonic = song.tonic.map(|t| (t as i32 + semitones).rem_euclid(12) as u8);
    Ok(out)
}

/// Semitone shift that moves `tonic` to C with the smallest magnitude; the
/// tritone tie goes down.
pub fn key_shift(tonic: u8) -> i32 {
    let up = (12 - tonic as i32 % 12) % 12;
    let down = up - 12;
    if up == 0 || up < -down {
        up
    } else {
        down
    }
}

pub fn normalize_key(song: &Song) -> Result<Song> {
    let tonic = song.tonic.ok_or_else(|| Error::UnknownTonic(song.id.clone()))?;
    transpose(song, key_shift(tonic))
}

/// Inclusive range of shifts that keep every pitch of `song` inside 0..=127,
/// intersected with `-limit..=limit`.
pub fn feasible_shifts(song: &Song, limit: i32) -> (i32, i32) {
    let (lo, hi) = song
        .notes
        .iter()
        .filter_map(|n| n.pitch)
        .fold((127u8, 0u8), |(lo, hi), p| (lo.min(p), hi.max(p)));
    if lo > hi {
        return (-limit, limit);
    }
    ((-limit).max(-(lo as i32)), limit.min(127 - hi as i32))
}

/// Fraction of songs in each meter group, in `MeterGroup::ALL` order.
pub fn meter_distribution(songs: &[Song]) -> Vec<(MeterGroup, f64)> {
    let n = songs.len().max(1) as f64;
    MeterGroup::ALL
        .into_iter()
        .map(|g| {
            let count = songs.iter().filter(|s| s.meter_group() == g).count();
            (g, count as f64 / n)
        })
        .collect()
}
