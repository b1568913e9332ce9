//! Boundary scoring: per-song precision, recall and F1, macro averages, and
//! the R-value computed from the mean precision and recall.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{MeterGroup, Song};
use crate::error::{Error, Result};
use crate::segmenter::BoundaryPrediction;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RValueVariant {
    /// `1 − (|r1| + |r2|) / 2`, the form the published tables follow.
    #[default]
    Rasanen,
    /// `1 − (|r1| + |r2|)`, without halving the distance.
    PaperEq,
}

impl RValueVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            RValueVariant::Rasanen => "rasanen",
            RValueVariant::PaperEq => "paper-eq",
        }
    }
}

impl fmt::Display for RValueVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RValueVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "rasanen" => Ok(RValueVariant::Rasanen),
            "paper-eq" => Ok(RValueVariant::PaperEq),
            _ => Err(format!("unknown R-value variant {s:?} (rasanen, paper-eq)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// Exact note-index matching. `0/0 = 1`, `x/0 = 0`, and F1 is 0 when P + R = 0.
pub fn prf(pred: &[usize], gold: &[usize]) -> Prf {
    let p: BTreeSet<usize> = pred.iter().copied().collect();
    let g: BTreeSet<usize> = gold.iter().copied().collect();
    let hits = p.intersection(&g).count() as f64;
    let ratio = |den: usize| if den == 0 { if hits == 0.0 { 1.0 } else { 0.0 } } else { hits / den as f64 };
    let precision = ratio(p.len());
    let recall = ratio(g.len());
    let f_score = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f_score,
    }
}

/// `OS = R/P − 1`.
pub fn over_segmentation(precision: f64, recall: f64) -> Result<f64> {
    if precision == 0.0 {
        return Err(Error::ZeroPrecision);
    }
    Ok(recall / precision - 1.0)
}

pub fn r_value(precision: f64, recall: f64, variant: RValueVariant) -> Result<f64> {
    let unit = |x: f64| x > 0.0 && x <= 1.0;
    if !unit(precision) || !unit(recall) {
        return Err(Error::Metric(format!(
            "R-value needs precision and recall in (0, 1], got {precision} and {recall}"
        )));
    }
    let os = over_segmentation(precision, recall)?;
    let r1 = ((1.0 - recall).powi(2) + os * os).sqrt();
    let r2 = (-os + recall - 1.0) / std::f64::consts::SQRT_2;
    Ok(match variant {
        RValueVariant::Rasanen => 1.0 - (r1.abs() + r2.abs()) / 2.0,
        RValueVariant::PaperEq => 1.0 - (r1.abs() + r2.abs()),
    })
}

/// Which note indices take part in matching. Applied to prediction and gold alike.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchPolicy {
    pub exclude_first: bool,
    pub exclude_end: bool,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        Self {
            exclude_first: true,
            exclude_end: true,
        }
    }
}

impl MatchPolicy {
    pub fn filter(&self, indices: &[usize], n_notes: usize) -> Vec<usize> {
        indices
            .iter()
            .copied()
            .filter(|&i| !(self.exclude_first && i == 0) && !(self.exclude_end && i >= n_notes))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SongScore {
    pub id: String,
    pub meter_group: MeterGroup,
    pub pitched_notes: usize,
    pub prf: Prf,
}

/// Fractions in [0, 1]; `r_value` is `None` when mean precision or recall is 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub r_value: Option<f64>,
    pub n_songs: usize,
}

impl Scores {
    pub fn from_songs<'a>(songs: impl IntoIterator<Item = &'a SongScore>, variant: RValueVariant) -> Scores {
        let (mut p, mut r, mut f, mut n) = (0.0, 0.0, 0.0, 0usize);
        for s in songs {
            p += s.prf.precision;
            r += s.prf.recall;
            f += s.prf.f_score;
            n += 1;
        }
        let d = n.max(1) as f64;
        let (precision, recall, f_score) = (p / d, r / d, f / d);
        Scores {
            precision,
            recall,
            f_score,
            r_value: r_value(precision, recall, variant).ok(),
            n_songs: n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// Pitched-note count range `[lo, hi)`.
    pub lo: usize,
    pub hi: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub n_songs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Scores,
    pub per_meter: BTreeMap<MeterGroup, Scores>,
    pub buckets: Vec<Bucket>,
    pub rvalue_variant: RValueVariant,
}

pub const DEFAULT_BUCKET_WIDTH: usize = 10;

/// Per-song scores, in the order of `songs`.
pub fn score_songs(preds: &[BoundaryPrediction], songs: &[Song], policy: MatchPolicy) -> Result<Vec<SongScore>> {
    let by_id: BTreeMap<&str, &BoundaryPrediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let song_ids: BTreeSet<&str> = songs.iter().map(|s| s.id.as_str()).collect();
    let pred_ids: BTreeSet<&str> = by_id.keys().copied().collect();
    if song_ids != pred_ids || by_id.len() != preds.len() {
        let mut diff: Vec<String> = song_ids.symmetric_difference(&pred_ids).map(|s| s.to_string()).collect();
        if diff.is_empty() {
            diff.push("duplicate prediction ids".into());
        }
        return Err(Error::IdMismatch(diff));
    }
    Ok(songs
        .iter()
        .map(|s| {
            let n = s.notes.len();
            let pred = policy.filter(&by_id[s.id.as_str()].note_indices(), n);
            let gold = policy.filter(&s.gold_boundaries, n);
            SongScore {
                id: s.id.clone(),
                meter_group: s.meter_group(),
                pitched_notes: s.pitched_count(),
                prf: prf(&pred, &gold),
            }
        })
        .collect())
}

pub fn report(scores: &[SongScore], variant: RValueVariant, bucket_width: usize) -> EvalReport {
    let overall = Scores::from_songs(scores, variant);
    let mut per_meter = BTreeMap::new();
    for g in MeterGroup::ALL {
        let in_group: Vec<&SongScore> = scores.iter().filter(|s| s.meter_group == g).collect();
        if !in_group.is_empty() {
            per_meter.insert(g, Scores::from_songs(in_group, variant));
        }
    }
    let width = bucket_width.max(1);
    let mut acc: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for s in scores {
        let e = acc.entry(s.pitched_notes / width).or_default();
        e.0 += s.prf.precision;
        e.1 += s.prf.recall;
        e.2 += 1;
    }
    let buckets = acc
        .into_iter()
        .map(|(k, (p, r, n))| Bucket {
            lo: k * width,
            hi: (k + 1) * width,
            mean_precision: p / n as f64,
            mean_recall: r / n as f64,
            n_songs: n,
        })
        .collect();
    EvalReport {
        overall,
        per_meter,
        buckets,
        rvalue_variant: variant,
    }
}

pub fn evaluate(
    preds: &[BoundaryPrediction],
    songs: &[Song],
    policy: MatchPolicy,
    variant: RValueVariant,
) -> Result<EvalReport> {
    Ok(report(&score_songs(preds, songs, policy)?, variant, DEFAULT_BUCKET_WIDTH))
}

/// Percentage rounded half-up to two decimals.
pub fn pct(x: f64) -> String {
    format!("{:.2}", (x * 10000.0 + 0.5).floor() / 100.0)
}

impl EvalReport {
    pub fn buckets_csv(&self) -> String {
        let mut out = String::from("bucket_lo,bucket_hi,mean_p,mean_r,n\n");
        for b in &self.buckets {
            let _ = writeln!(out, "{},{},{},{},{}", b.lo, b.hi, b.mean_precision, b.mean_recall, b.n_songs);
        }
        out
    }

    /// Plain-text table in percent.
    pub fn table(&self) -> String {
        let mut out = format!("{:<8} {:>7} {:>7} {:>7} {:>7} {:>6}\n", "meter", "P", "R", "F", "R-val", "songs");
        let mut row = |name: &str, s: &Scores| {
            let rv = s.r_value.map_or("-".to_string(), pct);
            let _ = writeln!(
                out,
                "{name:<8} {:>7} {:>7} {:>7} {rv:>7} {:>6}",
                pct(s.precision),
                pct(s.recall),
                pct(s.f_score),
                s.n_songs
            );
        };
        row("all", &self.overall);
        for (g, s) in &self.per_meter {
            row(g.as_str(), s);
        }
        out
    }
}
