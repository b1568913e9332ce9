//! Union vote over the boundary candidates of several models per meter group.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{MeterGroup, Song};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::segmenter::{boundary_budget, pause_boundaries, segment, BoundaryPrediction, SegmenterConfig, Source};
use crate::tokenizer::tokenize;
use crate::trainer::ModelCheckpoint;

/// Which songs a set of members serves: one meter group, or every song.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    Group(MeterGroup),
    All,
}

impl Scope {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scope::Group(g) => g.as_str(),
            Scope::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s.trim() == "all" {
            return Ok(Scope::All);
        }
        s.parse::<MeterGroup>().map(Scope::Group).map_err(Error::Ensemble)
    }

    pub fn meter_group(&self) -> Option<MeterGroup> {
        match self {
            Scope::Group(g) => Some(*g),
            Scope::All => None,
        }
    }

    pub fn contains(&self, group: MeterGroup) -> bool {
        matches!(self, Scope::All) || *self == Scope::Group(group)
    }

    pub fn of(group: Option<MeterGroup>) -> Self {
        group.map_or(Scope::All, Scope::Group)
    }
}

#[derive(Clone, Debug)]
pub struct Member<T> {
    pub checkpoint: ModelCheckpoint<T>,
    pub segmenter: SegmenterConfig,
}

#[derive(Clone, Debug, Default)]
pub struct Ensemble<T> {
    pub members: BTreeMap<Scope, Vec<Member<T>>>,
}

/// Rank the union of the members' boundaries by vote count, then mean score
/// (0 for members that did not vote), then smaller note index, and keep the
/// top `budget`.
pub fn vote(preds: &[BoundaryPrediction], budget: usize) -> Result<BoundaryPrediction> {
    vote_with_forced(preds, budget, &[])
}

/// [`vote`] where the `forced` boundaries are always emitted and do not use
/// up the budget.
pub fn vote_with_forced(preds: &[BoundaryPrediction], budget: usize, forced: &[usize]) -> Result<BoundaryPrediction> {
    let first = preds.first().ok_or_else(|| Error::Ensemble("no member predictions to vote on".into()))?;
    if let Some(p) = preds.iter().find(|p| p.id != first.id) {
        return Err(Error::Ensemble(format!("votes for different songs: {} and {}", first.id, p.id)));
    }
    let k = preds.len() as f64;
    let mut tally: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for p in preds {
        for (&note, &score) in &p.scores {
            let e = tally.entry(note).or_default();
            e.0 += 1;
            e.1 += score;
        }
    }
    let forced: BTreeSet<usize> = forced.iter().copied().collect();
    let mut ranked: Vec<(usize, usize, f64)> = tally
        .iter()
        .filter(|(n, _)| !forced.contains(n))
        .map(|(&n, &(votes, sum))| (n, votes, sum / k))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0)));
    let mut out = BoundaryPrediction::new(&first.id, Source::Ensemble);
    for &(n, _, mean) in ranked.iter().take(budget) {
        out.insert(n, mean);
    }
    for &n in &forced {
        out.insert(n, tally.get(&n).map_or(0.0, |&(_, sum)| sum / k));
    }
    Ok(out)
}

impl<T: Scalar> Ensemble<T> {
    pub fn k(&self, scope: Scope) -> usize {
        self.members.get(&scope).map_or(0, Vec::len)
    }

    /// Members for a song: its own group, else the "other" group, else the global models.
    pub fn members_for(&self, song: &Song) -> Result<&[Member<T>]> {
        [Scope::Group(song.meter_group()), Scope::Group(MeterGroup::Other), Scope::All]
            .iter()
            .find_map(|s| self.members.get(s).filter(|m| !m.is_empty()))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Ensemble(format!("no members for song {} ({})", song.id, song.meter_group())))
    }

    pub fn segment_song(&self, song: &Song) -> Result<BoundaryPrediction> {
        let members = self.members_for(song)?;
        let preds: Vec<BoundaryPrediction> = members
            .iter()
            .map(|m| segment(&m.checkpoint, song, &m.segmenter))
            .collect::<Result<_>>()?;
        let budget = boundary_budget(&tokenize(song, members[0].checkpoint.config.alpha)?);
        let forced = if members.iter().any(|m| m.segmenter.constraints.pause) {
            pause_boundaries(song)
        } else {
            Vec::new()
        };
        vote_with_forced(&preds, budget, &forced)
    }

    /// Predictions in the order of `songs`.
    pub fn segment_corpus(&self, songs: &[Song]) -> Result<Vec<BoundaryPrediction>> {
        if self.members.values().all(Vec::is_empty) {
            return Err(Error::Ensemble("ensemble has no members".into()));
        }
        songs.par_iter().map(|s| self.segment_song(s)).collect()
    }

    /// Manifest for checkpoints already saved at `paths`.
    pub fn manifest(&self, paths: &BTreeMap<Scope, Vec<PathBuf>>) -> Manifest {
        let groups = self
            .members
            .iter()
            .map(|(scope, members)| {
                let entries = members
                    .iter()
                    .zip(&paths[scope])
                    .map(|(m, p)| ManifestMember {
                        checkpoint: p.clone(),
                        segmenter: m.segmenter.clone(),
                    })
                    .collect();
                (scope.as_str().to_string(), entries)
            })
            .collect();
        Manifest {
            format_version: 1,
            groups,
            provenance: None,
        }
    }

    /// Load every checkpoint a manifest lists; relative paths resolve against `base`.
    pub fn from_manifest(manifest: &Manifest, base: &Path) -> Result<Self> {
        let mut members = BTreeMap::new();
        for (name, entries) in &manifest.groups {
            let scope = Scope::parse(name)?;
            let mut list = Vec::new();
            for e in entries {
                let path = base.join(&e.checkpoint);
                let checkpoint = ModelCheckpoint::load(&path)
                    .map_err(|err| Error::Ensemble(format!("{}: {err}", path.display())))?;
                list.push(Member {
                    checkpoint,
                    segmenter: e.segmenter.clone(),
                });
            }
            members.insert(scope, list);
        }
        Ok(Self { members })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestMember {
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub segmenter: SegmenterConfig,
}

/// Checkpoint paths per scope ("4/4", ..., "other", "all") with per-member
/// segmenter settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub groups: BTreeMap<String, Vec<ManifestMember>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<crate::config::Provenance>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?)
    }
}
