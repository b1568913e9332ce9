//! JSON-lines corpus: one song per line.

use serde::{Deserialize, Serialize};

use super::{NoteEvent, Song, TimeSignature};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    meter: String,
    alpha: u32,
    anacrusis_frames: u32,
    notes: Vec<[i64; 3]>,
    boundaries: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tonic: Option<u8>,
}

pub fn song_to_json_line(song: &Song) -> String {
    let record = Record {
        id: song.id.clone(),
        meter: song.time_signature.to_string(),
        alpha: song.alpha,
        anacrusis_frames: song.anacrusis_frames,
        notes: song
            .notes
            .iter()
            .map(|n| [n.onset as i64, n.duration as i64, n.pitch.map_or(-1, i64::from)])
            .collect(),
        boundaries: song.gold_boundaries.clone(),
        tonic: song.tonic,
    };
    serde_json::to_string(&record).expect("song serializes")
}

pub fn song_from_json_line(line: &str) -> std::result::Result<Song, String> {
    let r: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let time_signature: TimeSignature = r.meter.parse()?;
    let notes = r
        .notes
        .iter()
        .map(|&[onset, duration, pitch]| {
            let onset = u32::try_from(onset).map_err(|_| format!("bad onset {onset}"))?;
            let duration = u32::try_from(duration).map_err(|_| format!("bad duration {duration}"))?;
            let pitch = match pitch {
                -1 => None,
                0..=127 => Some(pitch as u8),
                p => return Err(format!("bad pitch {p}")),
            };
            Ok(NoteEvent { onset, duration, pitch })
        })
        .collect::<std::result::Result<Vec<_>, String>>()?;
    let song = Song {
        id: r.id,
        time_signature,
        alpha: r.alpha,
        notes,
        anacrusis_frames: r.anacrusis_frames,
        gold_boundaries: r.boundaries,
        tonic: r.tonic,
    };
    song.validate()?;
    Ok(song)
}

pub fn write_corpus(songs: &[Song]) -> String {
    let mut out = String::new();
    for s in songs {
        out.push_str(&song_to_json_line(s));
        out.push('\n');
    }
    out
}

pub fn read_corpus(text: &str) -> Result<Vec<Song>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            song_from_json_line(l).map_err(|reason| Error::Canonical { line: i + 1, reason })
        })
        .collect()
}
