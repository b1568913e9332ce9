//! Four-channel frame encoding of a melody.
//!
//! Each frame carries a MIDI pitch in at most one of four channels:
//! a note burst on a bar start, a burst mid-bar, a continuation on a bar
//! start and a continuation mid-bar. Every other channel holds 128.

use std::fmt::Write;

use crate::corpus::Song;
use crate::error::{Error, Result};

/// Channel value meaning "nothing here".
pub const UNASSIGNED: u8 = 128;
/// Symbols per channel: 128 pitches plus `UNASSIGNED`.
pub const VOCAB: usize = 129;
pub const CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    BurstBarStart = 0,
    BurstMidBar = 1,
    ContinuationBarStart = 2,
    ContinuationMidBar = 3,
}

impl Channel {
    pub fn of(burst: bool, bar_start: bool) -> Self {
        match (burst, bar_start) {
            (true, true) => Channel::BurstBarStart,
            (true, false) => Channel::BurstMidBar,
            (false, true) => Channel::ContinuationBarStart,
            (false, false) => Channel::ContinuationMidBar,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FrameToken(pub [u8; CHANNELS]);

impl FrameToken {
    pub const REST: FrameToken = FrameToken([UNASSIGNED; CHANNELS]);

    pub fn with(channel: Channel, pitch: u8) -> Self {
        let mut t = Self::REST;
        t.0[channel as usize] = pitch;
        t
    }

    /// The single assigned channel, if any.
    pub fn assigned(&self) -> Option<(usize, u8)> {
        self.0
            .iter()
            .enumerate()
            .find(|(_, &v)| v != UNASSIGNED)
            .map(|(c, &v)| (c, v))
    }

    pub fn is_burst(&self) -> bool {
        matches!(self.assigned(), Some((c, _)) if c < 2)
    }

    pub fn is_rest(&self) -> bool {
        *self == Self::REST
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<FrameToken>,
    /// Index of the pitched note sounding in each frame.
    pub note_of_frame: Vec<Option<usize>>,
    /// Onset frame of every note event (rests included), by note index.
    pub onset_frame_of_note: Vec<usize>,
    pub bar_start_flags: Vec<bool>,
    /// Frames per whole note.
    pub alpha: u32,
    pub frames_per_bar: usize,
    pub anacrusis_shift: usize,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Bars the song touches: full bars plus a leading pickup bar.
    pub fn bar_count(&self) -> usize {
        let starts = self.bar_start_flags.iter().filter(|&&b| b).count();
        starts + usize::from(!self.bar_start_flags.first().copied().unwrap_or(true))
    }

    pub fn is_rest_frame(&self, frame: usize) -> bool {
        self.note_of_frame[frame].is_none()
    }

    /// The note sounding at `frame`; for a rest frame, the next note onset at
    /// or after it.
    pub fn frame_to_note(&self, frame: usize) -> Option<usize> {
        if frame >= self.len() {
            return None;
        }
        self.note_of_frame[frame].or_else(|| self.note_of_frame[frame..].iter().find_map(|n| *n))
    }

    /// Read the pitched notes back out of the bursts as (onset, duration, pitch).
    pub fn realign(&self) -> Vec<(u32, u32, u8)> {
        let mut out: Vec<(u32, u32, u8)> = Vec::new();
        for (f, tok) in self.frames.iter().enumerate() {
            match tok.assigned() {
                Some((c, p)) if c < 2 => out.push((f as u32, 1, p)),
                Some((_, p)) => {
                    if let Some(last) = out.last_mut() {
                        if last.2 == p && (last.0 + last.1) as usize == f {
                            last.1 += 1;
                        }
                    }
                }
                None => {}
            }
        }
        out
    }

    /// Debug dump: `frame,ch1,ch2,ch3,ch4,bar_flag,note_idx`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,ch1,ch2,ch3,ch4,bar_flag,note_idx\n");
        for (f, tok) in self.frames.iter().enumerate() {
            let note = self.note_of_frame[f].map_or(String::new(), |n| n.to_string());
            let _ = writeln!(
                out,
                "{f},{},{},{},{},{},{note}",
                tok.0[0],
                tok.0[1],
                tok.0[2],
                tok.0[3],
                u8::from(self.bar_start_flags[f])
            );
        }
        out
    }
}

/// Offset by which the notated bar grid is moved so the first onset falls on
/// a bar start. Equal to the pickup length; zero for songs that begin on the
/// downbeat.
pub fn anacrusis_shift(song: &Song) -> usize {
    song.anacrusis_frames as usize % song.frames_per_bar().max(1) as usize
}

pub fn tokenize(song: &Song, alpha: u32) -> Result<FrameSequence> {
    if song.notes.is_empty() {
        return Err(Error::EmptySong(song.id.clone()));
    }
    if alpha == 0 || !alpha.is_multiple_of(song.alpha) {
        return Err(Error::GridMismatch {
            id: song.id.clone(),
            stored: song.alpha,
            requested: alpha,
        });
    }
    let scale = (alpha / song.alpha) as usize;
    let fpb = song.frames_per_bar() as usize * scale;
    let shift = anacrusis_shift(song) * scale;
    let total = song.len_frames() as usize * scale;

    // Notated downbeats sit at `shift + k*fpb`; moving the grid back by
    // `shift` puts the bar starts at multiples of `fpb` from the first onset.
    let bar_start_flags: Vec<bool> = (0..total).map(|f| f % fpb == 0).collect();
    let mut frames = vec![FrameToken::REST; total];
    let mut note_of_frame = vec![None; total];
    let mut onset_frame_of_note = Vec::with_capacity(song.notes.len());
    for (i, n) in song.notes.iter().enumerate() {
        let start = n.onset as usize * scale;
        let end = n.end() as usize * scale;
        onset_frame_of_note.push(start);
        if let Some(p) = n.pitch {
            for f in start..end {
                frames[f] = FrameToken::with(Channel::of(f == start, bar_start_flags[f]), p);
                note_of_frame[f] = Some(i);
            }
        }
    }
    Ok(FrameSequence {
        frames,
        note_of_frame,
        onset_frame_of_note,
        bar_start_flags,
        alpha,
        frames_per_bar: fpb,
        anacrusis_shift: shift,
    })
}
