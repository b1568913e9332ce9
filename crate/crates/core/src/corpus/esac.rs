//! Reader for the subset of the EsAC encoding used by the Essen collection.
//!
//! A record is a run of bracketed fields, `CUT[...]`, `KEY[id unit tonic meter]`
//! and `MEL[... //]`. Inside `MEL`, every text line is one phrase and
//! whitespace separates bars. Tokens are `[-+]*` octave marks, a degree digit
//! (`0` is a rest), optional `b`/`#`, then `_` and `.` duration modifiers.

use serde::{Deserialize, Serialize};

use super::{frames_per_bar, NoteEvent, Song, TimeSignature, DEFAULT_ALPHA};

const MAJOR_SCALE: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];

/// How `_` extends a token's duration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DurationRule {
    /// Each `_` adds one base unit.
    #[default]
    Additive,
    /// Each `_` doubles the duration, as in the original EsAC files.
    Doubling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EsacOptions {
    pub alpha: u32,
    pub durations: DurationRule,
}

impl Default for EsacOptions {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            durations: DurationRule::Additive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reject {
    pub id: String,
    pub reason: String,
}

/// Result of ingesting a batch of records: the songs that parsed and the
/// records that did not.
#[derive(Clone, Debug, Default)]
pub struct Ingest {
    pub songs: Vec<Song>,
    pub rejects: Vec<Reject>,
}

pub fn parse_esac(text: &str) -> Ingest {
    parse_esac_with(text, &EsacOptions::default())
}

pub fn parse_esac_with(text: &str, opts: &EsacOptions) -> Ingest {
    let mut out = Ingest::default();
    for (n, record) in records(text).into_iter().enumerate() {
        let id = record
            .key
            .and_then(|k| k.split_whitespace().next())
            .map(str::to_string)
            .or_else(|| record.cut.map(|c| c.trim().to_string()))
            .unwrap_or_else(|| format!("record#{}", n + 1));
        match parse_record(&id, &record, opts) {
            Ok(song) => out.songs.push(song),
            Err(reason) => out.rejects.push(Reject { id, reason }),
        }
    }
    out
}

#[derive(Default)]
struct RawRecord<'a> {
    cut: Option<&'a str>,
    key: Option<&'a str>,
    mel: Option<&'a str>,
}

impl RawRecord<'_> {
    fn is_empty(&self) -> bool {
        self.cut.is_none() && self.key.is_none() && self.mel.is_none()
    }
}

/// Split the text into records by scanning `NAME[...]` fields at line starts.
fn records(text: &str) -> Vec<RawRecord<'_>> {
    let mut out = Vec::new();
    let mut current = RawRecord::default();
    let mut pos = 0;
    while pos < text.len() {
        let line_end = text[pos..].find('\n').map_or(text.len(), |i| pos + i);
        let line = &text[pos..line_end];
        let indent = line.len() - line.trim_start().len();
        let trimmed = line.trim_start();
        let name_len = trimmed.bytes().take_while(u8::is_ascii_uppercase).count();
        if name_len == 0 || !trimmed[name_len..].starts_with('[') {
            pos = line_end + 1;
            continue;
        }
        let name = &trimmed[..name_len];
        let body_start = pos + indent + name_len + 1;
        let body_end = text[body_start..]
            .find(']')
            .map_or(text.len(), |i| body_start + i);
        let body = &text[body_start..body_end];
        match name {
            "CUT" | "KEY" => {
                let seen = if name == "CUT" {
                    current.cut.is_some() || current.key.is_some()
                } else {
                    current.key.is_some()
                };
                if seen || current.mel.is_some() {
                    out.push(std::mem::take(&mut current));
                }
                if name == "CUT" {
                    current.cut = Some(body);
                } else {
                    current.key = Some(body);
                }
            }
            "MEL" => {
                if current.mel.is_some() {
                    out.push(std::mem::take(&mut current));
                }
                current.mel = Some(body);
                out.push(std::mem::take(&mut current));
            }
            _ => {}
        }
        pos = text[body_end..]
            .find('\n')
            .map_or(text.len(), |i| body_end + i + 1);
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn parse_tonic(s: &str) -> Result<u8, String> {
    let mut chars = s.chars();
    let letter = chars.next().ok_or("empty tonic")?;
    let base: i32 = match letter.to_ascii_uppercase() {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        'B' => 11,
        _ => return Err(format!("unknown tonic {s:?}")),
    };
    let mut pc = base;
    for c in chars {
        match c {
            'b' => pc -= 1,
            '#' => pc += 1,
            _ => return Err(format!("unknown tonic {s:?}")),
        }
    }
    Ok(pc.rem_euclid(12) as u8)
}

struct Event {
    /// Exact onset and length in frames before quantization.
    start: f64,
    len: f64,
    pitch: Option<u8>,
    line: usize,
    group: usize,
}

fn parse_record(id: &str, rec: &RawRecord<'_>, opts: &EsacOptions) -> Result<Song, String> {
    let key = rec.key.ok_or("missing KEY field")?;
    let mel = rec.mel.ok_or("missing MEL field")?;
    let fields: Vec<&str> = key.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(format!("KEY field {key:?} needs id, unit, tonic and meter"));
    }
    let unit: u32 = fields[1]
        .parse()
        .ok()
        .filter(|u| *u > 0)
        .ok_or_else(|| format!("bad base unit {:?}", fields[1]))?;
    let tonic = parse_tonic(fields[2])?;
    let meter_text = fields[3..].join(" ");
    if meter_text.to_ascii_uppercase().starts_with("FREI") {
        return Err(format!("free meter {meter_text:?}"));
    }
    let time_signature: TimeSignature = meter_text.parse()?;
    if !(time_signature.numerator * opts.alpha).is_multiple_of(time_signature.denominator) {
        return Err(format!("meter {time_signature} does not fit a grid of {}", opts.alpha));
    }

    let mel = mel.split("//").next().unwrap_or_default();
    let frames_per_unit = opts.alpha as f64 / unit as f64;
    let tonic_pitch = 60 + tonic as i32;
    let mut events = Vec::new();
    let mut clock = 0.0;
    let lines = mel.lines().map(str::trim).filter(|l| !l.is_empty());
    for (line_no, line) in lines.enumerate() {
        for (group_no, group) in line.split_whitespace().enumerate() {
            let mut chars = group.chars().peekable();
            while chars.peek().is_some() {
                let mut octave = 0;
                while let Some(&c) = chars.peek() {
                    match c {
                        '-' => octave -= 1,
                        '+' => octave += 1,
                        _ => break,
                    }
                    chars.next();
                }
                let degree = match chars.next() {
                    Some(c @ '0'..='7') => c as i32 - '0' as i32,
                    Some(c) => return Err(format!("unknown degree symbol {c:?} in {group:?}")),
                    None => return Err(format!("dangling octave mark in {group:?}")),
                };
                let mut alter = 0;
                while let Some(&c) = chars.peek() {
                    match c {
                        'b' => alter -= 1,
                        '#' => alter += 1,
                        _ => break,
                    }
                    chars.next();
                }
                let mut underscores = 0;
                let mut dots = 0;
                while let Some(&c) = chars.peek() {
                    match c {
                        '_' if dots == 0 => underscores += 1,
                        '.' => dots += 1,
                        _ => break,
                    }
                    chars.next();
                }
                let mut units = match opts.durations {
                    DurationRule::Additive => 1.0 + underscores as f64,
                    DurationRule::Doubling => 2f64.powi(underscores),
                };
                // each further dot adds half of the previous addition
                units *= 2.0 - 0.5f64.powi(dots);
                let pitch = if degree == 0 {
                    if alter != 0 || octave != 0 {
                        return Err(format!("rest with pitch modifiers in {group:?}"));
                    }
                    None
                } else {
                    let p = tonic_pitch + MAJOR_SCALE[degree as usize - 1] + 12 * octave + alter;
                    if !(0..=127).contains(&p) {
                        return Err(format!("pitch {p} out of MIDI range in {group:?}"));
                    }
                    Some(p as u8)
                };
                let len = units * frames_per_unit;
                events.push(Event {
                    start: clock,
                    len,
                    pitch,
                    line: line_no,
                    group: group_no,
                });
                clock += len;
            }
        }
    }
    if !events.iter().any(|e| e.pitch.is_some()) {
        return Err("melody has no pitched notes".into());
    }

    // Onto the grid: round onsets, keep them strictly increasing.
    let mut onsets: Vec<u32> = Vec::with_capacity(events.len());
    for e in &events {
        let q = e.start.round() as u32;
        let q = match onsets.last() {
            Some(&prev) => q.max(prev + 1),
            None => 0,
        };
        onsets.push(q);
    }
    let last = events.last().expect("non-empty");
    let end = ((last.start + last.len).round() as u32).max(onsets[onsets.len() - 1] + 1);
    let notes: Vec<NoteEvent> = events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let next = onsets.get(i + 1).copied().unwrap_or(end);
            NoteEvent {
                onset: onsets[i],
                duration: next - onsets[i],
                pitch: e.pitch,
            }
        })
        .collect();

    let fpb = frames_per_bar(time_signature, opts.alpha);
    let first_bar = events
        .iter()
        .position(|e| e.line > 0 || e.group > 0)
        .map_or(end, |i| onsets[i]);
    let anacrusis_frames = if first_bar < fpb { first_bar } else { 0 };

    let first_pitched = events.iter().position(|e| e.pitch.is_some()).unwrap_or(0);
    let mut gold_boundaries = Vec::new();
    let mut prev_line = events[0].line;
    for (i, e) in events.iter().enumerate() {
        if e.line != prev_line {
            prev_line = e.line;
            if let Some(j) = (i..events.len())
                .take_while(|&j| events[j].line == e.line)
                .find(|&j| events[j].pitch.is_some())
            {
                if j > first_pitched && gold_boundaries.last() != Some(&j) {
                    gold_boundaries.push(j);
                }
            }
        }
    }

    Ok(Song {
        id: id.to_string(),
        time_signature,
        alpha: opts.alpha,
        notes,
        anacrusis_frames,
        gold_boundaries,
        tonic: Some(tonic),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_PHRASES: &str = "CUT[Test]\nKEY[T0001 08 G 3/4]\nMEL[1_2_3_\n3_2_1_ //]\n";

    #[test]
    fn parses_worked_example() {
        let ingest = parse_esac(TWO_PHRASES);
        assert!(ingest.rejects.is_empty(), "{:?}", ingest.rejects);
        let song = &ingest.songs[0];
        assert_eq!(song.id, "T0001");
        let pitches: Vec<u8> = song.notes.iter().filter_map(|n| n.pitch).collect();
        assert_eq!(pitches, [67, 69, 71, 71, 69, 67]);
        assert!(song.notes.iter().all(|n| n.duration == 4));
        assert_eq!(song.notes[5].onset, 20);
        assert_eq!(song.gold_boundaries, [3]);
        assert_eq!(song.frames_per_bar(), 12);
        assert_eq!(song.anacrusis_frames, 0);
        assert_eq!(song.tonic, Some(7));
    }

    #[test]
    fn single_line_has_no_boundary() {
        let ingest = parse_esac("KEY[X1 08 C 2/4]\nMEL[1_2_3_4_ //]");
        assert_eq!(ingest.songs[0].gold_boundaries, Vec::<usize>::new());
        assert_eq!(ingest.songs[0].phrase_count(), 1);
    }

    #[test]
    fn modifiers_and_rests() {
        let ingest = parse_esac("KEY[X2 16 C 4/4]\nMEL[-5 +1b 3#_. 0___ 7 //]");
        let s = &ingest.songs[0];
        let got: Vec<(u32, u32, Option<u8>)> =
            s.notes.iter().map(|n| (n.onset, n.duration, n.pitch)).collect();
        // sixteenth grid: 1 unit = 1 frame; "3#_." = (1+1)*1.5 = 3
        assert_eq!(
            got,
            [(0, 1, Some(55)), (1, 1, Some(71)), (2, 3, Some(65)), (5, 4, None), (9, 1, Some(71))]
        );
        // first bar is one sixteenth long: a pickup
        assert_eq!(s.anacrusis_frames, 1);
    }

    #[test]
    fn doubling_rule() {
        let opts = EsacOptions {
            durations: DurationRule::Doubling,
            ..Default::default()
        };
        let ingest = parse_esac_with("KEY[X3 16 C 4/4]\nMEL[1__ 1___ //]", &opts);
        let d: Vec<u32> = ingest.songs[0].notes.iter().map(|n| n.duration).collect();
        assert_eq!(d, [4, 8]);
    }

    #[test]
    fn pickup_and_line_boundaries() {
        let text = "KEY[X4 08 C 2/4]\nMEL[5 1_1_ 2_3\n5 1_1_ 2_ //]";
        let s = &parse_esac(text).songs[0];
        assert_eq!(s.anacrusis_frames, 2);
        assert_eq!(s.gold_boundaries, [5]);
    }

    #[test]
    fn line_starting_with_rest_marks_first_pitched_note() {
        let s = &parse_esac("KEY[X5 04 C 4/4]\nMEL[1 2 3 4\n0 5 6 7 1 //]").songs[0];
        assert_eq!(s.gold_boundaries, [5]);
    }

    #[test]
    fn rejects_continue_the_batch() {
        let text = "KEY[BAD1 08 C FREI]\nMEL[1 2 //]\n\
                    KEY[BAD2 08 C 4/4]\nMEL[1 9 //]\n\
                    CUT[no key]\nMEL[1 //]\n\
                    KEY[BAD4 08 C x/4]\nMEL[1 //]\n"
            .to_string()
            + TWO_PHRASES;
        let ingest = parse_esac(&text);
        assert_eq!(ingest.songs.len(), 1);
        let ids: Vec<&str> = ingest.rejects.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["BAD1", "BAD2", "no key", "BAD4"]);
        assert!(ingest.rejects[1].reason.contains("unknown degree"));
        assert!(ingest.rejects[2].reason.contains("missing KEY"));
    }

    #[test]
    fn key_without_mel_is_rejected() {
        let ingest = parse_esac("KEY[K1 08 C 4/4]\nKEY[K2 08 C 4/4]\nMEL[1 //]");
        assert_eq!(ingest.songs.len(), 1);
        assert_eq!(ingest.rejects[0].id, "K1");
        assert!(ingest.rejects[0].reason.contains("missing MEL"));
    }

    #[test]
    fn off_grid_durations_are_quantized() {
        // unit 32 on a 16 grid: half-frame notes collapse to 1-frame minimum
        let s = &parse_esac("KEY[Q1 32 C 4/4]\nMEL[1 2 3_ 4_______ //]").songs[0];
        let onsets: Vec<u32> = s.notes.iter().map(|n| n.onset).collect();
        assert_eq!(onsets, [0, 1, 2, 3]);
        assert!(s.notes.iter().all(|n| n.duration >= 1));
        assert!(s.validate().is_ok());
    }
}
